import numpy as np
import pytest

from conftest import random_policy
from ttrl.advantage import AdvantageGroup, compute_advantages
from ttrl.grpo import GrpoConfig, NonFiniteUpdate, apply_update, surrogate_and_grad
from ttrl.policy import PolicyGrad, logprob_and_grad
from ttrl.sampling import sample_group


def make_groups(snapshot, rng, n_groups=3, g=4, zero=False):
    groups = []
    for _ in range(n_groups):
        qid = int(rng.integers(0, snapshot.num_questions))
        responses = sample_group(snapshot, qid, g, 1.0, rng)
        values = np.zeros(g) if zero else rng.standard_normal(g)
        groups.append((responses, AdvantageGroup(values, zero)))
    return groups


def objective(policy, snapshot, reference, groups, cfg):
    return surrogate_and_grad(policy, snapshot, reference, groups, cfg)[0].objective_value


def finite_difference(policy, snapshot, reference, groups, cfg, h=1e-5):
    gf = np.zeros_like(policy.format_logits)
    go = np.zeros_like(policy.option_logits)
    for table, out in ((policy.format_logits, gf), (policy.option_logits, go)):
        for idx in np.ndindex(table.shape):
            old = table[idx]
            table[idx] = old + h
            up = objective(policy, snapshot, reference, groups, cfg)
            table[idx] = old - h
            down = objective(policy, snapshot, reference, groups, cfg)
            table[idx] = old
            out[idx] = (up - down) / (2 * h)
    return gf, go


def near_kink(policy, groups, eps, margin=1e-4):
    from ttrl.policy import token_logprobs_and_grads

    for responses, _ in groups:
        for r in responses:
            logps, _ = token_logprobs_and_grads(policy, r)
            c = np.exp(logps - np.asarray(r.token_logprobs))
            if np.any(np.abs(c - (1 - eps)) < margin) or np.any(np.abs(c - (1 + eps)) < margin):
                return True
    return False


def gradient_instance(rng, beta, perturb):
    """Random (policy, snapshot, groups); ``perturb`` moves the policy off the snapshot."""
    snapshot = random_policy(rng, n_questions=3, k=3, scale=1.0)
    groups = make_groups(snapshot, rng)
    policy = snapshot.copy()
    if perturb:
        # one inner-epoch-style ascent step, large enough for ratios to leave the clip range
        cfg = GrpoConfig(beta=beta)
        _, g = surrogate_and_grad(policy, snapshot, snapshot, groups, cfg)
        policy = apply_update(policy, g, 20.0)
        policy.format_logits += 0.3 * rng.standard_normal(policy.format_logits.shape)
    reference = random_policy(rng, n_questions=3, k=3, scale=1.0)
    return policy, snapshot, reference, groups


def test_ratio_one_identity():
    rng = np.random.default_rng(0)
    snap = random_policy(rng)
    groups = make_groups(snap, rng, n_groups=2)
    rep, grad = surrogate_and_grad(snap, snap, snap, groups, GrpoConfig())
    assert rep.clipped_fraction == 0.0
    expected = np.mean([np.mean(adv.values) for _, adv in groups])
    assert rep.objective_value == pytest.approx(expected, abs=1e-12)
    manual = PolicyGrad.zeros_like(snap)
    for responses, adv in groups:
        for r, a in zip(responses, adv.values):
            _, g = logprob_and_grad(snap, r)
            manual += g.scaled(a / (len(groups) * len(responses) * 3))
    np.testing.assert_allclose(grad.format_logits, manual.format_logits, atol=1e-14)
    np.testing.assert_allclose(grad.option_logits, manual.option_logits, atol=1e-14)


def test_collapsed_groups_give_zero_gradient():
    rng = np.random.default_rng(1)
    snap = random_policy(rng)
    groups = make_groups(snap, rng, zero=True)
    pol = snap.copy()
    pol.format_logits += 0.5
    _, grad = surrogate_and_grad(pol, snap, snap, groups, GrpoConfig(beta=0.0))
    assert not grad.format_logits.any() and not grad.option_logits.any()
    updated = apply_update(pol, grad, 0.7)
    np.testing.assert_array_equal(updated.format_logits, pol.format_logits)
    np.testing.assert_array_equal(updated.option_logits, pol.option_logits)


@pytest.mark.parametrize("beta", [0.0, 0.04])
def test_gradient_matches_finite_differences(beta):
    rng = np.random.default_rng(2 if beta else 3)
    cfg = GrpoConfig(beta=beta)
    checked = clipped = 0
    while checked < 60:
        policy, snapshot, reference, groups = gradient_instance(rng, beta, perturb=checked % 3 != 0)
        if near_kink(policy, groups, cfg.epsilon):
            continue
        rep, grad = surrogate_and_grad(policy, snapshot, reference, groups, cfg)
        gf, go = finite_difference(policy, snapshot, reference, groups, cfg)
        np.testing.assert_allclose(grad.format_logits, gf, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(grad.option_logits, go, rtol=1e-5, atol=1e-9)
        clipped += rep.clipped_fraction > 0
        checked += 1
    assert clipped >= 20


def test_permutation_invariance():
    rng = np.random.default_rng(4)
    policy, snapshot, reference, groups = gradient_instance(rng, 0.04, perturb=True)
    cfg = GrpoConfig(beta=0.04)
    rep, grad = surrogate_and_grad(policy, snapshot, reference, groups, cfg)
    shuffled = []
    for responses, adv in reversed(groups):
        order = rng.permutation(len(responses))
        shuffled.append(([responses[i] for i in order], AdvantageGroup(adv.values[order], adv.collapse_flag)))
    rep2, grad2 = surrogate_and_grad(policy, snapshot, reference, shuffled, cfg)
    assert rep2.objective_value == pytest.approx(rep.objective_value, abs=1e-14)
    np.testing.assert_allclose(grad2.format_logits, grad.format_logits, atol=1e-14)


def test_small_step_does_not_decrease_objective():
    rng = np.random.default_rng(5)
    for _ in range(100):
        beta = float(rng.choice([0.0, 0.04]))
        policy, snapshot, reference, groups = gradient_instance(rng, beta, perturb=bool(rng.integers(2)))
        cfg = GrpoConfig(beta=beta)
        rep, grad = surrogate_and_grad(policy, snapshot, reference, groups, cfg)
        after = objective(apply_update(policy, grad, 1e-4), snapshot, reference, groups, cfg)
        assert after >= rep.objective_value - 1e-12


def test_positive_advantage_response_gains_probability():
    rng = np.random.default_rng(6)
    for _ in range(20):
        snap = random_policy(rng)
        resp = sample_group(snap, 0, 1, 1.0, rng)
        groups = [(resp, AdvantageGroup(np.array([1.0]), False))]
        _, grad = surrogate_and_grad(snap, snap, snap, groups, GrpoConfig())
        before, _ = logprob_and_grad(snap, resp[0])
        after, _ = logprob_and_grad(apply_update(snap, grad, 0.1), resp[0])
        assert after > before


def test_snapshot_and_alignment_errors():
    rng = np.random.default_rng(7)
    snap = random_policy(rng)
    groups = make_groups(snap, rng)
    other = snap.copy(snapshot_id=snap.snapshot_id + 1)
    with pytest.raises(ValueError):
        surrogate_and_grad(snap, other, snap, groups, GrpoConfig())
    bad = [(groups[0][0], AdvantageGroup(np.zeros(2), True))]
    with pytest.raises(ValueError):
        surrogate_and_grad(snap, snap, snap, bad, GrpoConfig())


def test_apply_update_contracts():
    rng = np.random.default_rng(8)
    pol = random_policy(rng)
    zero = PolicyGrad.zeros_like(pol)
    new = apply_update(pol, zero, 0.5)
    assert new.snapshot_id == pol.snapshot_id + 1
    np.testing.assert_array_equal(new.format_logits, pol.format_logits)
    with pytest.raises(ValueError):
        apply_update(pol, zero, 0.0)
    zero.format_logits[0, 0] = np.nan
    with pytest.raises(NonFiniteUpdate):
        apply_update(pol, zero, 0.1)


@pytest.mark.parametrize("kw", [dict(epsilon=0.0), dict(epsilon=1.0), dict(beta=-1.0), dict(learning_rate=0.0), dict(inner_epochs=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        GrpoConfig(**kw)


def test_defaults():
    cfg = GrpoConfig()
    assert cfg.epsilon == 0.2 and cfg.beta == 0.0


def test_unclipped_case_without_perturbation_via_advantages():
    # non-collapsed advantages built through the real advantage path
    rng = np.random.default_rng(9)
    snap = random_policy(rng)
    responses = sample_group(snap, 1, 4, 1.0, rng)
    adv = compute_advantages([2, 1, 1, 0], 0.5, "linear")
    rep, _ = surrogate_and_grad(snap, snap, snap, [(responses, adv)], GrpoConfig())
    assert rep.objective_value == pytest.approx(0.0, abs=1e-12)
