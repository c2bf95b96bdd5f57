"""Clipped group-relative surrogate objective, its exact gradient, and the ascent step."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .advantage import AdvantageGroup
from .policy import (
    SEQ_LEN,
    PolicyGrad,
    PolicyParameters,
    Response,
    kl_per_position,
    kl_position_grads,
    token_logprobs_and_grads,
)


class NonFiniteUpdate(FloatingPointError):
    pass


@dataclass(frozen=True)
class GrpoConfig:
    epsilon: float = 0.2
    beta: float = 0.0
    learning_rate: float = 1.0
    inner_epochs: int = 1
    accumulation_steps: int = 1

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.inner_epochs < 1 or self.accumulation_steps < 1:
            raise ValueError("inner_epochs and accumulation_steps must be >= 1")


@dataclass(frozen=True)
class SurrogateReport:
    objective_value: float
    clipped_fraction: float
    grad_norm: float
    kl: float = 0.0


def surrogate_and_grad(
    policy: PolicyParameters,
    snapshot: PolicyParameters,
    reference: PolicyParameters,
    groups: Sequence[tuple[Sequence[Response], AdvantageGroup]],
    config: GrpoConfig,
) -> tuple[SurrogateReport, PolicyGrad]:
    """Evaluate the objective to maximise and its gradient w.r.t. ``policy``.

    Per token the term is ``min(c*A, clip(c, 1-eps, 1+eps)*A) - beta*KL_t`` with
    ``c = pi(o_t) / pi_old(o_t)``, ``pi_old`` read from the log-probs stored on
    each response. Terms are averaged over tokens, then responses, then groups.
    Where the clipped branch is strictly smaller it is a constant and
    contributes no gradient.
    """
    grad = PolicyGrad.zeros_like(policy)
    if not groups:
        return SurrogateReport(0.0, 0.0, 0.0), grad
    eps, beta = config.epsilon, config.beta
    n_groups = len(groups)
    objective = 0.0
    kl_total = 0.0
    clipped_tokens = 0
    total_tokens = 0
    for responses, adv in groups:
        g = len(responses)
        if g != len(adv.values):
            raise ValueError(f"group of {g} responses paired with {len(adv.values)} advantages")
        group_scale = 1.0 / (n_groups * g)
        for resp, a in zip(responses, adv.values):
            if resp.snapshot_id != snapshot.snapshot_id:
                raise ValueError(
                    f"response from snapshot {resp.snapshot_id}, expected {snapshot.snapshot_id}"
                )
            n_tok = len(resp.tokens)
            logps, rows = token_logprobs_and_grads(policy, resp)
            ratio = np.exp(logps - np.asarray(resp.token_logprobs))
            unclipped = ratio * a
            clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * a
            active = unclipped <= clipped
            objective += group_scale * np.minimum(unclipped, clipped).sum() / n_tok
            clipped_tokens += int(np.count_nonzero(~active))
            total_tokens += n_tok
            coef = np.where(active, a * ratio, 0.0) * (group_scale / n_tok)
            if np.any(coef):
                grad.add_position_grads(resp.question_id, rows * coef[:, None])
        if beta > 0:
            qid = responses[0].question_id
            kl_t = kl_per_position(policy, reference, qid)
            # every response in the group shares the same per-position KL
            objective -= beta * kl_t.sum() / (n_groups * SEQ_LEN)
            kl_total += kl_t.sum() / n_groups
            grad.add_position_grads(qid, kl_position_grads(policy, reference, qid), -beta / (n_groups * SEQ_LEN))
    report = SurrogateReport(
        objective_value=float(objective),
        clipped_fraction=clipped_tokens / total_tokens if total_tokens else 0.0,
        grad_norm=grad.norm(),
        kl=float(kl_total),
    )
    return report, grad


def apply_update(policy: PolicyParameters, gradient: PolicyGrad, learning_rate: float) -> PolicyParameters:
    """Gradient ascent step; returns a new policy with the next snapshot id."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be > 0")
    if gradient.format_logits.shape != policy.format_logits.shape or (
        gradient.option_logits.shape != policy.option_logits.shape
    ):
        raise ValueError("gradient shape does not match policy")
    if not gradient.is_finite():
        raise NonFiniteUpdate("gradient has non-finite entries")
    return PolicyParameters(
        policy.format_logits + learning_rate * gradient.format_logits,
        policy.option_logits + learning_rate * gradient.option_logits,
        snapshot_id=policy.snapshot_id + 1,
    )
