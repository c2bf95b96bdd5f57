"""Label-free test-time adaptation loop.

Stage 1 votes a pseudo-label (with confidence) for every question. Stage 2
repeatedly samples rollout groups, rewards agreement with the pseudo-label,
builds confidence-weighted group advantages and takes clipped policy-gradient
ascent steps.

Nothing in this module sees the hidden answers: questions arrive as
:class:`~ttrl.env.QuestionView` and accuracy diagnostics come from an opaque
``evaluator`` callback supplied by the caller.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .advantage import WEIGHT_KINDS, compute_advantages
from .env import QuestionView
from .grpo import GrpoConfig, NonFiniteUpdate, SurrogateReport, apply_update, surrogate_and_grad
from .labeling import PseudoLabel, generate_pseudo_label, load_labels, save_labels
from .policy import PolicyGrad, PolicyParameters, load_checkpoint, save_checkpoint
from .reward import score
from .sampling import sample_with_attempts

log = logging.getLogger(__name__)

# rng stream tags, combined with the run seed
_LABEL_STREAM, _SHUFFLE_STREAM, _ROLLOUT_STREAM, _RELABEL_STREAM = 0, 1, 2, 3

Evaluator = Callable[[PolicyParameters, Sequence[PseudoLabel]], tuple[float, float]]


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    m_votes: int = 64
    g_rollouts: int = 4
    temperature: float = 1.0
    steps: int = 500
    global_batch: int = 8
    report_step: int | None = None  # None -> final step
    weight_kind: str = "exp"
    mas_attempts: int = 3
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    seed: int = 0
    mas_lazy: bool = False
    refresh_labels: bool = False
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.m_votes < 1 or self.g_rollouts < 2 or self.global_batch < 1:
            raise ValueError("m_votes >= 1, g_rollouts >= 2 and global_batch >= 1 required")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.report_step is not None and not 0 <= self.report_step <= self.steps:
            raise ValueError(f"report_step {self.report_step} exceeds steps {self.steps}")
        if self.weight_kind not in WEIGHT_KINDS:
            raise ValueError(f"weight_kind must be one of {WEIGHT_KINDS}")
        if self.mas_attempts < 1:
            raise ValueError("mas_attempts must be >= 1")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    @property
    def effective_report_step(self) -> int:
        return self.steps if self.report_step is None else self.report_step

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        grpo = d.pop("grpo", {})
        return cls(grpo=GrpoConfig(**grpo), **d)


@dataclass(frozen=True)
class LabeledQuestion:
    view: QuestionView
    label: PseudoLabel

    @property
    def skipped(self) -> bool:
        return self.label.skipped


@dataclass
class MetricsRecord:
    step: int
    eval_accuracy: float | None
    pseudo_label_accuracy: float | None
    mean_confidence: float
    collapse_count: int
    attempts_histogram: dict[str, int]
    objective_value: float
    clipped_fraction: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


# -- stage 1 --------------------------------------------------------------------


def run_pseudo_label_phase(
    policy: PolicyParameters,
    questions: Sequence[QuestionView],
    config: TrainConfig,
    cache_path: str | Path | None = None,
    stream: tuple[int, ...] = (_LABEL_STREAM,),
) -> list[LabeledQuestion]:
    """Vote a pseudo-label for each question, using the cache when present."""
    if not questions:
        raise ValueError("no questions to label")
    if cache_path is not None and Path(cache_path).exists():
        by_id = {lab.question_id: lab for lab in load_labels(cache_path)}
        missing = [q.id for q in questions if q.id not in by_id]
        if missing:
            raise ValueError(f"label cache {cache_path} lacks questions {missing[:5]}")
        labels = [by_id[q.id] for q in questions]
    else:
        labels = [
            generate_pseudo_label(
                policy, q.id, config.m_votes, config.temperature, _rng(config.seed, *stream, q.id)
            )
            for q in questions
        ]
        if cache_path is not None:
            save_labels(labels, cache_path)
    labeled = [LabeledQuestion(q, lab) for q, lab in zip(questions, labels)]
    if all(lq.skipped for lq in labeled):
        raise TrainingAborted("every pseudo-label is unparseable; the policy never emits an answer")
    return labeled


# -- stage 2 --------------------------------------------------------------------


@dataclass
class StepResult:
    policy: PolicyParameters
    record: MetricsRecord
    zero_grad_questions: tuple[int, ...]


class _BatchSchedule:
    """Seeded shuffled cycling; step ``s`` is computable without replaying earlier steps."""

    def __init__(self, ids: Sequence[int], batch: int, seed: int):
        self.ids = np.asarray(ids)
        self.batch = batch
        self.seed = seed
        self._perm = lru_cache(maxsize=8)(self._permutation)

    def _permutation(self, epoch: int) -> np.ndarray:
        return _rng(self.seed, _SHUFFLE_STREAM, epoch).permutation(self.ids)

    def epoch_of(self, step: int) -> int:
        return (step * self.batch) // len(self.ids)

    def batch_ids(self, step: int) -> list[int]:
        out = []
        for b in range(self.batch):
            epoch, i = divmod(step * self.batch + b, len(self.ids))
            out.append(int(self._perm(epoch)[i]))
        return out


def adaptation_step(
    policy: PolicyParameters,
    reference: PolicyParameters,
    labels: dict[int, PseudoLabel],
    batch_ids: Sequence[int],
    config: TrainConfig,
    step: int,
) -> StepResult:
    """One update: rollouts, rewards, advantages, inner epochs of clipped ascent."""
    groups = []
    attempts = {str(i): 0 for i in range(1, config.mas_attempts + 1)}
    collapse = 0
    zero_grad = []
    confs = []
    for slot, qid in enumerate(batch_ids):
        lab = labels[qid]
        if lab.skipped:
            continue
        outcome = sample_with_attempts(
            policy,
            qid,
            config.g_rollouts,
            config.temperature,
            config.mas_attempts,
            _rng(config.seed, _ROLLOUT_STREAM, step, slot),
            lazy=config.mas_lazy,
        )
        attempts[str(outcome.attempts_used)] += 1
        rewards = [score(r, lab.answer, policy.k).r_total for r in outcome.chosen_group]
        adv = compute_advantages(rewards, lab.confidence, config.weight_kind)
        if adv.collapse_flag:
            collapse += 1
            zero_grad.append(qid)
        confs.append(lab.confidence)
        groups.append((outcome.chosen_group, adv))

    snapshot = policy
    current = policy
    report = SurrogateReport(0.0, 0.0, 0.0)
    for _ in range(config.grpo.inner_epochs):
        report, grad = _accumulated_grad(current, snapshot, reference, groups, config.grpo)
        if not np.isfinite(report.objective_value):
            raise NonFiniteUpdate(f"non-finite objective at step {step}")
        current = apply_update(current, grad, config.grpo.learning_rate)

    record = MetricsRecord(
        step=step + 1,
        eval_accuracy=None,
        pseudo_label_accuracy=None,
        mean_confidence=float(np.mean(confs)) if confs else 0.0,
        collapse_count=collapse,
        attempts_histogram=attempts,
        objective_value=report.objective_value,
        clipped_fraction=report.clipped_fraction,
    )
    return StepResult(current, record, tuple(zero_grad))


def _accumulated_grad(policy, snapshot, reference, groups, grpo: GrpoConfig):
    """Sum micro-batch gradients in fixed order; equals the full-batch mean."""
    if not groups:
        return SurrogateReport(0.0, 0.0, 0.0), PolicyGrad.zeros_like(policy)
    chunks = [c for c in np.array_split(np.arange(len(groups)), grpo.accumulation_steps) if len(c)]
    total = PolicyGrad.zeros_like(policy)
    objective = clipped = 0.0
    for chunk in chunks:
        share = len(chunk) / len(groups)
        rep, g = surrogate_and_grad(policy, snapshot, reference, [groups[i] for i in chunk], grpo)
        total += g.scaled(share)
        objective += share * rep.objective_value
        clipped += share * rep.clipped_fraction
    return SurrogateReport(objective, clipped, total.norm()), total


@dataclass
class AdaptationResult:
    policy: PolicyParameters
    metrics: list[MetricsRecord]
    report_policy: PolicyParameters


def run_adaptation(
    policy: PolicyParameters,
    labeled: Sequence[LabeledQuestion],
    config: TrainConfig,
    evaluator: Evaluator | None = None,
    out_dir: str | Path | None = None,
    resume: bool = False,
    reference: PolicyParameters | None = None,
) -> AdaptationResult:
    """Run ``config.steps`` update steps.

    With ``out_dir`` set, metrics are appended to ``metrics.jsonl`` each step and
    ``report.npz``, ``final.npz`` and a rolling ``last.npz`` are written under
    ``checkpoints/``. ``resume`` continues from ``last.npz``.
    """
    reference = policy.copy() if reference is None else reference
    active = [lq.view.id for lq in labeled if not lq.skipped]
    if not active:
        raise TrainingAborted("no trainable questions")
    labels = {lq.view.id: lq.label for lq in labeled}
    schedule = _BatchSchedule(active, config.global_batch, config.seed)

    out = Path(out_dir) if out_dir is not None else None
    metrics: list[MetricsRecord] = []
    start = 0
    report_policy = policy.copy() if config.effective_report_step == 0 else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        if resume and (out / "state.json").exists():
            policy, start, metrics, labels = _restore(out, labels)
            if start >= config.effective_report_step:
                report_policy = load_checkpoint(out / "checkpoints" / "report.npz")
        else:
            (out / "metrics.jsonl").write_text("", encoding="utf-8")

    epoch = schedule.epoch_of(start)
    for step in range(start, config.steps):
        if config.refresh_labels and schedule.epoch_of(step) != epoch:
            epoch = schedule.epoch_of(step)
            relabeled = run_pseudo_label_phase(
                policy, [lq.view for lq in labeled], config, stream=(_RELABEL_STREAM, epoch)
            )
            labels = {lq.view.id: lq.label for lq in relabeled}
        try:
            result = adaptation_step(policy, reference, labels, schedule.batch_ids(step), config, step)
        except NonFiniteUpdate as exc:
            if out is not None:
                _checkpoint(out, policy, step, labels)
            raise TrainingAborted(str(exc)) from exc
        policy = result.policy
        rec = result.record
        if evaluator is not None:
            rec.eval_accuracy, rec.pseudo_label_accuracy = evaluator(policy.copy(), list(labels.values()))
        metrics.append(rec)
        if step + 1 == config.effective_report_step:
            report_policy = policy.copy()
        if out is not None:
            with open(out / "metrics.jsonl", "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")
            if step + 1 == config.effective_report_step:
                save_checkpoint(policy, out / "checkpoints" / "report.npz")
            if (step + 1) % config.checkpoint_every == 0:
                _checkpoint(out, policy, step + 1, labels)
        log.debug("step %d objective %.4f collapse %d", rec.step, rec.objective_value, rec.collapse_count)

    if out is not None:
        if config.effective_report_step == 0:
            save_checkpoint(report_policy, out / "checkpoints" / "report.npz")
        save_checkpoint(policy, out / "checkpoints" / "final.npz")
        _checkpoint(out, policy, config.steps, labels)
    return AdaptationResult(policy, metrics, report_policy)


def _checkpoint(out: Path, policy: PolicyParameters, step: int, labels: dict[int, PseudoLabel]) -> None:
    save_checkpoint(policy, out / "checkpoints" / "last.npz")
    save_labels([labels[k] for k in sorted(labels)], out / "checkpoints" / "last_labels.jsonl")
    (out / "state.json").write_text(json.dumps({"step": step}), encoding="utf-8")


def _restore(out: Path, labels: dict[int, PseudoLabel]):
    step = json.loads((out / "state.json").read_text(encoding="utf-8"))["step"]
    policy = load_checkpoint(out / "checkpoints" / "last.npz")
    saved = out / "checkpoints" / "last_labels.jsonl"
    if saved.exists():
        labels = {lab.question_id: lab for lab in load_labels(saved)}
    lines = (out / "metrics.jsonl").read_text(encoding="utf-8").splitlines()[:step]
    (out / "metrics.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    metrics = [MetricsRecord(**json.loads(line)) for line in lines]
    return policy, step, metrics, labels
