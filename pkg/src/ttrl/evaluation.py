"""Oracle-only diagnostics: everything here may read the hidden answers.

The adaptation loop never imports this module; callers hand it an
:class:`OracleEvaluator` as an opaque callback.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import UNPARSEABLE, Dataset, eval_accuracy
from .labeling import PseudoLabel
from .policy import N_SPECIAL, PolicyParameters
from .reward import parse_tokens
from .trainer import TrainConfig, run_pseudo_label_phase


def greedy_answers(policy: PolicyParameters) -> list[str]:
    """Parsed answer of the argmax response for every question."""
    pos1 = np.repeat(policy.format_logits[1][None, :], policy.num_questions, axis=0)
    pos1[:, N_SPECIAL:] += policy.option_logits
    mid = pos1.argmax(axis=1)
    first = int(policy.format_logits[0].argmax())
    last = int(policy.format_logits[2].argmax())
    return [parse_tokens((first, int(t), last), policy.k).answer for t in mid]


def direct_inference_accuracy(policy: PolicyParameters, dataset: Dataset) -> float:
    return eval_accuracy(dataset, greedy_answers(policy))


def pseudo_label_accuracy(labels: Sequence[PseudoLabel], dataset: Dataset) -> float:
    by_id = {lab.question_id: lab.answer for lab in labels}
    return eval_accuracy(dataset, [by_id.get(q.id, UNPARSEABLE) for q in dataset.questions])


def correctness_flags(labels: Sequence[PseudoLabel], dataset: Dataset) -> np.ndarray:
    return np.array([lab.answer == dataset.questions[lab.question_id].truth_label for lab in labels])


@dataclass
class OracleEvaluator:
    """Callback for the trainer: greedy accuracy of a policy and of its labels."""

    dataset: Dataset

    def __call__(self, policy: PolicyParameters, labels: Sequence[PseudoLabel]) -> tuple[float, float]:
        return direct_inference_accuracy(policy, self.dataset), pseudo_label_accuracy(labels, self.dataset)


def run_baselines(policy: PolicyParameters, dataset: Dataset, config: TrainConfig) -> tuple[float, float]:
    """Direct inference (greedy) and majority-vote accuracy of an unadapted policy.

    The vote uses the same rng streams as the pseudo-label phase, so DIMV here
    equals the pseudo-label accuracy of a run with the same seed.
    """
    labeled = run_pseudo_label_phase(policy, dataset.views(), config)
    dimv = pseudo_label_accuracy([lq.label for lq in labeled], dataset)
    return direct_inference_accuracy(policy, dataset), dimv
