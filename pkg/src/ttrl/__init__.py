"""Test-time reinforcement learning from majority-vote pseudo-labels, at toy scale."""

from .advantage import AdvantageGroup, compute_advantages, weight_fn
from .env import Dataset, QuestionInstance, QuestionView, eval_accuracy, generate_dataset
from .grpo import GrpoConfig, SurrogateReport, apply_update, surrogate_and_grad
from .labeling import PseudoLabel, confidence, generate_pseudo_label, majority_vote
from .policy import (
    PolicyGrad,
    PolicyParameters,
    Response,
    Vocabulary,
    init_policy,
    kl_to_reference,
    logprob_and_grad,
    sample,
)
from .reward import RewardBreakdown, parse_answer, score
from .sampling import SamplingOutcome, all_same, sample_with_attempts
from .trainer import MetricsRecord, TrainConfig, run_adaptation, run_pseudo_label_phase

__version__ = "0.1.0"

__all__ = [
    "AdvantageGroup",
    "Dataset",
    "GrpoConfig",
    "MetricsRecord",
    "PolicyGrad",
    "PolicyParameters",
    "PseudoLabel",
    "QuestionInstance",
    "QuestionView",
    "Response",
    "RewardBreakdown",
    "SamplingOutcome",
    "SurrogateReport",
    "TrainConfig",
    "Vocabulary",
    "all_same",
    "apply_update",
    "compute_advantages",
    "confidence",
    "eval_accuracy",
    "generate_dataset",
    "generate_pseudo_label",
    "init_policy",
    "kl_to_reference",
    "logprob_and_grad",
    "majority_vote",
    "parse_answer",
    "run_adaptation",
    "run_pseudo_label_phase",
    "sample",
    "sample_with_attempts",
    "score",
    "surrogate_and_grad",
    "weight_fn",
]
