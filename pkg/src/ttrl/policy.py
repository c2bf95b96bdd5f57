"""Position-conditioned categorical policy over 3-token responses.

A response is ``[OPEN, label, CLOSE]`` when well formed. Logits at positions 0
and 2 come from a shared table; position 1 adds a per-question option row on
top of the shared row, restricted to the label slots. All log-probability
gradients are analytic: ``d log softmax(z/T)[j] / dz = (onehot(j) - softmax(z/T)) / T``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import Dataset, option_alphabet

OPEN, CLOSE, NOISE = 0, 1, 2
SPECIAL_TOKENS = ("<answer>", "</answer>", "<noise>")
N_SPECIAL = len(SPECIAL_TOKENS)
SEQ_LEN = 3


@dataclass(frozen=True)
class Vocabulary:
    k: int

    @property
    def tokens(self) -> tuple[str, ...]:
        return SPECIAL_TOKENS + option_alphabet(self.k)

    @property
    def size(self) -> int:
        return N_SPECIAL + self.k

    def label_of(self, token: int) -> str | None:
        if N_SPECIAL <= token < self.size:
            return self.tokens[token]
        return None

    def token_of(self, label: str) -> int:
        return self.tokens.index(label, N_SPECIAL)


@dataclass(frozen=True)
class Response:
    question_id: int
    tokens: tuple[int, ...]
    token_logprobs: tuple[float, ...]
    snapshot_id: int
    temperature: float = 1.0


@dataclass
class PolicyParameters:
    format_logits: np.ndarray  # [SEQ_LEN, V]
    option_logits: np.ndarray  # [num_questions, K]
    snapshot_id: int = 0

    def __post_init__(self):
        self.format_logits = np.asarray(self.format_logits, dtype=np.float64)
        self.option_logits = np.asarray(self.option_logits, dtype=np.float64)
        k = self.option_logits.shape[1]
        if self.format_logits.shape != (SEQ_LEN, N_SPECIAL + k):
            raise ValueError(
                f"format_logits shape {self.format_logits.shape} does not match K={k}"
            )

    @property
    def k(self) -> int:
        return self.option_logits.shape[1]

    @property
    def num_questions(self) -> int:
        return self.option_logits.shape[0]

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(self.k)

    def copy(self, snapshot_id: int | None = None) -> "PolicyParameters":
        return PolicyParameters(
            self.format_logits.copy(),
            self.option_logits.copy(),
            self.snapshot_id if snapshot_id is None else snapshot_id,
        )

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.format_logits).all() and np.isfinite(self.option_logits).all())


@dataclass
class PolicyGrad:
    """Gradient with the same layout as :class:`PolicyParameters`."""

    format_logits: np.ndarray
    option_logits: np.ndarray

    @classmethod
    def zeros_like(cls, policy: PolicyParameters) -> "PolicyGrad":
        return cls(np.zeros_like(policy.format_logits), np.zeros_like(policy.option_logits))

    def add_position_grads(self, question_id: int, rows: np.ndarray, scale: float = 1.0) -> None:
        """Accumulate per-position logit gradients ``rows`` ([SEQ_LEN, V]) for one question."""
        self.format_logits += scale * rows
        self.option_logits[question_id] += scale * rows[1, N_SPECIAL:]

    def __iadd__(self, other: "PolicyGrad") -> "PolicyGrad":
        self.format_logits += other.format_logits
        self.option_logits += other.option_logits
        return self

    def scaled(self, factor: float) -> "PolicyGrad":
        return PolicyGrad(self.format_logits * factor, self.option_logits * factor)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.format_logits**2) + np.sum(self.option_logits**2)))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.format_logits).all() and np.isfinite(self.option_logits).all())


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def init_policy(
    dataset: Dataset,
    format_bias: float,
    seed: int,
    label_prior: Sequence[float] | None = None,
    noise_scale: float = 0.0,
) -> PolicyParameters:
    """Build the base policy for a dataset.

    ``format_bias`` is added to OPEN at position 0, CLOSE at position 2 and to
    every label slot at position 1. Each question's option row carries its
    ``signal_strength`` on the hidden answer. ``label_prior`` is an optional
    shared per-label offset at position 1 and ``noise_scale`` adds seeded
    Gaussian noise to the option rows; both default to off.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if format_bias < 0:
        raise ValueError("format_bias must be >= 0")
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    k = dataset.k
    fmt = np.zeros((SEQ_LEN, N_SPECIAL + k))
    fmt[0, OPEN] += format_bias
    fmt[1, N_SPECIAL:] += format_bias
    fmt[2, CLOSE] += format_bias
    if label_prior is not None:
        prior = np.asarray(label_prior, dtype=np.float64)
        if prior.shape != (k,):
            raise ValueError(f"label_prior must have length {k}")
        fmt[1, N_SPECIAL:] += prior
    opt = np.zeros((len(dataset), k))
    for q in dataset.questions:
        opt[q.id, q.latent_truth] = q.signal_strength
    if noise_scale > 0:
        opt += noise_scale * np.random.default_rng(seed).standard_normal(opt.shape)
    return PolicyParameters(fmt, opt, snapshot_id=0)


def position_logits(policy: PolicyParameters, question_id: int) -> np.ndarray:
    if not 0 <= question_id < policy.num_questions:
        raise KeyError(f"unknown question_id {question_id}")
    z = policy.format_logits.copy()
    z[1, N_SPECIAL:] += policy.option_logits[question_id]
    return z


def distributions(policy: PolicyParameters, question_id: int, temperature: float = 1.0) -> np.ndarray:
    """Per-position token probabilities, shape [SEQ_LEN, V]."""
    return np.exp(_log_softmax(position_logits(policy, question_id) / temperature))


def answer_distribution(policy: PolicyParameters, question_id: int, temperature: float = 1.0) -> np.ndarray:
    """Position-1 probabilities over the K labels, conditioned on emitting a label."""
    p = distributions(policy, question_id, temperature)[1, N_SPECIAL:]
    return p / p.sum()


def sample(
    policy: PolicyParameters, question_id: int, temperature: float, rng: np.random.Generator
) -> Response:
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    logp = _log_softmax(position_logits(policy, question_id) / temperature)
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(SEQ_LEN)
    tokens = []
    for t in range(SEQ_LEN):
        # clamp guards against u exceeding a cdf that sums to 1 - ulp
        tokens.append(min(int(np.searchsorted(cdf[t], u[t] * cdf[t, -1], side="right")), cdf.shape[1] - 1))
    return Response(
        question_id=question_id,
        tokens=tuple(tokens),
        token_logprobs=tuple(float(logp[t, tok]) for t, tok in enumerate(tokens)),
        snapshot_id=policy.snapshot_id,
        temperature=temperature,
    )


def greedy_response(policy: PolicyParameters, question_id: int) -> Response:
    """The temperature -> 0 limit: argmax token at each position."""
    z = position_logits(policy, question_id)
    tokens = tuple(int(i) for i in z.argmax(axis=1))
    return Response(question_id, tokens, (0.0,) * SEQ_LEN, policy.snapshot_id, temperature=0.0)


def token_logprobs_and_grads(
    policy: PolicyParameters, response: Response
) -> tuple[np.ndarray, np.ndarray]:
    """Current-policy log-probability of each token and its logit gradient.

    Returns ``(logps, rows)`` where ``rows[t]`` is the gradient of ``logps[t]``
    with respect to the position-``t`` logits vector.
    """
    v = policy.vocab.size
    if len(response.tokens) != SEQ_LEN or not all(0 <= tok < v for tok in response.tokens):
        raise ValueError(f"response tokens {response.tokens} invalid for vocabulary of size {v}")
    temp = response.temperature
    if temp <= 0:
        raise ValueError("log-probabilities need a positive sampling temperature")
    logp = _log_softmax(position_logits(policy, response.question_id) / temp)
    idx = np.arange(SEQ_LEN)
    toks = np.asarray(response.tokens)
    rows = -np.exp(logp)
    rows[idx, toks] += 1.0
    return logp[idx, toks], rows / temp


def logprob_and_grad(policy: PolicyParameters, response: Response) -> tuple[float, PolicyGrad]:
    logps, rows = token_logprobs_and_grads(policy, response)
    grad = PolicyGrad.zeros_like(policy)
    grad.add_position_grads(response.question_id, rows)
    return float(logps.sum()), grad


def _categorical_kl(logp: np.ndarray, logr: np.ndarray) -> np.ndarray:
    return np.sum(np.exp(logp) * (logp - logr), axis=-1)


def kl_per_position(policy: PolicyParameters, reference: PolicyParameters, question_id: int) -> np.ndarray:
    if policy.format_logits.shape != reference.format_logits.shape or (
        policy.option_logits.shape != reference.option_logits.shape
    ):
        raise ValueError("policy and reference shapes differ")
    logp = _log_softmax(position_logits(policy, question_id))
    logr = _log_softmax(position_logits(reference, question_id))
    return np.maximum(_categorical_kl(logp, logr), 0.0)


def kl_to_reference(policy: PolicyParameters, reference: PolicyParameters, question_id: int) -> float:
    """Exact KL(policy || reference) summed over the three positions."""
    return float(kl_per_position(policy, reference, question_id).sum())


def kl_position_grads(policy: PolicyParameters, reference: PolicyParameters, question_id: int) -> np.ndarray:
    """Gradient of each position's KL w.r.t. that position's policy logits."""
    logp = _log_softmax(position_logits(policy, question_id))
    logr = _log_softmax(position_logits(reference, question_id))
    p = np.exp(logp)
    kl = np.sum(p * (logp - logr), axis=-1, keepdims=True)
    return p * (logp - logr - kl)


# -- checkpoint file ----------------------------------------------------------


def save_checkpoint(policy: PolicyParameters, path: str | Path) -> None:
    header = {
        "format_shape": list(policy.format_logits.shape),
        "option_shape": list(policy.option_logits.shape),
        "vocab": list(policy.vocab.tokens),
        "snapshot_id": policy.snapshot_id,
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            header=np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8),
            format_logits=policy.format_logits,
            option_logits=policy.option_logits,
        )


def load_checkpoint(path: str | Path) -> PolicyParameters:
    with np.load(path) as data:
        header = json.loads(data["header"].tobytes().decode("utf-8"))
        fmt = data["format_logits"]
        opt = data["option_logits"]
    if list(fmt.shape) != header["format_shape"] or list(opt.shape) != header["option_shape"]:
        raise ValueError(f"{path}: table shapes disagree with header")
    policy = PolicyParameters(fmt, opt, int(header["snapshot_id"]))
    if list(policy.vocab.tokens) != header["vocab"]:
        raise ValueError(f"{path}: vocabulary mismatch")
    return policy
