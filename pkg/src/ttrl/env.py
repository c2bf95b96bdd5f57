"""Synthetic multiple-choice environment.

Each question has a hidden correct option (``latent_truth``) that only the
evaluation helpers and policy initialisation may read. Everything on the
training path receives :class:`QuestionView` objects, which structurally lack
the truth field.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNPARSEABLE = "unparseable"
ALPHABET = tuple(string.ascii_uppercase)


def option_alphabet(k: int) -> tuple[str, ...]:
    if not 2 <= k <= len(ALPHABET):
        raise ValueError(f"k must be in [2, {len(ALPHABET)}], got {k}")
    return ALPHABET[:k]


@dataclass(frozen=True, slots=True)
class QuestionView:
    """Truth-free projection of a question; the only type the trainer sees."""

    id: int
    option_labels: tuple[str, ...]
    signal_strength: float


@dataclass(frozen=True)
class QuestionInstance:
    id: int
    option_labels: tuple[str, ...]
    latent_truth: int
    signal_strength: float

    def __post_init__(self):
        k = len(self.option_labels)
        if not 2 <= k <= len(ALPHABET):
            raise ValueError(f"need 2 <= K <= 26 options, got {k}")
        if len(set(self.option_labels)) != k:
            raise ValueError("option labels must be distinct")
        if not 0 <= self.latent_truth < k:
            raise ValueError(f"latent_truth {self.latent_truth} outside [0, {k})")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be >= 0")

    @property
    def truth_label(self) -> str:
        return self.option_labels[self.latent_truth]

    def view(self) -> QuestionView:
        return QuestionView(self.id, self.option_labels, self.signal_strength)


@dataclass(frozen=True)
class Dataset:
    questions: tuple[QuestionInstance, ...]
    seed: int

    def __post_init__(self):
        ids = [q.id for q in self.questions]
        if ids != list(range(len(ids))):
            raise ValueError("question ids must be contiguous from 0")

    def __len__(self) -> int:
        return len(self.questions)

    @property
    def k(self) -> int:
        return len(self.questions[0].option_labels)

    def views(self) -> tuple[QuestionView, ...]:
        return tuple(q.view() for q in self.questions)


def generate_dataset(
    n: int, k: int, signal_strength: float, seed: int, truth_weights: Sequence[float] | None = None
) -> Dataset:
    """Draw ``n`` questions with hidden answers.

    Answers are uniform over the ``k`` options unless ``truth_weights`` gives a
    (label-shifted) marginal; the weights are normalised.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if k < 2:
        raise ValueError("k must be >= 2: voting over a single option is degenerate")
    if signal_strength < 0:
        raise ValueError("signal_strength must be >= 0")
    labels = option_alphabet(k)
    rng = np.random.default_rng(seed)
    if truth_weights is None:
        truths = rng.integers(0, k, size=n)
    else:
        w = np.asarray(truth_weights, dtype=np.float64)
        if w.shape != (k,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError(f"truth_weights must be {k} non-negative weights with positive sum")
        truths = rng.choice(k, size=n, p=w / w.sum())
    questions = tuple(
        QuestionInstance(i, labels, int(t), float(signal_strength)) for i, t in enumerate(truths)
    )
    return Dataset(questions, seed)


def eval_accuracy(dataset: Dataset, answers: Sequence[str]) -> float:
    """Fraction of answers equal to the hidden correct label (oracle only)."""
    if len(answers) != len(dataset):
        raise ValueError(f"got {len(answers)} answers for {len(dataset)} questions")
    hits = sum(a == q.truth_label for q, a in zip(dataset.questions, answers))
    return hits / len(dataset)


# -- line-delimited dataset file --------------------------------------------


def _record(q: QuestionInstance) -> dict:
    return {"id": q.id, "options": list(q.option_labels), "truth": q.latent_truth, "signal": q.signal_strength}


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in dataset.questions:
            fh.write(json.dumps(_record(q)) + "\n")


def _read_records(path: str | Path) -> Iterable[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed record") from exc


def load_dataset(path: str | Path, seed: int = -1) -> Dataset:
    questions = tuple(
        QuestionInstance(r["id"], tuple(r["options"]), r["truth"], float(r["signal"]))
        for r in _read_records(path)
    )
    if not questions:
        raise ValueError(f"{path}: empty dataset")
    return Dataset(questions, seed)


def load_views(path: str | Path) -> tuple[QuestionView, ...]:
    """Read a dataset file for training, dropping the ``truth`` field."""
    views = tuple(
        QuestionView(r["id"], tuple(r["options"]), float(r["signal"])) for r in _read_records(path)
    )
    if not views:
        raise ValueError(f"{path}: empty dataset")
    return views
