"""Majority-vote pseudo-labels and vote-agreement confidence."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .env import UNPARSEABLE
from .policy import PolicyParameters, sample
from .reward import parse_answer


@dataclass(frozen=True)
class PseudoLabel:
    question_id: int
    answer: str
    confidence: float
    vote_histogram: dict[str, int] = field(hash=False)
    m: int

    @property
    def skipped(self) -> bool:
        return self.answer == UNPARSEABLE


def majority_vote(votes: Iterable[str]) -> tuple[str, dict[str, int]]:
    """Modal parseable answer; ties go to the alphabetically lowest label.

    Unparseable votes are counted but only win when nothing else was voted.
    """
    hist = dict(Counter(votes))
    if not hist:
        raise ValueError("no votes")
    parseable = {a: c for a, c in hist.items() if a != UNPARSEABLE}
    if not parseable:
        return UNPARSEABLE, hist
    best = max(parseable.values())
    return min(a for a, c in parseable.items() if c == best), hist


def confidence(histogram: Mapping[str, int], answer: str) -> float:
    m = sum(histogram.values())
    if m == 0:
        raise ValueError("empty histogram")
    if answer not in histogram:
        raise KeyError(f"{answer!r} not in histogram")
    return histogram[answer] / m


def label_from_votes(question_id: int, votes: list[str]) -> PseudoLabel:
    answer, hist = majority_vote(votes)
    return PseudoLabel(question_id, answer, confidence(hist, answer), hist, len(votes))


def generate_pseudo_label(
    policy: PolicyParameters,
    question_id: int,
    m: int,
    temperature: float,
    rng: np.random.Generator,
) -> PseudoLabel:
    if m < 1:
        raise ValueError("m must be >= 1")
    votes = [parse_answer(sample(policy, question_id, temperature, rng), policy.k).answer for _ in range(m)]
    return label_from_votes(question_id, votes)


# -- pseudo-label cache -------------------------------------------------------


def save_labels(labels: Iterable[PseudoLabel], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            rec = {
                "question_id": lab.question_id,
                "answer": lab.answer,
                "confidence": lab.confidence,
                "histogram": dict(sorted(lab.vote_histogram.items())),
            }
            fh.write(json.dumps(rec) + "\n")


def load_labels(path: str | Path) -> list[PseudoLabel]:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            hist = {str(a): int(c) for a, c in r["histogram"].items()}
            labels.append(PseudoLabel(r["question_id"], r["answer"], r["confidence"], hist, sum(hist.values())))
    return labels
