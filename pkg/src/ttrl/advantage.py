"""Group-normalised advantages scaled by a confidence weight."""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Sequence

import numpy as np

WEIGHT_KINDS = ("linear", "sqrt", "exp", "off")


@dataclass(frozen=True)
class AdvantageGroup:
    values: np.ndarray
    collapse_flag: bool


def weight_fn(kind: str, conf: float) -> float:
    """Confidence weight, normalised so that every kind maps 1 -> 1.

    ``off`` is the unweighted arm and always returns 1.
    """
    if not 0.0 < conf <= 1.0:
        raise ValueError(f"confidence must lie in (0, 1], got {conf}")
    if kind == "linear":
        return conf
    if kind == "sqrt":
        return math.sqrt(conf)
    if kind == "exp":
        return math.exp(conf - 1.0)
    if kind == "off":
        return 1.0
    raise ValueError(f"unknown weight kind {kind!r}")


def compute_advantages(rewards: Sequence[float], conf: float, kind: str) -> AdvantageGroup:
    """``(r - mean) / std * weight`` with the population std of the group.

    The squared z-scores are formed in exact rational arithmetic, so adding a
    constant to, or positively rescaling, the rewards gives bit-identical
    advantages. A group with zero spread is collapsed to all zeros.
    """
    if len(rewards) < 2:
        raise ValueError("need a group of at least 2 rewards")
    w = weight_fn(kind, conf)
    exact = [Fraction(float(x)) for x in rewards]
    mean = sum(exact) / len(exact)
    centred = [x - mean for x in exact]
    var = sum(c * c for c in centred) / len(exact)
    if var == 0:
        return AdvantageGroup(np.zeros(len(exact)), True)
    z = np.array([math.copysign(math.sqrt(c * c / var), c) if c else 0.0 for c in centred])
    return AdvantageGroup(z * w, False)
