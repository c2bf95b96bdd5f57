"""Multiple-attempt rollout sampling.

Up to ``max_attempts`` groups are drawn and the first one whose responses are
not all identical is kept; if every attempt is uniform the last one is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .policy import PolicyParameters, Response, sample


@dataclass(frozen=True)
class SamplingOutcome:
    chosen_group: tuple[Response, ...]
    attempts_used: int
    all_identical: bool
    attempt_index: int = 0  # which drawn group was kept (0-based)


def all_same(group: Sequence[Response]) -> bool:
    """True iff every response has the same raw token sequence."""
    if not group:
        raise ValueError("empty group")
    first = group[0].tokens
    return all(r.tokens == first for r in group)


def sample_group(
    policy: PolicyParameters, question_id: int, g: int, temperature: float, rng: np.random.Generator
) -> tuple[Response, ...]:
    return tuple(sample(policy, question_id, temperature, rng) for _ in range(g))


def sample_with_attempts(
    policy: PolicyParameters,
    question_id: int,
    g: int,
    temperature: float,
    max_attempts: int,
    rng: np.random.Generator,
    lazy: bool = False,
) -> SamplingOutcome:
    """Draw rollout groups with fallback on uniform groups.

    By default all ``max_attempts`` groups are drawn before selecting, so rng
    consumption is the same whatever gets chosen. ``lazy=True`` stops at the
    first non-uniform group.
    """
    if g < 1:
        raise ValueError("g must be >= 1")
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    if lazy:
        for attempt in range(max_attempts):
            group = sample_group(policy, question_id, g, temperature, rng)
            uniform = all_same(group)
            if not uniform or attempt == max_attempts - 1:
                return SamplingOutcome(group, attempt + 1, uniform, attempt)
    groups = [sample_group(policy, question_id, g, temperature, rng) for _ in range(max_attempts)]
    for attempt, group in enumerate(groups):
        if not all_same(group):
            return SamplingOutcome(group, attempt + 1, False, attempt)
    return SamplingOutcome(groups[-1], max_attempts, True, max_attempts - 1)
