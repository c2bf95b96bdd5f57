"""Answer parsing and the accuracy + format reward."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .env import UNPARSEABLE
from .policy import CLOSE, N_SPECIAL, OPEN, Response, SEQ_LEN


class ParsedAnswer(NamedTuple):
    answer: str
    well_formatted: bool


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: float
    r_format: float

    @property
    def r_total(self) -> float:
        return self.r_acc + self.r_format


def parse_tokens(tokens: tuple[int, ...], k: int) -> ParsedAnswer:
    if len(tokens) != SEQ_LEN:
        return ParsedAnswer(UNPARSEABLE, False)
    mid = tokens[1]
    if not N_SPECIAL <= mid < N_SPECIAL + k:
        return ParsedAnswer(UNPARSEABLE, False)
    label = chr(ord("A") + mid - N_SPECIAL)
    return ParsedAnswer(label, tokens[0] == OPEN and tokens[2] == CLOSE)


def parse_answer(response: Response, k: int = 26) -> ParsedAnswer:
    """Extract the label at position 1.

    A label with wrong wrapper tokens is still returned, flagged as not well
    formatted. Anything else at position 1 is ``"unparseable"``.
    """
    return parse_tokens(response.tokens, k)


def score(response: Response, pseudo_label: str, k: int = 26) -> RewardBreakdown:
    if pseudo_label == UNPARSEABLE:
        raise ValueError("cannot score against an unparseable pseudo-label")
    parsed = parse_answer(response, k)
    r_acc = 1.0 if parsed.answer == pseudo_label else 0.0
    return RewardBreakdown(r_acc, 1.0 if parsed.well_formatted else 0.0)
