import itertools

import pytest

from ttrl.env import UNPARSEABLE
from ttrl.policy import CLOSE, N_SPECIAL, NOISE, OPEN, Response
from ttrl.reward import parse_answer, score

K = 4
A, B = N_SPECIAL, N_SPECIAL + 1


def resp(*tokens):
    return Response(0, tuple(tokens), (0.0,) * len(tokens), 0)


@pytest.mark.parametrize(
    "tokens, answer, ok",
    [
        ((OPEN, B, CLOSE), "B", True),
        ((NOISE, B, CLOSE), "B", False),
        ((OPEN, NOISE, CLOSE), UNPARSEABLE, False),
        ((OPEN, B, OPEN), "B", False),
        ((CLOSE, OPEN, CLOSE), UNPARSEABLE, False),
    ],
)
def test_parse(tokens, answer, ok):
    parsed = parse_answer(resp(*tokens), K)
    assert parsed.answer == answer
    assert parsed.well_formatted is ok


@pytest.mark.parametrize(
    "tokens, expected",
    [
        ((OPEN, B, CLOSE), (1.0, 1.0, 2.0)),
        ((OPEN, A, CLOSE), (0.0, 1.0, 1.0)),
        ((NOISE, B, CLOSE), (1.0, 0.0, 1.0)),
    ],
)
def test_score_examples(tokens, expected):
    r = score(resp(*tokens), "B", K)
    assert (r.r_acc, r.r_format, r.r_total) == expected


def test_score_rejects_unparseable_label():
    with pytest.raises(ValueError):
        score(resp(OPEN, A, CLOSE), UNPARSEABLE, K)


def test_exhaustive_reward_table():
    # brute force over all 7^3 sequences for K=4
    vocab = range(N_SPECIAL + K)
    totals = {}
    for seq in itertools.product(vocab, repeat=3):
        r = score(resp(*seq), "C", K)
        assert r.r_total == r.r_acc + r.r_format
        assert r.r_acc in (0.0, 1.0) and r.r_format in (0.0, 1.0)
        totals[seq] = r.r_total
        is_label = N_SPECIAL <= seq[1] < N_SPECIAL + K
        assert r.r_format == float(is_label and seq[0] == OPEN and seq[2] == CLOSE)
        assert r.r_acc == float(seq[1] == N_SPECIAL + 2)
    assert set(totals.values()) == {0.0, 1.0, 2.0}
    assert [s for s, v in totals.items() if v == 2.0] == [(OPEN, N_SPECIAL + 2, CLOSE)]


def test_score_is_pure():
    r = resp(NOISE, B, CLOSE)
    assert score(r, "B", K) == score(r, "B", K)
