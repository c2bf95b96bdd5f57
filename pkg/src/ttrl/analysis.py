"""Confidence/accuracy binning, regression, and ablation grids.

Also holds :class:`StandardSetup`, the synthetic configuration used by the
acceptance suite and the demos.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .env import Dataset, generate_dataset
from .evaluation import OracleEvaluator, direct_inference_accuracy, pseudo_label_accuracy
from .policy import PolicyParameters, init_policy
from .trainer import TrainConfig, run_adaptation, run_pseudo_label_phase

N_BINS = 20
BIN_WIDTH = 1.0 / N_BINS


@dataclass(frozen=True)
class ConfidenceBin:
    lower: float
    upper: float
    count: int
    mean_accuracy: float | None

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class RegressionSummary:
    slope: float
    intercept: float
    pearson_r: float
    points_used: int
    degenerate: bool = False


def bin_index(conf: float) -> int:
    """Index of the (lower, upper] bin holding ``conf``."""
    if not 0.0 < conf <= 1.0:
        raise ValueError(f"confidence {conf} outside (0, 1]")
    # 1e-9 absorbs float error on exact boundaries such as 0.15 * 20
    return min(max(math.ceil(conf * N_BINS - 1e-9) - 1, 0), N_BINS - 1)


def bin_confidence_accuracy(confidences: Sequence[float], correct: Sequence[bool]) -> list[ConfidenceBin]:
    if len(confidences) == 0:
        raise ValueError("no pseudo-labels to bin")
    if len(confidences) != len(correct):
        raise ValueError("confidences and correctness flags differ in length")
    counts = np.zeros(N_BINS, dtype=int)
    hits = np.zeros(N_BINS)
    for c, ok in zip(confidences, correct):
        i = bin_index(float(c))
        counts[i] += 1
        hits[i] += bool(ok)
    return [
        ConfidenceBin(
            round(i * BIN_WIDTH, 10),
            round((i + 1) * BIN_WIDTH, 10),
            int(counts[i]),
            float(hits[i] / counts[i]) if counts[i] else None,
        )
        for i in range(N_BINS)
    ]


def fit_regression(bins: Sequence[ConfidenceBin]) -> RegressionSummary:
    """Least-squares line through (midpoint, mean accuracy) of non-empty bins."""
    pts = sorted((b.midpoint, b.mean_accuracy) for b in bins if b.count > 0)
    if len(pts) < 2:
        raise ValueError("need at least two non-empty bins")
    x, y = np.array(pts).T
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy, sxy = dx @ dx, dy @ dy, dx @ dy
    slope = sxy / sxx
    intercept = y.mean() - slope * x.mean()
    if syy == 0.0:
        return RegressionSummary(0.0, float(y.mean()), 0.0, len(pts), degenerate=True)
    r = float(np.clip(sxy / math.sqrt(sxx * syy), -1.0, 1.0))
    return RegressionSummary(float(slope), float(intercept), r, len(pts))


def write_bins(bins: Sequence[ConfidenceBin], summary: RegressionSummary, path: str | Path, fmt: str = "jsonl") -> None:
    rows = [asdict(b) for b in bins]
    if fmt == "csv":
        _write_csv(rows, path)
        return
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps({"kind": "bin", **row}) + "\n")
        fh.write(json.dumps({"kind": "regression", **asdict(summary)}) + "\n")


def _write_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


# -- standard synthetic setup ---------------------------------------------------


@dataclass(frozen=True)
class StandardSetup:
    """Environment and base-policy parameters of the reference experiment.

    The test split is label-shifted (``truth_weights``) relative to the base
    policy, which has a flat label prior; that shared discrepancy is what the
    pseudo-labels can teach. Per-question logit noise makes some greedy
    answers wrong (greedy accuracy around 0.55).
    """

    n: int = 200
    k: int = 4
    signal: float = 1.0
    noise_scale: float = 1.0
    format_bias: float = 4.0
    truth_weights: tuple[float, ...] | None = (1.0, 2.0, 3.0, 6.0)

    def make(self, seed: int) -> tuple[Dataset, PolicyParameters]:
        ds = generate_dataset(self.n, self.k, self.signal, seed, truth_weights=self.truth_weights)
        return ds, init_policy(ds, self.format_bias, seed, noise_scale=self.noise_scale)


STANDARD_TRAIN = TrainConfig(steps=100)

ARMS = {
    "G-MV": dict(weight_kind="off", mas_attempts=1),
    "+M": dict(weight_kind="off", mas_attempts=3),
    "+C": dict(weight_kind="exp", mas_attempts=1),
    "+C+M": dict(weight_kind="exp", mas_attempts=3),
}


def standard_arms(base: TrainConfig = STANDARD_TRAIN) -> dict[str, TrainConfig]:
    return {name: replace(base, **kw) for name, kw in ARMS.items()}


@dataclass
class RunSummary:
    seed: int
    di_accuracy: float
    dimv_accuracy: float
    report_accuracy: float
    final_accuracy: float
    eval_curve: list[float] = field(default_factory=list)


def run_experiment(config: TrainConfig, dataset: Dataset, policy: PolicyParameters) -> RunSummary:
    """Pseudo-label, adapt, and score one configuration (oracle accuracies included)."""
    labeled = run_pseudo_label_phase(policy, dataset.views(), config)
    dimv = pseudo_label_accuracy([lq.label for lq in labeled], dataset)
    result = run_adaptation(policy, labeled, config, evaluator=OracleEvaluator(dataset))
    return RunSummary(
        seed=config.seed,
        di_accuracy=direct_inference_accuracy(policy, dataset),
        dimv_accuracy=dimv,
        report_accuracy=direct_inference_accuracy(result.report_policy, dataset),
        final_accuracy=direct_inference_accuracy(result.policy, dataset),
        eval_curve=[m.eval_accuracy for m in result.metrics],
    )


@dataclass
class GridTable:
    rows: list[dict]

    def means(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for arm in dict.fromkeys(r["arm"] for r in self.rows):
            sub = [r for r in self.rows if r["arm"] == arm]
            out[arm] = {
                key: float(np.mean([r[key] for r in sub]))
                for key in ("di_accuracy", "dimv_accuracy", "report_accuracy", "final_accuracy")
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()

    def format(self) -> str:
        lines = [f"{'arm':<8}{'DI':>8}{'DIMV':>8}{'report':>8}{'final':>8}"]
        for arm, m in self.means().items():
            lines.append(
                f"{arm:<8}{m['di_accuracy']:8.3f}{m['dimv_accuracy']:8.3f}"
                f"{m['report_accuracy']:8.3f}{m['final_accuracy']:8.3f}"
            )
        return "\n".join(lines)


def ablation_grid(
    arms: Mapping[str, TrainConfig],
    seeds: Sequence[int],
    setup: Callable[[int], tuple[Dataset, PolicyParameters]],
) -> GridTable:
    """Run every arm on every seed; ``setup(seed)`` supplies dataset and base policy."""
    rows = []
    for arm, cfg in arms.items():
        for seed in seeds:
            dataset, policy = setup(seed)
            s = run_experiment(replace(cfg, seed=seed), dataset, policy)
            rows.append(
                {
                    "arm": arm,
                    "seed": seed,
                    "di_accuracy": s.di_accuracy,
                    "dimv_accuracy": s.dimv_accuracy,
                    "report_accuracy": s.report_accuracy,
                    "final_accuracy": s.final_accuracy,
                }
            )
    return GridTable(rows)
