"""Command-line front end: ``gen``, ``run``, ``baseline``, ``analyze``.

Run options can come from a flat ``key = value`` config file whose keys are
the :class:`~ttrl.trainer.TrainConfig` field names; flags override the file.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

from .analysis import bin_confidence_accuracy, fit_regression, write_bins, _write_csv
from .env import generate_dataset, load_dataset, save_dataset
from .evaluation import (
    OracleEvaluator,
    correctness_flags,
    direct_inference_accuracy,
    pseudo_label_accuracy,
    run_baselines,
)
from .grpo import GrpoConfig
from .labeling import load_labels
from .policy import init_policy
from .trainer import TrainConfig, TrainingAborted, run_adaptation, run_pseudo_label_phase

log = logging.getLogger("ttrl")

OUT_DIR_ENV = "TTRL_OUT_DIR"
MANIFEST = "manifest.json"

_GRPO_KEYS = {f.name for f in fields(GrpoConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"grpo"}
_INIT_KEYS = {"format_bias", "noise_scale"}
_INIT_DEFAULTS = {"format_bias": 4.0, "noise_scale": 0.0}

_ARM_NAMES = {("off", 1): "G-MV", ("off", 3): "+M", ("exp", 1): "+C", ("exp", 3): "+C+M"}


def _default_out() -> Path:
    return Path(os.environ.get(OUT_DIR_ENV, "runs"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- config handling ------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value file with TrainConfig field names")
    g = p.add_argument_group("training (defaults follow the reference hyperparameters)")
    g.add_argument("--m-votes", dest="m_votes", type=int)
    g.add_argument("--g-rollouts", dest="g_rollouts", type=int)
    g.add_argument("--temperature", type=float)
    g.add_argument("--steps", type=int)
    g.add_argument("--global-batch", dest="global_batch", type=int)
    g.add_argument("--report-step", dest="report_step", type=int)
    g.add_argument("--weight-kind", "--weight", dest="weight_kind", choices=["linear", "sqrt", "exp", "off"])
    g.add_argument("--mas-attempts", "--mas", dest="mas_attempts", type=int)
    g.add_argument("--mas-lazy", dest="mas_lazy", action="store_const", const=True)
    g.add_argument("--refresh-labels", dest="refresh_labels", action="store_const", const=True)
    g.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--epsilon", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    g.add_argument("--inner-epochs", dest="inner_epochs", type=int)
    g.add_argument("--accumulation-steps", dest="accumulation_steps", type=int)
    g.add_argument("--format-bias", dest="format_bias", type=float, help="base policy format logit bias")
    g.add_argument("--noise-scale", dest="noise_scale", type=float, help="base policy option-logit noise")


def _coerce(key: str, raw: str):
    if key in ("mas_lazy", "refresh_labels"):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if key == "weight_kind":
        return raw.strip()
    if key == "report_step" and raw.strip().lower() in ("", "none"):
        return None
    if key in ("m_votes", "g_rollouts", "steps", "global_batch", "report_step", "mas_attempts",
               "checkpoint_every", "seed", "inner_epochs", "accumulation_steps"):
        return int(raw)
    return float(raw)


def read_config_file(path: Path) -> dict:
    parser = configparser.ConfigParser()
    parser.read_string("[run]\n" + path.read_text(encoding="utf-8"))
    out = {}
    for key, raw in parser["run"].items():
        if key not in _TRAIN_KEYS | _GRPO_KEYS | _INIT_KEYS:
            raise ValueError(f"{path}: unknown config key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def effective_settings(args: argparse.Namespace) -> tuple[TrainConfig, dict]:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _TRAIN_KEYS | _GRPO_KEYS | _INIT_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    grpo = GrpoConfig(**{k: values[k] for k in _GRPO_KEYS if k in values})
    cfg = TrainConfig(grpo=grpo, **{k: values[k] for k in _TRAIN_KEYS if k in values})
    init = {k: values.get(k, _INIT_DEFAULTS[k]) for k in _INIT_KEYS}
    return cfg, init


# -- subcommands ----------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    weights = None
    if args.truth_weights:
        weights = [float(w) for w in args.truth_weights.split(",")]
    ds = generate_dataset(args.n, args.k, args.signal, args.seed, truth_weights=weights)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} questions (K={ds.k}, signal={args.signal}, seed={args.seed}) to {args.out}")
    return 0


def _artifacts(out: Path) -> dict:
    return {
        "labels": str(out / "labels.jsonl"),
        "metrics": str(out / "metrics.jsonl"),
        "report_checkpoint": str(out / "checkpoints" / "report.npz"),
        "final_checkpoint": str(out / "checkpoints" / "final.npz"),
        "base_checkpoint": str(out / "checkpoints" / "base.npz"),
    }


def execute_run(data: Path, out: Path, cfg: TrainConfig, init: dict, resume: bool = False) -> dict:
    """Pseudo-label + adaptation; writes artifacts under ``out`` and returns the manifest."""
    from .policy import save_checkpoint

    started = datetime.now(timezone.utc).isoformat()
    dataset = load_dataset(data, seed=cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / MANIFEST
    if manifest_path.exists():
        manifest_path.unlink()
    base = init_policy(dataset, init["format_bias"], cfg.seed, noise_scale=init["noise_scale"])
    (out / "checkpoints").mkdir(exist_ok=True)
    save_checkpoint(base, out / "checkpoints" / "base.npz")
    if not resume:
        for stale in ("labels.jsonl", "state.json"):
            (out / stale).unlink(missing_ok=True)
    # the training path only ever receives truth-free views
    labeled = run_pseudo_label_phase(base, dataset.views(), cfg, cache_path=out / "labels.jsonl")
    result = run_adaptation(base, labeled, cfg, evaluator=OracleEvaluator(dataset), out_dir=out, resume=resume)
    labels = [lq.label for lq in labeled]
    manifest = {
        "config": cfg.to_dict(),
        "init": init,
        "dataset": {"path": str(Path(data).resolve()), "sha256": _sha256(Path(data))},
        "artifacts": _artifacts(out),
        "seed": cfg.seed,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "results": {
            "di_accuracy": direct_inference_accuracy(base, dataset),
            "dimv_accuracy": pseudo_label_accuracy(labels, dataset),
            "report_accuracy": direct_inference_accuracy(result.report_policy, dataset),
            "final_accuracy": direct_inference_accuracy(result.policy, dataset),
        },
    }
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest


def cmd_run(args: argparse.Namespace) -> int:
    if args.manifest:
        prior = json.loads(args.manifest.read_text(encoding="utf-8"))
        cfg = TrainConfig.from_dict(prior["config"])
        init = prior["init"]
        data = args.data or Path(prior["dataset"]["path"])
        if _sha256(Path(data)) != prior["dataset"]["sha256"]:
            print(f"error: dataset {data} differs from the one recorded in the manifest", file=sys.stderr)
            return 2
    else:
        if args.data is None:
            print("error: --data is required (or --manifest)", file=sys.stderr)
            return 2
        cfg, init = effective_settings(args)
        data = args.data
    if not Path(data).exists():
        print(f"error: --data {data} does not exist", file=sys.stderr)
        return 2
    out = args.out_dir or _default_out() / f"run-seed{cfg.seed}"
    try:
        manifest = execute_run(Path(data), out, cfg, init, resume=args.resume)
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return 1
    r = manifest["results"]
    print(
        f"DI {r['di_accuracy']:.4f}  DIMV {r['dimv_accuracy']:.4f}  "
        f"report {r['report_accuracy']:.4f}  final {r['final_accuracy']:.4f}  -> {out}"
    )
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    cfg, init = effective_settings(args)
    dataset = load_dataset(args.data, seed=cfg.seed)
    base = init_policy(dataset, init["format_bias"], cfg.seed, noise_scale=init["noise_scale"])
    di, dimv = run_baselines(base, dataset, cfg)
    record = {"di_accuracy": di, "dimv_accuracy": dimv, "m_votes": cfg.m_votes, "seed": cfg.seed}
    if args.out:
        args.out.write_text(json.dumps(record) + "\n", encoding="utf-8")
    print(f"DI {di:.4f}  DIMV {dimv:.4f}")
    return 0


def _load_manifest(run_dir: Path) -> dict:
    path = run_dir / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"{run_dir} has no {MANIFEST}; the run is missing or incomplete")
    return json.loads(path.read_text(encoding="utf-8"))


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        manifests = [(d, _load_manifest(d)) for d in args.run_dirs]
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = args.out or args.run_dirs[0]
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if args.format == "csv" else "jsonl"
    if args.grid:
        rows = []
        for run_dir, m in manifests:
            c = m["config"]
            arm = _ARM_NAMES.get((c["weight_kind"], c["mas_attempts"]), f"{c['weight_kind']}/mas{c['mas_attempts']}")
            rows.append({"arm": arm, "seed": m["seed"], "run": str(run_dir), **m["results"]})
        _write_table(rows, out / f"grid.{ext}", args.format)
        for row in rows:
            print(f"{row['arm']:<8} seed {row['seed']:<4} report {row['report_accuracy']:.4f} final {row['final_accuracy']:.4f}")
        return 0
    for run_dir, m in manifests:
        dataset = load_dataset(m["dataset"]["path"])
        labels = load_labels(m["artifacts"]["labels"])
        bins = bin_confidence_accuracy([lab.confidence for lab in labels], correctness_flags(labels, dataset))
        summary = fit_regression(bins)
        target = out if len(manifests) == 1 else out / run_dir.name
        target.mkdir(parents=True, exist_ok=True)
        write_bins(bins, summary, target / f"bins.{ext}", fmt=args.format)
        (target / "regression.json").write_text(json.dumps(asdict(summary)) + "\n", encoding="utf-8")
        rows = [{"method": k.replace("_accuracy", ""), "accuracy": v} for k, v in m["results"].items()]
        _write_table(rows, target / f"comparison.{ext}", args.format)
        print(
            f"{run_dir}: slope {summary.slope:.3f} r {summary.pearson_r:.3f} "
            f"({summary.points_used} bins)" + (" [degenerate]" if summary.degenerate else "")
        )
    return 0


def _write_table(rows: list[dict], path: Path, fmt: str) -> None:
    if fmt == "csv":
        _write_csv(rows, path)
    else:
        path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttrl", description="Test-time RL on a synthetic multiple-choice task")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--signal", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--truth-weights", help="comma-separated answer marginal, e.g. 1,2,3,6")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="pseudo-label then adapt")
    p.add_argument("--data", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--manifest", type=Path, help="replay the configuration of a previous run")
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint in --out-dir")
    _add_train_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("baseline", help="direct inference and majority-vote accuracy")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path)
    _add_train_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("analyze", help="confidence/accuracy bins, regression, comparison tables")
    p.add_argument("run_dirs", type=Path, nargs="+")
    p.add_argument("--grid", action="store_true", help="tabulate several runs as an ablation grid")
    p.add_argument("--out", type=Path)
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.set_defaults(func=cmd_analyze)
    return parser


def _validate(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if args.command == "gen":
        if args.n < 1:
            parser.error("--n must be >= 1")
        if args.k < 2 or args.k > 26:
            parser.error("--k must be in [2, 26]")
        if args.signal < 0:
            parser.error("--signal must be >= 0")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    _validate(parser, args)
    try:
        return args.func(args)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
