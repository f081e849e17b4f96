"""
IrwGAN Command Line
=====================
Subcommands:
- train       train one run (synthetic pair or image directories)
- eval        FID/KID both directions + beta reports for a finished run
- sweep-ess   one run per lambda_ess value, compared in sweep.csv
- diagnose    per-epoch subset adversarial errors with beta fixed to 1
- translate   apply G or F to a directory of PNGs
- synth       materialize a synthetic pair to PNG directories
- stress      one run per contamination ratio, compared in stress.csv

Exit codes: 0 ok, 2 usage, 3 divergence, 4 missing artifact, 5 I/O.
"""

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from . import __version__
from .config import ExperimentConfig, apply_overrides, load_config, resolve_seed, settings
from .core import DomainDataset, load_dataset, save_png
from .errors import ArtifactIOError, ConfigError, IrwError
from .metrics import evaluate_pair
from .synthdata import (
    SynthSpec, load_synth_spec, make_pair, materialize, separability_probe, synth_experiment_config,
)
from .trainer import (
    TrainState, hypothesis_probe, latest_checkpoint, load_checkpoint,
    run_training, translate, weight_reports,
)

logger = logging.getLogger(__name__)

METRIC_FIELDS = ["fid", "kid", "kid_x100", "precision", "recall", "accuracy", "ess_x", "ess_y"]
SWEEP_COLUMNS = ["lambda_ess", "ess_x", "ess_y", "beta_accuracy", "fid"]
STRESS_COLUMNS = ["ratio", "beta_accuracy_x", "beta_accuracy_y", "ess_x", "ess_y", "fid"]
PROBE_WARMUP = 10


# ============ MANIFEST ============

class RunManifest(BaseModel):
    """What produced a run directory; written once, before the first step"""
    tool_version: str
    command: str
    seed: int
    created_at: str
    config: Dict[str, Any]
    datasets: List[Dict[str, Any]]


def write_manifest(run_dir: Path, command: str, config: ExperimentConfig, datasets: List[DomainDataset]) -> None:
    path = run_dir / "manifest.json"
    if path.exists():
        return
    manifest = RunManifest(
        tool_version=__version__,
        command=command,
        seed=config.seed,
        created_at=datetime.now().isoformat(timespec="seconds"),
        config=config.model_dump(mode="json"),
        datasets=[ds.fingerprint() for ds in datasets],
    )
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc


# ============ HELPERS ============

def _parse_floats(raw: str, key: str) -> List[float]:
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--{key} must be a comma-separated list of numbers: {raw}", key=key) from exc
    return values


def _out_dir(args: argparse.Namespace, config: Optional[ExperimentConfig] = None) -> Path:
    if args.out:
        return Path(args.out)
    seed = config.seed if config is not None else 0
    return Path(settings.runs_dir) / f"{args.command}-seed{seed}"


def _resolve_config(args: argparse.Namespace, spec: Optional[SynthSpec]) -> ExperimentConfig:
    if args.config:
        config = load_config(args.config)
    elif spec is not None:
        config = synth_experiment_config(spec)
    else:
        config = ExperimentConfig()
    config = apply_overrides(config, args.set or [])
    return resolve_seed(config, args.seed)


def _load_pair(args: argparse.Namespace, config: ExperimentConfig) -> Tuple[DomainDataset, DomainDataset]:
    if getattr(args, "synth", None):
        return make_pair(load_synth_spec(args.synth))
    if not (args.data_x and args.data_y):
        raise ConfigError("give --synth or both --data-x and --data-y", key="data")
    x = load_dataset(args.data_x, config.resolution, args.labels_x, "X", config.channels)
    y = load_dataset(args.data_y, config.resolution, args.labels_y, "Y", config.channels)
    return x, y


def _write_rows(path: Path, columns: List[str], rows: List[Dict[str, Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def evaluate_state(
    state: TrainState,
    x: DomainDataset,
    y: DomainDataset,
    extractor: str = "raw-pixels",
    out_dir: Optional[Path] = None,
    plot: bool = False,
) -> Dict[str, Any]:
    """
    Translate both test sets, score FID/KID per direction and report beta on
    both domains. Top-level fid/kid are the X->Y direction; precision, recall
    and accuracy are beta_X's (None when X is unlabeled).
    """
    cfg = state.config
    gx = translate(state["G"], x.samples, cfg.eval_chunk, state.dtype)
    fy = translate(state["F"], y.samples, cfg.eval_chunk, state.dtype)
    x2y = evaluate_pair(gx, y.samples, extractor)
    y2x = evaluate_pair(fy, x.samples, extractor)

    report_x, report_y = weight_reports(state, x, y)
    summary_x, summary_y = report_x.summary(), report_y.summary()
    beta_x = summary_x.get("beta_report") or {}

    metrics = {
        "fid": x2y["fid"],
        "kid": x2y["kid"],
        "kid_x100": x2y["kid_x100"],
        "precision": beta_x.get("precision"),
        "recall": beta_x.get("recall"),
        "accuracy": beta_x.get("accuracy"),
        "ess_x": summary_x["ess"],
        "ess_y": summary_y["ess"],
        "extractor": extractor,
        "directions": {"x2y": x2y, "y2x": y2x},
        "beta": {"X": summary_x.get("beta_report"), "Y": summary_y.get("beta_report")},
        "ess_reciprocal_norm": {"X": summary_x["ess_reciprocal_norm"], "Y": summary_y["ess_reciprocal_norm"]},
    }

    if out_dir is not None:
        report_x.write_histogram_csv(out_dir / "histogram_X.csv")
        report_y.write_histogram_csv(out_dir / "histogram_Y.csv")
        if plot:
            from .plots import plot_histogram

            plot_histogram(report_x.histogram(), out_dir / "histogram_X.png", "beta_X")
            plot_histogram(report_y.histogram(), out_dir / "histogram_Y.png", "beta_Y")
    return metrics


# ============ COMMANDS ============

def cmd_train(args: argparse.Namespace) -> None:
    state: Optional[TrainState] = None
    if args.resume:
        # a resumed run keeps the checkpoint's config
        if args.config or args.set or args.seed is not None:
            raise ConfigError("--config, --set and --seed cannot be combined with --resume", key="resume")
        state = load_checkpoint(Path(args.resume))
        config = state.config
    else:
        spec = load_synth_spec(args.synth) if args.synth else None
        config = _resolve_config(args, spec)
    x, y = _load_pair(args, config)
    run_dir = _out_dir(args, config)
    write_manifest(run_dir, "train", config, [x, y])

    state = run_training(x, y, config, run_dir, state=state)
    last = state.log.steps[-1] if state.log.steps else {}
    print(f"✓ Trained {state.step} steps over {state.epoch} epochs into {run_dir}")
    if last:
        print(f"  total_g={last['total_g']:.4f} ess_x={last['batch_ess_x']:.2f} ess_y={last['batch_ess_y']:.2f}")


def cmd_eval(args: argparse.Namespace) -> None:
    run_dir = Path(args.run)
    state = load_checkpoint(latest_checkpoint(run_dir))
    config = state.config
    if args.synth:
        x, y = make_pair(load_synth_spec(args.synth))
    elif args.test_x and args.test_y:
        x = load_dataset(args.test_x, config.resolution, args.labels_x, "X", config.channels)
        y = load_dataset(args.test_y, config.resolution, args.labels_y, "Y", config.channels)
    else:
        raise ConfigError("give --synth or both --test-x and --test-y", key="test")

    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = evaluate_state(state, x, y, args.extractor, out_dir, args.plot)
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2), encoding="utf-8")
    print(f"✓ Metrics written to {out_dir / 'metrics.json'}")
    print(f"  fid={metrics['fid']:.4f} kid_x100={metrics['kid_x100']:.4f} accuracy={metrics['accuracy']}")


def _sweep_job(job: Tuple[float, Dict[str, Any], Dict[str, Any], str]) -> Dict[str, Any]:
    """One sweep point; module-level so it can run in a worker process"""
    value, config_data, spec_data, run_dir = job
    config = ExperimentConfig.model_validate(config_data)
    x, y = make_pair(SynthSpec.model_validate(spec_data))
    path = Path(run_dir)
    write_manifest(path, "sweep-ess", config, [x, y])
    state = run_training(x, y, config, path)
    metrics = evaluate_state(state, x, y, out_dir=path)
    (path / "metrics.json").write_text(json.dumps(metrics, indent=2), encoding="utf-8")
    return {
        "lambda_ess": value,
        "ess_x": metrics["ess_x"],
        "ess_y": metrics["ess_y"],
        "beta_accuracy": metrics["accuracy"],
        "fid": metrics["fid"],
    }


def cmd_sweep_ess(args: argparse.Namespace) -> None:
    values = _parse_floats(args.values, "values")
    if len(values) < 2:
        raise ConfigError("--values needs at least 2 lambda_ess values", key="values")
    spec = load_synth_spec(args.synth)
    base = _resolve_config(args, spec)
    out = _out_dir(args, base)
    out.mkdir(parents=True, exist_ok=True)

    jobs = []
    for i, value in enumerate(values):
        seed = base.seed + i if args.parallel else base.seed
        config = base.model_copy(update={"lambda_ess": value, "seed": seed})
        jobs.append((value, config.model_dump(mode="json"), spec.model_dump(mode="json"),
                     str(out / f"lambda_ess_{value:g}")))

    logger.info(f"[Sweep] lambda_ess over {values} ({'parallel' if args.parallel else 'sequential'})")
    if args.parallel:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(job) for job in jobs]

    _write_rows(out / "sweep.csv", SWEEP_COLUMNS, rows)
    if args.plot:
        from .plots import plot_curves

        plot_curves(rows, "lambda_ess", ["ess_x", "ess_y"], out / "sweep.png", "ESS vs lambda_ess")
    print(f"✓ Sweep of {len(rows)} runs written to {out / 'sweep.csv'}")


def cmd_diagnose(args: argparse.Namespace) -> None:
    spec = load_synth_spec(args.synth)
    config = _resolve_config(args, spec)
    x, y = make_pair(spec)
    out = _out_dir(args, config)
    write_manifest(out, "diagnose", config, [x, y])
    rows = hypothesis_probe(x, y, config, out)

    later = [r for r in rows if r["epoch"] > PROBE_WARMUP]
    if later:
        share = np.mean([r["mean_unaligned"] >= r["mean_aligned"] for r in later])
        print(f"  unaligned >= aligned in {share:.0%} of epochs after warmup")
    if args.plot:
        from .plots import plot_curves

        plot_curves(rows, "epoch", ["mean_aligned", "mean_unaligned"], out / "probe.png", "(1 - D_X(F(y)))^2")
    print(f"✓ Probe written to {out / 'probe.csv'}")


def cmd_translate(args: argparse.Namespace) -> None:
    state = load_checkpoint(latest_checkpoint(Path(args.run)))
    config = state.config
    dataset = load_dataset(args.input, config.resolution, channels=config.channels)
    net = state["G"] if args.direction == "x2y" else state["F"]
    outputs = translate(net, dataset.samples, config.eval_chunk, state.dtype)

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for i in range(len(dataset)):
            save_png(outputs[i], out / dataset.filename(i))
    except OSError as exc:
        raise ArtifactIOError(f"cannot write translations to {out}: {exc}") from exc
    print(f"✓ Translated {len(dataset)} images ({args.direction}) into {out}")


def cmd_synth(args: argparse.Namespace) -> None:
    spec = load_synth_spec(args.synth)
    out = Path(args.out)
    x, y = materialize(spec, out)
    print(f"✓ Synthetic pair written to {out} ({len(x)} + {len(y)} samples)")
    for ds in (x, y):
        aligned, unaligned = ds.samples[ds.labels], ds.samples[~ds.labels]
        if len(aligned) >= 5 and len(unaligned) >= 5:
            accuracy = separability_probe(aligned, unaligned)
            print(f"  {ds.name}: content probe accuracy {accuracy:.3f}")


def cmd_stress(args: argparse.Namespace) -> None:
    ratios = _parse_floats(args.ratios, "ratios")
    if not ratios:
        raise ConfigError("--ratios needs at least one value", key="ratios")
    spec = load_synth_spec(args.synth)
    base = _resolve_config(args, spec)
    out = _out_dir(args, base)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for ratio in ratios:
        spec_r = spec.model_copy(update={"ratios": (ratio, ratio)})
        x, y = make_pair(spec_r)
        run_dir = out / f"ratio_{ratio:g}"
        write_manifest(run_dir, "stress", base, [x, y])
        state = run_training(x, y, base, run_dir)
        metrics = evaluate_state(state, x, y, out_dir=run_dir)
        (run_dir / "metrics.json").write_text(json.dumps(metrics, indent=2), encoding="utf-8")
        rows.append({
            "ratio": ratio,
            "beta_accuracy_x": metrics["beta"]["X"]["accuracy"] if metrics["beta"]["X"] else None,
            "beta_accuracy_y": metrics["beta"]["Y"]["accuracy"] if metrics["beta"]["Y"] else None,
            "ess_x": metrics["ess_x"],
            "ess_y": metrics["ess_y"],
            "fid": metrics["fid"],
        })
        logger.info(f"[Stress] ratio {ratio:g} done")

    _write_rows(out / "stress.csv", STRESS_COLUMNS, rows)
    if args.plot:
        from .plots import plot_curves

        plot_curves(rows, "ratio", ["beta_accuracy_x", "beta_accuracy_y"], out / "stress.png", "beta accuracy vs ratio")
    print(f"✓ Stress study of {len(rows)} ratios written to {out / 'stress.csv'}")


# ============ PARSER ============

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="Experiment config JSON")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Dotted-key override, repeatable")
    p.add_argument("--seed", type=int, help="Overrides config seed and IRW_SEED")
    p.add_argument("--out", help="Output directory (default: under IRW_RUNS_DIR)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irwgan", description="Importance-reweighted unpaired image translation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train one run")
    _add_config_flags(p)
    p.add_argument("--synth", help="Synthetic preset name or synth.json path")
    p.add_argument("--data-x", help="Directory of domain X PNGs")
    p.add_argument("--data-y", help="Directory of domain Y PNGs")
    p.add_argument("--labels-x", help="Alignment labels for X (filename,0|1)")
    p.add_argument("--labels-y", help="Alignment labels for Y (filename,0|1)")
    p.add_argument("--resume", help="Checkpoint to continue from")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a finished run")
    p.add_argument("--run", required=True, help="Run directory")
    p.add_argument("--synth", help="Evaluate against a synthetic pair")
    p.add_argument("--test-x", help="Directory of X test PNGs")
    p.add_argument("--test-y", help="Directory of Y test PNGs")
    p.add_argument("--labels-x", help="Alignment labels for the X test set")
    p.add_argument("--labels-y", help="Alignment labels for the Y test set")
    p.add_argument("--extractor", default="raw-pixels", help="Feature extractor for FID/KID")
    p.add_argument("--out", help="Where to write metrics.json (default: the run directory)")
    p.add_argument("--plot", action="store_true", help="Also render histogram PNGs")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep-ess", help="One run per lambda_ess value")
    _add_config_flags(p)
    p.add_argument("--values", required=True, help="Comma-separated lambda_ess values")
    p.add_argument("--synth", default="default", help="Synthetic preset name or synth.json path")
    p.add_argument("--parallel", action="store_true", help="Run values in worker processes (seed + index)")
    p.add_argument("--workers", type=int, default=None, help="Worker processes for --parallel")
    p.add_argument("--plot", action="store_true", help="Also render sweep.png")
    p.set_defaults(handler=cmd_sweep_ess)

    p = sub.add_parser("diagnose", help="Per-epoch subset adversarial error with beta fixed to 1")
    _add_config_flags(p)
    p.add_argument("--synth", default="default", help="Synthetic preset name or synth.json path")
    p.add_argument("--plot", action="store_true", help="Also render probe.png")
    p.set_defaults(handler=cmd_diagnose)

    p = sub.add_parser("translate", help="Apply G (x2y) or F (y2x) to a PNG directory")
    p.add_argument("--run", required=True, help="Run directory")
    p.add_argument("--input", required=True, help="Directory of input PNGs")
    p.add_argument("--direction", choices=["x2y", "y2x"], default="x2y")
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(handler=cmd_translate)

    p = sub.add_parser("synth", help="Materialize a synthetic pair")
    p.add_argument("--synth", default="default", help="Synthetic preset name or synth.json path")
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("stress", help="One run per contamination ratio")
    _add_config_flags(p)
    p.add_argument("--ratios", default="0.1,0.5,1.0", help="Comma-separated contamination ratios")
    p.add_argument("--synth", default="default", help="Synthetic preset name or synth.json path")
    p.add_argument("--plot", action="store_true", help="Also render stress.png")
    p.set_defaults(handler=cmd_stress)

    return parser


def configure_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        args.handler(args)
    except IrwError as exc:
        print(f"✗ {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"✗ {exc}", file=sys.stderr)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
