"""
IrwGAN Trainer
=====================
The alternating optimization loop over six networks:

1. D_Y, D_X on the reweighted least-squares loss, all beta frozen
2. G, F jointly on total_g (adversarial + cycle + identity), beta frozen
3. beta_X on gan_g_xy + l_ess * ||beta_X||, with G and D_Y frozen
4. beta_Y on gan_g_yx + l_ess * ||beta_Y||, with F and D_X frozen

Micro-batches accumulate gradients; importance weights are always normalized
over the full logical batch. Alignment labels never enter this path: the
trainer receives label-stripped datasets and labels only feed the
SubsetTracker diagnostics.

Run directory layout:
- config.json, log.csv, epoch_summary.csv
- checkpoints/ep<k>.ckpt
- weights_X.csv, weights_Y.csv (+ .json summaries)
- samples/ep<k>.png
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch

from .config import ExperimentConfig, build_config, save_config, settings
from .core import Batch, DomainDataset, EpochSampler, check_compatible, images_to_torch, sample_batch, save_grid, torch_to_images
from .diffnet import (
    DTYPES, INIT_STD, NORMALIZATION, PADDING,
    AdamSettings, Network, NetworkKind, NetworkSpec,
    adam_step, backward, build_network, configure_determinism, forward, lr_schedule, set_requires_grad,
)
from .errors import ArtifactIOError, DatasetError, DivergenceError, MissingArtifactError, ShapeError
from .importance import (
    WeightReport,
    accumulate_score_grads,
    batch_weights,
    dataset_weights,
    scores_no_grad,
    softmax_score_grad,
    uniform_weights,
)
from .losses import LossReport, adv_errors, assemble, cycle_loss, disc_loss, gen_adv_loss, identity_loss
from .metrics import ess_statistic

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "irwgan-ckpt/1"
NETWORK_NAMES = ("G", "F", "D_X", "D_Y", "beta_X", "beta_Y")
GRID_SAMPLES = 8

STEP_COLUMNS = ["step", "epoch", "lr"] + LossReport.columns() + ["batch_ess_x", "batch_ess_y"]
EPOCH_COLUMNS = [
    "epoch", "lr", "steps", "ess_x", "ess_y",
    "adv_aligned_x", "adv_unaligned_x", "adv_aligned_y", "adv_unaligned_y", "wall_clock",
]
PROBE_COLUMNS = ["epoch", "mean_aligned", "mean_unaligned"]


# ============ LOG ============

@dataclass
class TrainLog:
    """Append-only record: one row per optimizer step, one per epoch"""
    steps: List[Dict[str, float]] = field(default_factory=list)
    epochs: List[Dict[str, float]] = field(default_factory=list)

    def append_step(self, row: Dict[str, float]) -> None:
        self.steps.append(row)

    def append_epoch(self, row: Dict[str, float]) -> None:
        self.epochs.append(row)

    def write(self, run_dir: Path) -> None:
        _write_csv(run_dir / "log.csv", STEP_COLUMNS, self.steps)
        _write_csv(run_dir / "epoch_summary.csv", EPOCH_COLUMNS, self.epochs)


def _fmt(value) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _write_csv(path: Path, columns: List[str], rows: List[Dict]) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(row.get(c, "")) for c in columns])
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc


# ============ DIAGNOSTICS ============

class SubsetTracker:
    """
    Mean adversarial error per alignment subset, per epoch. Holds the labels
    so the training path never has to; unlabeled domains report NaN.
    """

    def __init__(self, labels_x: Optional[np.ndarray], labels_y: Optional[np.ndarray]):
        self.labels = {"x": labels_x, "y": labels_y}
        self._reset()

    def _reset(self) -> None:
        self.sums = {(d, k): 0.0 for d in ("x", "y") for k in ("aligned", "unaligned")}
        self.counts = {key: 0 for key in self.sums}

    def record(self, domain: str, indices: np.ndarray, errors: np.ndarray) -> None:
        labels = self.labels[domain]
        if labels is None:
            return
        flags = labels[indices]
        for key, mask in (("aligned", flags), ("unaligned", ~flags)):
            if mask.any():
                self.sums[(domain, key)] += float(errors[mask].sum())
                self.counts[(domain, key)] += int(mask.sum())

    def close_epoch(self) -> Dict[str, float]:
        out = {}
        for (domain, key), total in self.sums.items():
            count = self.counts[(domain, key)]
            out[f"adv_{key}_{domain}"] = total / count if count else float("nan")
        self._reset()
        return out


# ============ STATE ============

@dataclass
class TrainState:
    """Six networks with their Adam states, counters, sampling state and the log"""
    config: ExperimentConfig
    nets: Dict[str, Network]
    rng: np.random.Generator
    samplers: Dict[str, EpochSampler]
    epoch: int = 0
    step: int = 0
    log: TrainLog = field(default_factory=TrainLog)

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.config.precision]

    def __getitem__(self, name: str) -> Network:
        return self.nets[name]


def network_specs(config: ExperimentConfig) -> Dict[str, NetworkSpec]:
    def spec(kind: NetworkKind) -> NetworkSpec:
        return NetworkSpec(kind=kind, channels=config.channels, resolution=config.resolution, sizing=config.network)

    return {
        "G": spec(NetworkKind.GENERATOR),
        "F": spec(NetworkKind.GENERATOR),
        "D_X": spec(NetworkKind.DISCRIMINATOR),
        "D_Y": spec(NetworkKind.DISCRIMINATOR),
        "beta_X": spec(NetworkKind.IMPORTANCE_BACKBONE),
        "beta_Y": spec(NetworkKind.IMPORTANCE_BACKBONE),
    }


def init_state(config: ExperimentConfig, sizes: Tuple[int, int] = (0, 0)) -> TrainState:
    """Seeded initialization: one child seed per network plus one sampling stream"""
    children = np.random.SeedSequence(config.seed).spawn(len(NETWORK_NAMES) + 1)
    dtype = DTYPES[config.precision]
    adam = AdamSettings.from_config(config)
    specs = network_specs(config)
    nets = {}
    for name, child in zip(NETWORK_NAMES, children):
        seed = int(child.generate_state(1, dtype=np.uint64)[0])
        nets[name] = build_network(name, specs[name], seed, dtype, adam)
    return TrainState(
        config=config,
        nets=nets,
        rng=np.random.default_rng(children[-1]),
        samplers={"x": EpochSampler(sizes[0]), "y": EpochSampler(sizes[1])},
    )


def draw_batches(state: TrainState, x: DomainDataset, y: DomainDataset) -> Tuple[Batch, Batch]:
    """X batch is always drawn before the Y batch from the shared stream"""
    n = state.config.batch_size
    if state.config.sampling == "iid":
        return sample_batch(x, n, state.rng), sample_batch(y, n, state.rng)
    return state.samplers["x"].draw(x, n, state.rng), state.samplers["y"].draw(y, n, state.rng)


# ============ ONE STEP ============

def _chunks(n: int, size: int) -> List[slice]:
    return [slice(s, min(s + size, n)) for s in range(0, n, size)]


def _frozen_weights(net: Network, images: torch.Tensor, learn: bool, chunk: int, indices: np.ndarray) -> torch.Tensor:
    if not learn:
        return torch.ones(images.shape[0], dtype=images.dtype)
    scores = scores_no_grad(net, images, chunk)
    return batch_weights(scores, indices).weights.detach()


def _guard(value: float, term: str, step: int) -> float:
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss term {term} at step {step}", step=step, term=term)
    return value


def _update_beta(
    net: Network,
    images: torch.Tensor,
    errors: torch.Tensor,
    lambda_ess: float,
    micro_batch: int,
    lr: float,
    step: int,
) -> None:
    """
    One step on (1/n) sum beta_i e_i + l_ess * ||beta||, e fixed. The gradient
    w.r.t. beta is taken over the full batch, pulled through the softmax once,
    then accumulated micro-batch by micro-batch.
    """
    n = images.shape[0]
    scores = scores_no_grad(net, images, micro_batch)
    beta = batch_weights(scores).weights
    grad_beta = errors / n + lambda_ess * beta / torch.linalg.vector_norm(beta)
    score_grad = softmax_score_grad(beta, grad_beta)
    if not torch.isfinite(score_grad).all():
        raise DivergenceError(f"non-finite gradient for {net.name} at step {step}", step=step, term=net.name)
    set_requires_grad([net], True)
    accumulate_score_grads(net, images, score_grad, micro_batch)
    adam_step(net.params, lr)


def train_step(
    state: TrainState,
    batch_x: Batch,
    batch_y: Batch,
    lr: float,
    tracker: Optional[SubsetTracker] = None,
) -> LossReport:
    """One alternating update of all six networks on one logical batch"""
    config = state.config
    G, F, D_X, D_Y = state["G"], state["F"], state["D_X"], state["D_Y"]
    B_X, B_Y = state["beta_X"], state["beta_Y"]
    step = state.step + 1

    x = batch_x.to_torch(state.dtype)
    y = batch_y.to_torch(state.dtype)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ShapeError("X and Y batches differ in size")
    slices = _chunks(n, config.micro_batch)

    set_requires_grad(state.nets.values(), False)
    wx = _frozen_weights(B_X, x, config.learn_beta_x, config.micro_batch, batch_x.indices)
    wy = _frozen_weights(B_Y, y, config.learn_beta_y, config.micro_batch, batch_y.indices)

    # (1) discriminators
    set_requires_grad([D_X, D_Y], True)
    disc_y = disc_x = 0.0
    for s in slices:
        with torch.no_grad():
            fake_y = forward(G, x[s])
            fake_x = forward(F, y[s])
        loss_dy = disc_loss(forward(D_Y, y[s]), forward(D_Y, fake_y), wy[s], wx[s], n)
        loss_dx = disc_loss(forward(D_X, x[s]), forward(D_X, fake_x), wx[s], wy[s], n)
        backward(loss_dy + loss_dx)
        disc_y += loss_dy.item()
        disc_x += loss_dx.item()
    _guard(disc_y, "disc_y", step)
    _guard(disc_x, "disc_x", step)
    adam_step(D_Y.params, lr)
    adam_step(D_X.params, lr)
    set_requires_grad([D_X, D_Y], False)

    # (2) generators, jointly
    set_requires_grad([G, F], True)
    gan_xy = gan_yx = cyc = idt = 0.0
    errors_x = torch.empty(n, dtype=x.dtype)
    errors_y = torch.empty(n, dtype=x.dtype)
    for s in slices:
        fake_y = forward(G, x[s])
        fake_x = forward(F, y[s])
        score_fake_y = forward(D_Y, fake_y)
        score_fake_x = forward(D_X, fake_x)
        l_xy = gen_adv_loss(score_fake_y, wx[s], n)
        l_yx = gen_adv_loss(score_fake_x, wy[s], n)
        l_cyc = cycle_loss(x[s], forward(F, fake_y), y[s], forward(G, fake_x), wx[s], wy[s], n)
        total = l_xy + l_yx + config.lambda_cyc * l_cyc
        if config.lambda_idt > 0:
            l_idt = identity_loss(x[s], forward(F, x[s]), y[s], forward(G, y[s]), wx[s], wy[s], n)
            total = total + config.lambda_idt * l_idt
        else:
            # logged only
            with torch.no_grad():
                l_idt = identity_loss(x[s], forward(F, x[s]), y[s], forward(G, y[s]), wx[s], wy[s], n)
        idt += l_idt.item()
        backward(total)
        errors_x[s] = adv_errors(score_fake_y).detach()
        errors_y[s] = adv_errors(score_fake_x).detach()
        gan_xy += l_xy.item()
        gan_yx += l_yx.item()
        cyc += l_cyc.item()
    for term, value in (("gan_g_xy", gan_xy), ("gan_g_yx", gan_yx), ("cyc", cyc), ("idt", idt)):
        _guard(value, term, step)
    adam_step(G.params, lr)
    adam_step(F.params, lr)
    set_requires_grad([G, F], False)

    if tracker is not None:
        tracker.record("x", batch_x.indices, errors_x.to(torch.float64).numpy())
        tracker.record("y", batch_y.indices, errors_y.to(torch.float64).numpy())

    # (3) + (4) importance networks against the frozen translators
    for learn, net, images, gen, disc, pre_errors in (
        (config.learn_beta_x, B_X, x, G, D_Y, errors_x),
        (config.learn_beta_y, B_Y, y, F, D_X, errors_y),
    ):
        if not learn:
            continue
        if config.joint_beta_update:
            errors = pre_errors
        else:
            with torch.no_grad():
                errors = torch.cat([adv_errors(disc.module(gen.module(images[s]))) for s in slices])
        _update_beta(net, images, errors, config.lambda_ess, config.micro_batch, lr, step)

    report = assemble(
        {
            "gan_g_xy": gan_xy,
            "gan_g_yx": gan_yx,
            "disc_y": disc_y,
            "disc_x": disc_x,
            "ess_x": torch.linalg.vector_norm(wx).item(),
            "ess_y": torch.linalg.vector_norm(wy).item(),
            "cyc": cyc,
            "idt": idt,
        },
        config,
    )
    report.check_finite(step)
    state.step = step
    state.log.append_step({
        "step": step,
        "epoch": state.epoch + 1,
        "lr": lr,
        **report.to_dict(),
        "batch_ess_x": ess_statistic(wx.to(torch.float64).numpy()),
        "batch_ess_y": ess_statistic(wy.to(torch.float64).numpy()),
    })
    return report


# ============ CHECKPOINTS ============

def save_checkpoint(state: TrainState, path: Path) -> None:
    """Specs, parameters, Adam states, counters, sampling state and log in one file"""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": state.config.model_dump(mode="json"),
        "specs": {name: net.spec.to_dict() for name, net in state.nets.items()},
        "nets": {name: net.params.state_dict() for name, net in state.nets.items()},
        "epoch": state.epoch,
        "step": state.step,
        "rng": state.rng.bit_generator.state,
        "samplers": {k: s.state_dict() for k, s in state.samplers.items()},
        "log": {"steps": state.log.steps, "epochs": state.log.epochs},
        "metadata": {"normalization": NORMALIZATION, "padding": PADDING, "init_std": INIT_STD},
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: Path) -> TrainState:
    if not path.exists():
        raise MissingArtifactError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise ArtifactIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ArtifactIOError(f"unsupported checkpoint format {payload.get('format')!r} in {path}")

    config = build_config(payload["config"])
    state = init_state(config)
    for name, net in state.nets.items():
        net.params.load_state_dict(payload["nets"][name])
    state.epoch = int(payload["epoch"])
    state.step = int(payload["step"])
    state.rng.bit_generator.state = payload["rng"]
    for key, sampler_state in payload["samplers"].items():
        state.samplers[key].load_state_dict(sampler_state)
    state.log = TrainLog(steps=list(payload["log"]["steps"]), epochs=list(payload["log"]["epochs"]))
    return state


def latest_checkpoint(run_dir: Path) -> Path:
    ckpts = sorted((run_dir / "checkpoints").glob("ep*.ckpt"), key=lambda p: int(p.stem[2:]))
    if not ckpts:
        raise MissingArtifactError(f"no checkpoint in {run_dir}")
    return ckpts[-1]


# ============ ARTIFACTS ============

def translate(net: Network, images: np.ndarray, chunk: int, dtype: torch.dtype) -> np.ndarray:
    """Apply a generator to an (N, H, W, C) block without recording a graph"""
    tensor = images_to_torch(images, dtype)
    parts = []
    with torch.no_grad():
        for s in _chunks(tensor.shape[0], chunk):
            parts.append(forward(net, tensor[s]))
    return torch_to_images(torch.cat(parts))


def write_sample_grid(state: TrainState, x: DomainDataset, y: DomainDataset, path: Path) -> None:
    chunk, dtype = state.config.eval_chunk, state.dtype
    xs = x.samples[: min(GRID_SAMPLES, len(x))]
    ys = y.samples[: min(GRID_SAMPLES, len(y))]
    gx = translate(state["G"], xs, chunk, dtype)
    fy = translate(state["F"], ys, chunk, dtype)
    rows = [xs, gx, translate(state["F"], gx, chunk, dtype)]
    if len(ys) == len(xs):
        rows += [ys, fy, translate(state["G"], fy, chunk, dtype)]
    save_grid(rows, path)


def weight_reports(state: TrainState, x: DomainDataset, y: DomainDataset) -> Tuple[WeightReport, WeightReport]:
    """
    Dataset-global weight reports; labels, when present, are attached for
    evaluation only. A domain trained with fixed weights reports exactly 1.
    """
    cfg = state.config

    def report(learn: bool, net: Network, dataset: DomainDataset) -> WeightReport:
        if not learn:
            return uniform_weights(dataset)
        return dataset_weights(net, dataset, cfg.eval_chunk, cfg.batch_size, state.dtype)

    return report(cfg.learn_beta_x, state["beta_X"], x), report(cfg.learn_beta_y, state["beta_Y"], y)


def write_weight_reports(state: TrainState, x: DomainDataset, y: DomainDataset, run_dir: Path) -> None:
    report_x, report_y = weight_reports(state, x, y)
    for report, tag in ((report_x, "X"), (report_y, "Y")):
        report.write_csv(run_dir / f"weights_{tag}.csv")
        report.write_summary(run_dir / f"weights_{tag}.json")


# ============ TRAINING ============

def iters_per_epoch(config: ExperimentConfig, x: DomainDataset, y: DomainDataset) -> int:
    return config.iters_per_epoch or math.ceil(max(len(x), len(y)) / config.batch_size)


def _check_datasets(config: ExperimentConfig, x: DomainDataset, y: DomainDataset) -> None:
    check_compatible([x, y])
    expected = (config.resolution, config.resolution, config.channels)
    if x.shape != expected:
        raise ShapeError(f"datasets are {x.shape}, config expects {expected}")


def run_training(
    x: DomainDataset,
    y: DomainDataset,
    config: ExperimentConfig,
    run_dir: Optional[Path] = None,
    state: Optional[TrainState] = None,
    on_epoch: Optional[Callable[[TrainState, int], None]] = None,
) -> TrainState:
    """
    Train for config.epochs epochs (continuing from `state` if given), writing
    log, checkpoints, sample grids and final weight reports into run_dir.
    """
    _check_datasets(config, x, y)
    tracker = SubsetTracker(x.labels, y.labels)
    x_train, y_train = x.stripped(), y.stripped()

    if state is None:
        state = init_state(config, (len(x), len(y)))
    elif state.samplers["x"].size == 0:
        state.samplers = {"x": EpochSampler(len(x)), "y": EpochSampler(len(y))}
    configure_determinism(settings.num_threads)
    iters = iters_per_epoch(config, x, y)

    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        save_config(config, run_dir / "config.json")

    logger.info(f"[Trainer] Epochs {state.epoch + 1}..{config.epochs}, {iters} steps each, seed {config.seed}")
    for epoch in range(state.epoch + 1, config.epochs + 1):
        lr = lr_schedule(epoch, config)
        started = time.perf_counter()
        batch_ess = {"x": [], "y": []}
        for _ in range(iters):
            batch_x, batch_y = draw_batches(state, x_train, y_train)
            train_step(state, batch_x, batch_y, lr, tracker)
            batch_ess["x"].append(state.log.steps[-1]["batch_ess_x"])
            batch_ess["y"].append(state.log.steps[-1]["batch_ess_y"])
        state.epoch = epoch
        last = state.log.steps[-1]
        state.log.append_epoch({
            "epoch": epoch,
            "lr": lr,
            "steps": iters,
            "ess_x": float(np.mean(batch_ess["x"])),
            "ess_y": float(np.mean(batch_ess["y"])),
            **tracker.close_epoch(),
            "wall_clock": time.perf_counter() - started,
        })
        logger.info(
            f"[Trainer] Epoch {epoch}/{config.epochs} lr={lr:.3g} "
            f"total_g={last['total_g']:.4f} ess_x={state.log.epochs[-1]['ess_x']:.2f}"
        )

        if run_dir is not None:
            state.log.write(run_dir)
            if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
                save_checkpoint(state, run_dir / "checkpoints" / f"ep{epoch}.ckpt")
            if config.sample_grid_every and (epoch % config.sample_grid_every == 0 or epoch == config.epochs):
                write_sample_grid(state, x, y, run_dir / "samples" / f"ep{epoch}.png")
        if on_epoch is not None:
            on_epoch(state, epoch)

    if run_dir is not None:
        write_weight_reports(state, x, y, run_dir)
        logger.info(f"[Trainer] Run artifacts written to {run_dir}")
    return state


def resume_training(
    x: DomainDataset,
    y: DomainDataset,
    checkpoint: Path,
    run_dir: Optional[Path] = None,
) -> TrainState:
    state = load_checkpoint(checkpoint)
    return run_training(x, y, state.config, run_dir, state=state)


# ============ QUICKER-TRANSLATION PROBE ============

def subset_adv_errors(state: TrainState, y: DomainDataset) -> Tuple[float, float]:
    """Mean (1 - D_X(F(y)))^2 over the aligned and unaligned parts of Y"""
    if y.labels is None:
        raise DatasetError("hypothesis probe needs an alignment-labeled Y domain")
    images = images_to_torch(y.samples, state.dtype)
    parts = []
    with torch.no_grad():
        for s in _chunks(images.shape[0], state.config.eval_chunk):
            parts.append(adv_errors(state["D_X"].module(state["F"].module(images[s]))))
    errors = torch.cat(parts).to(torch.float64).numpy()
    labels = np.asarray(y.labels, dtype=bool)
    aligned = float(errors[labels].mean()) if labels.any() else float("nan")
    unaligned = float(errors[~labels].mean()) if (~labels).any() else float("nan")
    return aligned, unaligned


def hypothesis_probe(
    x: DomainDataset,
    y: DomainDataset,
    config: ExperimentConfig,
    run_dir: Optional[Path] = None,
) -> List[Dict[str, float]]:
    """
    Train with beta fixed to 1 and record the per-subset generator adversarial
    error on Y every epoch (epoch 0 = initialization). Labels are read only
    by the evaluation pass.
    """
    if y.labels is None:
        raise DatasetError("hypothesis probe needs an alignment-labeled Y domain")
    config = config.model_copy(update={"learn_beta_x": False, "learn_beta_y": False})
    state = init_state(config, (len(x), len(y)))
    rows: List[Dict[str, float]] = []

    def record(st: TrainState, epoch: int) -> None:
        aligned, unaligned = subset_adv_errors(st, y)
        rows.append({"epoch": epoch, "mean_aligned": aligned, "mean_unaligned": unaligned})

    record(state, 0)
    run_training(x, y, config, run_dir, state=state, on_epoch=record)
    if run_dir is not None:
        _write_csv(run_dir / "probe.csv", PROBE_COLUMNS, rows)
    return rows
