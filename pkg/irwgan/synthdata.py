"""
IrwGAN Synthetic Domains
Renders images from (content category C, style S, random input E) with known
alignment ground truth.

- C picks a shape family (ellipse, cross, stripes, blob)
- E (a seed) fixes pose: position jitter, scale, rotation
- S is style_x (bright shape on dark ground) or style_y, which is the
  pixel-wise negation of style_x plus a fixed texture overlay

The aligned subsets share C and differ only in S, so the aligned translation
is a fixed pixel-wise map; contaminants carry a C the other domain lacks.
"""

import json
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import cross_val_score

from .config import ExperimentConfig, desk_network
from .core import DomainDataset, compose_unaligned, write_dataset
from .errors import ConfigError, DatasetError

logger = logging.getLogger(__name__)


class Content(str, Enum):
    ELLIPSE = "ellipse"
    CROSS = "cross"
    STRIPES = "stripes"
    BLOB = "blob"


class Style(str, Enum):
    X = "style_x"
    Y = "style_y"


class GenSpec(BaseModel):
    """Everything render() needs besides the E seed"""

    model_config = ConfigDict(extra="forbid")

    content: Content
    style: Style = Style.X
    resolution: int = Field(default=16, ge=4)
    jitter: float = Field(default=0.08, ge=0)  # centre offset, fraction of the image
    scale_range: Tuple[float, float] = (0.15, 0.28)
    rotation: float = Field(default=0.5, ge=0)  # radians, symmetric range
    texture: float = Field(default=0.2, ge=0, le=1)  # style_y overlay amplitude


# ============ RENDERING ============

def _soft(distance_px: np.ndarray) -> np.ndarray:
    """Anti-aliased coverage from a signed distance in pixels (positive inside)"""
    return np.clip(distance_px + 0.5, 0.0, 1.0)


def _texture(resolution: int) -> np.ndarray:
    i = np.arange(resolution)
    return np.outer(np.cos(np.pi * i / 2.0), np.cos(np.pi * i / 2.0))


def _pose(e_seed: int, spec: GenSpec) -> Tuple[float, float, float, float, np.random.Generator]:
    rng = np.random.default_rng(e_seed)
    dx, dy = rng.uniform(-spec.jitter, spec.jitter, size=2)
    scale = rng.uniform(*spec.scale_range)
    angle = rng.uniform(-spec.rotation, spec.rotation)
    return dx, dy, scale, angle, rng


def _coverage(spec: GenSpec, e_seed: int) -> np.ndarray:
    res = spec.resolution
    dx, dy, scale, angle, rng = _pose(e_seed, spec)
    centres = (np.arange(res) + 0.5) / res - 0.5
    qy, qx = np.meshgrid(centres - dy, centres - dx, indexing="ij")
    cos, sin = np.cos(angle), np.sin(angle)
    px = cos * qx + sin * qy
    py = -sin * qx + cos * qy

    if spec.content == Content.ELLIPSE:
        a, b = scale, 0.7 * scale
        r = np.sqrt((px / a) ** 2 + (py / b) ** 2)
        return _soft((1.0 - r) * b * res)
    if spec.content == Content.CROSS:
        half = 0.3 * scale
        bar_h = _soft((half - np.abs(py)) * res)
        bar_v = _soft((half - np.abs(px)) * res)
        return np.maximum(bar_h, bar_v)
    if spec.content == Content.STRIPES:
        period = 1.2 * scale
        phase = np.mod(py, period) - period / 2.0
        return _soft((period / 4.0 - np.abs(phase)) * res)
    # blob: thresholded sum of three Gaussian bumps around the pose centre
    bumps = rng.uniform(-0.6 * scale, 0.6 * scale, size=(3, 2))
    sigma = 0.45 * scale
    field_ = sum(np.exp(-((px - bx) ** 2 + (py - by) ** 2) / (2 * sigma ** 2)) for bx, by in bumps)
    return np.clip((field_ - 0.5) * 4.0 + 0.5, 0.0, 1.0)


def render(spec: GenSpec, e_seed: int) -> np.ndarray:
    """Pure function of (C, S, E): a (res, res, 1) image in [-1, 1]"""
    image = 2.0 * _coverage(spec, e_seed) - 1.0
    if spec.style == Style.Y:
        image = -image
        if spec.texture > 0:
            image = np.clip(image + spec.texture * _texture(spec.resolution), -1.0, 1.0)
    return image[:, :, None]


def render_many(spec: GenSpec, e_seeds: np.ndarray, name: str) -> DomainDataset:
    samples = np.stack([render(spec, int(e)) for e in e_seeds])
    filenames = tuple(f"{spec.content.value}_{int(e):020d}.png" for e in e_seeds)
    return DomainDataset(samples=samples, name=name, filenames=filenames)


# ============ PAIRS ============

class SynthSpec(BaseModel):
    """Describes one generated pair of unaligned domains (synth.json)"""

    model_config = ConfigDict(extra="forbid")

    aligned_content: Content = Content.ELLIPSE
    contaminant_x: Content = Content.CROSS
    contaminant_y: Content = Content.STRIPES
    sizes: Tuple[int, int] = (200, 200)
    ratios: Tuple[float, float] = (0.5, 0.5)
    resolution: int = Field(default=16, ge=4)
    jitter: float = 0.08
    scale_range: Tuple[float, float] = (0.15, 0.28)
    rotation: float = 0.5
    texture: float = 0.2
    seed: int = 0

    def gen_spec(self, content: Content, style: Style) -> GenSpec:
        return GenSpec(
            content=content,
            style=style,
            resolution=self.resolution,
            jitter=self.jitter,
            scale_range=self.scale_range,
            rotation=self.rotation,
            texture=self.texture,
        )


PRESETS: Dict[str, SynthSpec] = {
    "default": SynthSpec(),
    "tiny": SynthSpec(sizes=(12, 12), ratios=(0.5, 0.5)),
}


def load_synth_spec(name_or_path: str) -> SynthSpec:
    """A preset name or a path to a synth.json file"""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path].model_copy()
    path = Path(name_or_path)
    if not path.exists():
        raise ConfigError(f"unknown synth preset or file: {name_or_path}", key="synth")
    try:
        return SynthSpec.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (ValidationError, json.JSONDecodeError) as exc:
        raise ConfigError(f"invalid synth file {path}: {exc}", key="synth") from exc


def _seeds(rng: np.random.Generator, count: int) -> np.ndarray:
    return rng.integers(0, 2 ** 62, size=count, dtype=np.int64)


def make_unaligned_pair(
    aligned_content: Content,
    contaminant_x: Content,
    contaminant_y: Content,
    sizes: Tuple[int, int],
    ratios: Tuple[float, float],
    seed: int,
    spec: Optional[SynthSpec] = None,
) -> Tuple[DomainDataset, DomainDataset]:
    """
    Domain X: aligned_content @ style_x + contaminant_x @ style_x.
    Domain Y: aligned_content @ style_y + contaminant_y @ style_y.
    X and Y draw independent E seeds, so the pair is unpaired.
    """
    if contaminant_x == aligned_content or contaminant_y == aligned_content:
        raise DatasetError("contaminant content must differ from the aligned content")
    base = spec or SynthSpec()
    rng = np.random.default_rng(seed)

    domains = []
    for side, style, contaminant, size, ratio in (
        ("X", Style.X, contaminant_x, sizes[0], ratios[0]),
        ("Y", Style.Y, contaminant_y, sizes[1], ratios[1]),
    ):
        aligned = render_many(base.gen_spec(aligned_content, style), _seeds(rng, size), f"{side}_aligned")
        n_extra = int(np.floor(ratio * size + 0.5))
        pool = render_many(base.gen_spec(contaminant, style), _seeds(rng, max(n_extra, 1)), f"{side}_contaminant")
        mixed = compose_unaligned(aligned, pool, ratio, int(rng.integers(0, 2 ** 62)))
        domains.append(DomainDataset(
            samples=mixed.samples, name=side, labels=mixed.labels, filenames=mixed.filenames
        ))
    logger.info(
        f"[Synth] {aligned_content.value} aligned; X+{contaminant_x.value}, Y+{contaminant_y.value}; "
        f"sizes {len(domains[0])}/{len(domains[1])}"
    )
    return domains[0], domains[1]


def make_pair(spec: SynthSpec) -> Tuple[DomainDataset, DomainDataset]:
    return make_unaligned_pair(
        spec.aligned_content, spec.contaminant_x, spec.contaminant_y,
        spec.sizes, spec.ratios, spec.seed, spec,
    )


def synth_experiment_config(spec: SynthSpec, **updates) -> ExperimentConfig:
    """Desk-scale training config matching a synthetic pair"""
    base = dict(
        resolution=spec.resolution,
        channels=1,
        network=desk_network(),
        epochs=60,
        decay_start_epoch=30,
        learning_rate=2e-4,
        iters_per_epoch=30,
        checkpoint_every=10,
        sample_grid_every=10,
        seed=spec.seed,
    )
    base.update(updates)
    return ExperimentConfig(**base)


def materialize(spec: SynthSpec, out_dir: Path) -> Tuple[DomainDataset, DomainDataset]:
    """Write X/ and Y/ PNG directories, label CSVs and synth.json"""
    x, y = make_pair(spec)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_dataset(x, out_dir / "X", out_dir / "labels_X.csv")
    write_dataset(y, out_dir / "Y", out_dir / "labels_Y.csv")
    (out_dir / "synth.json").write_text(spec.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"[Synth] Materialized pair into {out_dir}")
    return x, y


# ============ DIAGNOSTICS ============

def region_features(images: np.ndarray) -> np.ndarray:
    """(mean intensity of the centre, mean intensity of the border ring) per image"""
    res = images.shape[1]
    ring = max(1, res // 8)
    mask = np.zeros((res, res), dtype=bool)
    mask[:ring, :] = mask[-ring:, :] = True
    mask[:, :ring] = mask[:, -ring:] = True
    lo, hi = res // 4, res - res // 4
    centre = images[:, lo:hi, lo:hi, :].mean(axis=(1, 2, 3))
    border = images[:, mask, :].mean(axis=(1, 2))
    return np.stack([centre, border], axis=1)


def separability_probe(aligned: np.ndarray, contaminant: np.ndarray, folds: int = 5) -> float:
    """Cross-validated accuracy of a logistic probe on the two region features"""
    features = np.concatenate([region_features(aligned), region_features(contaminant)])
    targets = np.concatenate([np.ones(len(aligned)), np.zeros(len(contaminant))])
    probe = LogisticRegression()
    return float(cross_val_score(probe, features, targets, cv=folds).mean())
