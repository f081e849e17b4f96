"""
IrwGAN Core
Data model for domains, samples and batches, plus image-directory ingestion.

Images are held as float arrays of shape (H, W, C) with values in [-1, 1].
A DomainDataset stacks them into one (N, H, W, C) block. Alignment labels
ride along for evaluation only; the trainer is handed `dataset.stripped()`.
"""

import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import DatasetError, ShapeError

logger = logging.getLogger(__name__)

# A single image: float array (H, W, C), every value in [-1, 1]
ImageTensor = np.ndarray

SUPPORTED_EXTENSIONS = {".png"}


# ============ PIXEL MAPPING ============

def pixels_to_unit(pixels: np.ndarray) -> np.ndarray:
    """Map 8-bit pixels [0, 255] linearly onto [-1, 1]"""
    return pixels.astype(np.float64) / 127.5 - 1.0


def unit_to_pixels(values: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1] and map back onto 8-bit pixels"""
    clipped = np.clip(values, -1.0, 1.0)
    return np.rint((clipped + 1.0) * 127.5).astype(np.uint8)


def check_image(image: np.ndarray) -> ImageTensor:
    """Validate the ImageTensor invariants and return the array"""
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ShapeError(f"image must be (H, W, C) with C in {{1,3}}, got {image.shape}")
    if not np.isfinite(image).all():
        raise ShapeError("image values must be finite")
    if image.size and (image.min() < -1.0 or image.max() > 1.0):
        raise ShapeError("image values must lie in [-1, 1]")
    return image


def save_png(image: ImageTensor, path: Path) -> None:
    """Write one image as an 8-bit PNG (grayscale for C=1)"""
    pixels = unit_to_pixels(image)
    if pixels.shape[2] == 1:
        Image.fromarray(pixels[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(pixels, mode="RGB").save(path)


# ============ DATA CLASSES ============

@dataclass(frozen=True)
class DomainDataset:
    """An ordered collection of same-shaped images, optionally alignment-labeled"""
    samples: np.ndarray  # (N, H, W, C)
    name: str
    labels: Optional[np.ndarray] = None  # bool (N,), True = aligned
    filenames: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.samples.ndim != 4 or self.samples.shape[3] not in (1, 3):
            raise ShapeError(f"samples must be (N, H, W, C) with C in {{1,3}}, got {self.samples.shape}")
        for i, image in enumerate(self.samples):
            try:
                check_image(image)
            except ShapeError as exc:
                raise ShapeError(f"{self.name} sample {i}: {exc}") from exc
        if self.labels is not None and len(self.labels) != len(self.samples):
            raise DatasetError("label count mismatch")
        if self.filenames and len(self.filenames) != len(self.samples):
            raise DatasetError("filename count mismatch")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.samples.shape[1:])  # type: ignore[return-value]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def stripped(self) -> "DomainDataset":
        """Label-free view handed to every training-path operation"""
        return replace(self, labels=None)

    def filename(self, index: int) -> str:
        if self.filenames:
            return self.filenames[index]
        return f"{self.name}_{index:05d}.png"

    def label_counts(self) -> Dict[str, int]:
        if self.labels is None:
            return {"aligned": 0, "unaligned": 0, "unlabeled": len(self)}
        aligned = int(np.sum(self.labels))
        return {"aligned": aligned, "unaligned": len(self) - aligned, "unlabeled": 0}

    def fingerprint(self) -> Dict[str, Any]:
        """Content hash + size summary recorded in the run manifest"""
        digest = hashlib.md5(np.ascontiguousarray(self.samples).tobytes())
        if self.labels is not None:
            digest.update(np.asarray(self.labels, dtype=np.uint8).tobytes())
        return {
            "name": self.name,
            "content_hash": digest.hexdigest()[:16],
            "size": len(self),
            "shape": list(self.shape),
            "label_counts": self.label_counts(),
        }


@dataclass(frozen=True)
class Batch:
    """A draw of dataset positions and the stacked images at those positions"""
    indices: np.ndarray  # int64 (n,)
    tensors: np.ndarray  # (n, H, W, C)

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def to_torch(self, dtype: torch.dtype = torch.float64) -> torch.Tensor:
        return images_to_torch(self.tensors, dtype)


def images_to_torch(images: np.ndarray, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """(N, H, W, C) numpy -> (N, C, H, W) torch"""
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).to(dtype)


def torch_to_images(tensor: torch.Tensor) -> np.ndarray:
    """(N, C, H, W) torch -> (N, H, W, C) float64 numpy"""
    return tensor.detach().to(torch.float64).cpu().numpy().transpose(0, 2, 3, 1)


# ============ INGESTION ============

def _read_labels(labels_file: Path) -> Dict[str, bool]:
    labels: Dict[str, bool] = {}
    with open(labels_file, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2 or parts[1] not in {"0", "1"}:
                raise DatasetError(f"malformed label line {line_no} in {labels_file}: {line!r}")
            labels[parts[0]] = parts[1] == "1"
    return labels


def _decode(path: Path, resolution: int, channels: Optional[int]) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if channels is None:
                channels = 1 if img.mode in {"L", "I;16", "1"} else 3
            img = img.convert("L" if channels == 1 else "RGB")
            if img.size != (resolution, resolution):
                img = img.resize((resolution, resolution), Image.Resampling.BOX)
            pixels = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DatasetError(f"cannot decode image: {path.name} ({exc})") from exc
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return check_image(pixels_to_unit(pixels))


def load_dataset(
    directory: str,
    resolution: int,
    labels_file: Optional[str] = None,
    name: Optional[str] = None,
    channels: Optional[int] = None,
) -> DomainDataset:
    """
    Load every PNG in a directory, ordered lexicographically by filename.

    Channel count follows the first image unless given; every image is
    resized to resolution x resolution (area resampling when shrinking).
    """
    if resolution < 4:
        raise DatasetError(f"resolution must be >= 4, got {resolution}")
    dir_path = Path(directory)
    if not dir_path.is_dir():
        raise DatasetError(f"directory not found: {directory}")

    files = sorted(
        (p for p in dir_path.iterdir() if p.is_file() and p.suffix.lower() in SUPPORTED_EXTENSIONS),
        key=lambda p: p.name,
    )
    if not files:
        raise DatasetError(f"no samples in {directory}")

    images: List[np.ndarray] = []
    for path in files:
        image = _decode(path, resolution, channels)
        if channels is None:
            channels = image.shape[2]
        images.append(image)

    labels = None
    if labels_file:
        mapping = _read_labels(Path(labels_file))
        if len(mapping) != len(files) or any(p.name not in mapping for p in files):
            raise DatasetError("label count mismatch")
        labels = np.array([mapping[p.name] for p in files], dtype=bool)

    dataset = DomainDataset(
        samples=np.stack(images),
        name=name or dir_path.name,
        labels=labels,
        filenames=tuple(p.name for p in files),
    )
    logger.info(f"[Data] Loaded {len(dataset)} samples from {directory} at {resolution}px")
    return dataset


def write_dataset(dataset: DomainDataset, directory: Path, labels_file: Optional[Path] = None) -> None:
    """Materialize a dataset as PNG files (+ `<filename>,<0|1>` label CSV)"""
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(len(dataset)):
        save_png(dataset.samples[i], directory / dataset.filename(i))
    if labels_file is not None and dataset.labels is not None:
        with open(labels_file, "w", encoding="utf-8") as f:
            for i in range(len(dataset)):
                f.write(f"{dataset.filename(i)},{int(dataset.labels[i])}\n")


# ============ COMPOSITION ============

def compose_unaligned(
    aligned: DomainDataset,
    contaminant: DomainDataset,
    ratio: float,
    seed: int,
) -> DomainDataset:
    """
    Add round(ratio * |aligned|) contaminant samples labeled unaligned.

    Contaminants are drawn without replacement unless the pool is too small,
    then the combined order is shuffled with the same seeded stream.
    """
    if ratio < 0:
        raise DatasetError(f"ratio must be non-negative, got {ratio}")
    if aligned.shape != contaminant.shape:
        raise ShapeError(f"shape mismatch: {aligned.shape} vs {contaminant.shape}")

    rng = np.random.default_rng(seed)
    n_aligned = len(aligned)
    n_extra = int(np.floor(ratio * n_aligned + 0.5))

    if n_extra <= len(contaminant):
        picks = rng.permutation(len(contaminant))[:n_extra]
    else:
        picks = rng.integers(0, len(contaminant), size=n_extra)

    samples = np.concatenate([aligned.samples, contaminant.samples[picks]])
    labels = np.concatenate([np.ones(n_aligned, dtype=bool), np.zeros(n_extra, dtype=bool)])
    names = [aligned.filename(i) for i in range(n_aligned)] + [
        f"u{j:05d}_{contaminant.filename(int(i))}" for j, i in enumerate(picks)
    ]

    order = rng.permutation(len(samples))
    return DomainDataset(
        samples=samples[order],
        name=f"{aligned.name}+{contaminant.name}",
        labels=labels[order],
        filenames=tuple(names[i] for i in order),
    )


# ============ SAMPLING ============

def sample_batch(dataset: DomainDataset, n: int, rng: np.random.Generator) -> Batch:
    """
    Draw n positions.

    Consumes exactly |dataset| uniform doubles when |dataset| >= n
    (argsort of random keys, without replacement) and exactly n doubles
    otherwise (with replacement).
    """
    if n < 2:
        raise DatasetError(f"batch size must be >= 2, got {n}")
    size = len(dataset)
    if size == 0:
        raise DatasetError("no samples")
    if size >= n:
        indices = np.argsort(rng.random(size), kind="stable")[:n]
    else:
        indices = np.floor(rng.random(n) * size).astype(np.int64)
    indices = indices.astype(np.int64)
    return Batch(indices=indices, tensors=dataset.samples[indices])


@dataclass
class EpochSampler:
    """
    Without-replacement cycling: walk a shuffled permutation of the dataset,
    reshuffling when it runs out. State is checkpointable.

    A batch that straddles two permutations takes the tail of the old one
    and then the first entries of the new one that are not already in the
    batch; the skipped entries stay in the new permutation, just later.
    """
    size: int
    order: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    position: int = 0

    def _reshuffle(self, rng: np.random.Generator, taken: Sequence[int] = ()) -> None:
        order = np.argsort(rng.random(self.size), kind="stable").astype(np.int64)
        if taken:
            clash = np.isin(order, np.asarray(taken, dtype=np.int64))
            order = np.concatenate([order[~clash], order[clash]])
        self.order = order
        self.position = 0

    def draw(self, dataset: DomainDataset, n: int, rng: np.random.Generator) -> Batch:
        if n < 2:
            raise DatasetError(f"batch size must be >= 2, got {n}")
        if self.size < n:
            return sample_batch(dataset, n, rng)
        picked: List[int] = []
        while len(picked) < n:
            if self.position >= len(self.order):
                self._reshuffle(rng, picked)
            take = min(n - len(picked), len(self.order) - self.position)
            picked.extend(self.order[self.position:self.position + take].tolist())
            self.position += take
        indices = np.asarray(picked, dtype=np.int64)
        return Batch(indices=indices, tensors=dataset.samples[indices])

    def state_dict(self) -> Dict[str, Any]:
        return {"size": self.size, "order": self.order.tolist(), "position": self.position}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.size = int(state["size"])
        self.order = np.asarray(state["order"], dtype=np.int64)
        self.position = int(state["position"])


def check_compatible(datasets: Sequence[DomainDataset]) -> None:
    """Both domains must be non-empty and share (H, W, C); identity losses feed Y into G"""
    for ds in datasets:
        if len(ds) == 0:
            raise DatasetError(f"no samples in {ds.name}")
    shapes = {ds.shape for ds in datasets}
    if len(shapes) != 1:
        raise ShapeError(f"domains differ in shape: {sorted(shapes)}")


def save_grid(rows: Sequence[np.ndarray], path: Path, pad: int = 1) -> None:
    """Tile equally sized (k, H, W, C) image blocks into one PNG, one block per row"""
    rows = [np.asarray(r) for r in rows]
    k, h, w, c = rows[0].shape
    canvas = -np.ones((len(rows) * (h + pad) + pad, k * (w + pad) + pad, c))
    for r, block in enumerate(rows):
        for i in range(block.shape[0]):
            top, left = pad + r * (h + pad), pad + i * (w + pad)
            canvas[top:top + h, left:left + w, :] = block[i]
    path.parent.mkdir(parents=True, exist_ok=True)
    save_png(canvas, path)
