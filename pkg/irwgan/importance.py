"""
IrwGAN Importance Weights
The beta_X / beta_Y networks and their constraint-satisfying softmax head.

beta_i = n * softmax(s)_i keeps every weight non-negative with batch mean 1.
For gradient accumulation the softmax is taken over the whole logical batch:
scores are first computed without a graph, the upstream gradient is pushed
through the softmax Jacobian once, and each micro-batch then re-runs its
differentiable score pass and back-propagates its slice of that gradient.
"""

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from .core import DomainDataset, images_to_torch
from .diffnet import Network, backward, forward
from .errors import DatasetError, DivergenceError
from .metrics import HISTOGRAM_COLUMNS, Histogram, beta_report, ess_statistic, weight_histogram

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-5
HISTOGRAM_BINS = 20


@dataclass
class WeightVector:
    """Per-sample importance weights for one batch (non-negative, sum n)"""
    weights: torch.Tensor  # (n,)
    indices: Optional[np.ndarray] = None

    def __post_init__(self):
        w = self.weights.detach()
        n = w.shape[0]
        if self.indices is not None and len(self.indices) != n:
            raise ValueError("weights and indices differ in length")
        if (w < 0).any():
            raise ValueError("importance weights must be non-negative")
        if abs(w.sum().item() - n) > SUM_TOLERANCE:
            raise ValueError(f"importance weights must sum to {n}, got {w.sum().item():.8f}")

    def __len__(self) -> int:
        return int(self.weights.shape[0])

    @classmethod
    def uniform(cls, n: int, dtype: torch.dtype = torch.float64) -> "WeightVector":
        return cls(torch.ones(n, dtype=dtype))

    def numpy(self) -> np.ndarray:
        return self.weights.detach().to(torch.float64).cpu().numpy()


# ============ SCORES + SOFTMAX HEAD ============

def raw_scores(net: Network, images: torch.Tensor) -> torch.Tensor:
    """Unnormalized scores, one per sample; differentiable when grad is enabled"""
    return forward(net, images)


def batch_weights(scores: torch.Tensor, indices: Optional[np.ndarray] = None) -> WeightVector:
    """beta = n * softmax(scores), max-subtracted inside torch.softmax"""
    n = scores.shape[0]
    if n < 2:
        raise DatasetError("importance weights need a batch of at least 2 samples")
    if not torch.isfinite(scores).all():
        raise DivergenceError("non-finite importance score", term="beta_scores")
    return WeightVector(n * torch.softmax(scores, dim=0), indices)


def softmax_score_grad(weights: torch.Tensor, grad_weights: torch.Tensor) -> torch.Tensor:
    """
    Pull dL/dbeta back to dL/ds through beta = n * softmax(s):
    dL/ds_i = beta_i * (dL/dbeta_i - (1/n) * sum_j beta_j dL/dbeta_j)
    """
    n = weights.shape[0]
    return weights * (grad_weights - (weights * grad_weights).sum() / n)


def accumulate_score_grads(
    net: Network,
    images: torch.Tensor,
    score_grad: torch.Tensor,
    micro_batch: int,
) -> None:
    """Re-run the score pass per micro-batch and accumulate score_grad into net params"""
    n = images.shape[0]
    for start in range(0, n, micro_batch):
        stop = min(start + micro_batch, n)
        backward(raw_scores(net, images[start:stop]), score_grad[start:stop])


def scores_no_grad(net: Network, images: torch.Tensor, chunk: int) -> torch.Tensor:
    """Scores for an arbitrary number of samples, chunked, no graph"""
    parts: List[torch.Tensor] = []
    with torch.no_grad():
        for start in range(0, images.shape[0], chunk):
            parts.append(net.module(images[start:start + chunk]))
    return torch.cat(parts)


# ============ DATASET REPORT ============

@dataclass
class WeightReport:
    """Weights for every sample of a dataset under both normalization conventions"""
    domain: str
    filenames: List[str]
    scores: np.ndarray
    weights: np.ndarray  # one softmax over all N samples, scaled by N
    batch_convention: np.ndarray  # softmax per consecutive batch_size block, scaled by block size
    labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.weights)

    def histogram(self, batch_convention: bool = False) -> Histogram:
        weights = self.batch_convention if batch_convention else self.weights
        return weight_histogram(weights, HISTOGRAM_BINS, 0.0, max(2.0, float(weights.max())), self.labels)

    def summary(self, threshold: float = 0.5) -> Dict:
        hist = self.histogram()
        batch_hist = self.histogram(batch_convention=True)
        n = len(self.weights)
        result = {
            "domain": self.domain,
            "n": n,
            "sum": float(self.weights.sum()),
            "ess": ess_statistic(self.weights),
            "ess_reciprocal_norm": float(n / np.sum(self.weights ** 2)),
            "histogram": hist.to_dict(),
            "batch_convention": {
                "ess": ess_statistic(self.batch_convention),
                "histogram": batch_hist.to_dict(),
            },
        }
        if self.labels is not None:
            result["beta_report"] = beta_report(self.weights, self.labels, threshold).to_dict()
            result["batch_convention"]["beta_report"] = beta_report(
                self.batch_convention, self.labels, threshold
            ).to_dict()
        return result

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["index", "filename", "weight", "label"])
            for i, name in enumerate(self.filenames):
                label = "" if self.labels is None else int(self.labels[i])
                writer.writerow([i, name, f"{self.weights[i]:.10g}", label])

    def write_histogram_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(HISTOGRAM_COLUMNS)
            writer.writerows(self.histogram().rows())

    def write_summary(self, path: Path, threshold: float = 0.5) -> None:
        path.write_text(json.dumps(self.summary(threshold), indent=2), encoding="utf-8")


def dataset_weights(
    net: Network,
    dataset: DomainDataset,
    chunk: int = 64,
    batch_size: int = 20,
    dtype: torch.dtype = torch.float64,
) -> WeightReport:
    """Score every sample in chunks, then normalize once over the whole dataset"""
    n = len(dataset)
    if n < 2:
        raise DatasetError("dataset_weights needs at least 2 samples")
    images = images_to_torch(dataset.samples, dtype)
    scores = scores_no_grad(net, images, chunk)

    global_w = (n * torch.softmax(scores, dim=0)).to(torch.float64).cpu().numpy()

    per_batch = np.empty(n, dtype=np.float64)
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < 2:
        bounds.pop(-2)
    for start, stop in zip(bounds[:-1], bounds[1:]):
        block = scores[start:stop]
        per_batch[start:stop] = ((stop - start) * torch.softmax(block, dim=0)).to(torch.float64).cpu().numpy()

    logger.info(f"[Importance] Scored {n} samples of {dataset.name}")
    return WeightReport(
        domain=dataset.name,
        filenames=[dataset.filename(i) for i in range(n)],
        scores=scores.to(torch.float64).cpu().numpy(),
        weights=global_w,
        batch_convention=per_batch,
        labels=None if dataset.labels is None else np.asarray(dataset.labels, dtype=bool),
    )


def uniform_weights(dataset: DomainDataset) -> WeightReport:
    """Report for a domain whose weights are fixed to 1 (importance network not trained)"""
    n = len(dataset)
    if n < 2:
        raise DatasetError("a weight report needs at least 2 samples")
    return WeightReport(
        domain=dataset.name,
        filenames=[dataset.filename(i) for i in range(n)],
        scores=np.zeros(n),
        weights=np.ones(n),
        batch_convention=np.ones(n),
        labels=None if dataset.labels is None else np.asarray(dataset.labels, dtype=bool),
    )
