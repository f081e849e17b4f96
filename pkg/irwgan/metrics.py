"""
IrwGAN Metrics
FID, KID, beta classification report, effective sample size and histograms.

Feature extraction is pluggable: any callable mapping an (N, H, W, C) image
block to an (N, d) matrix can be registered. The default is raw pixels.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .errors import ShapeError

logger = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-8
KID_DEGREE = 3


# ============ FEATURES ============

Extractor = Callable[[np.ndarray], np.ndarray]


def _raw_pixels(images: np.ndarray) -> np.ndarray:
    return images.reshape(images.shape[0], -1).astype(np.float64)


def _avgpool4(images: np.ndarray) -> np.ndarray:
    n, h, w, c = images.shape
    fh, fw = max(1, h // 4), max(1, w // 4)
    cropped = images[:, : fh * 4, : fw * 4, :]
    pooled = cropped.reshape(n, 4, fh, 4, fw, c).mean(axis=(2, 4))
    return pooled.reshape(n, -1).astype(np.float64)


EXTRACTORS: Dict[str, Extractor] = {
    "raw-pixels": _raw_pixels,
    "avgpool4": _avgpool4,
}


def register_extractor(tag: str, extractor: Extractor) -> None:
    EXTRACTORS[tag] = extractor


@dataclass
class FeatureSet:
    """m feature vectors of dimension d, tagged with the extractor that made them"""
    features: np.ndarray  # (m, d)
    extractor: str = "raw-pixels"

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ShapeError(f"features must be (m, d), got {self.features.shape}")

    @property
    def m(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @classmethod
    def from_images(cls, images: np.ndarray, extractor: str = "raw-pixels") -> "FeatureSet":
        if extractor not in EXTRACTORS:
            raise KeyError(f"unknown feature extractor: {extractor}")
        return cls(EXTRACTORS[extractor](images), extractor)


# ============ FID ============

def _psd_eigen(matrix: np.ndarray, what: str) -> tuple:
    sym = (matrix + matrix.T) / 2.0
    values, vectors = np.linalg.eigh(sym)
    tol = EIGEN_TOLERANCE * max(1.0, float(np.abs(values).max(initial=0.0)))
    if values.size and values.min() < -tol:
        raise ValueError(f"{what} is not positive semi-definite (eigenvalue {values.min():.3e})")
    return np.clip(values, 0.0, None), vectors


def fid(a: FeatureSet, b: FeatureSet) -> float:
    """
    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the trace of the
    square root taken from the eigenvalues of the symmetric S_a^(1/2) S_b S_a^(1/2).
    """
    if a.d != b.d:
        raise ShapeError(f"feature dimension mismatch: {a.d} vs {b.d}")
    if a.m < 2 or b.m < 2:
        raise ValueError("FID needs at least 2 samples per set")

    mu_a, mu_b = a.features.mean(axis=0), b.features.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a.features, rowvar=False, ddof=1))
    cov_b = np.atleast_2d(np.cov(b.features, rowvar=False, ddof=1))

    values_a, vectors_a = _psd_eigen(cov_a, "covariance of a")
    root_a = (vectors_a * np.sqrt(values_a)) @ vectors_a.T
    product, _ = _psd_eigen(root_a @ cov_b @ root_a, "covariance product")
    trace_sqrt = float(np.sum(np.sqrt(product)))

    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    return max(0.0, value)


# ============ KID ============

def _poly_kernel(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    d = u.shape[1]
    return (u @ v.T / d + 1.0) ** KID_DEGREE


def kid(a: FeatureSet, b: FeatureSet) -> float:
    """Unbiased squared MMD under k(u, v) = (u.v / d + 1)^3 (full-set estimator)"""
    if a.d != b.d:
        raise ShapeError(f"feature dimension mismatch: {a.d} vs {b.d}")
    m, n = a.m, b.m
    if m < 2 or n < 2:
        raise ValueError("KID needs at least 2 samples per set")
    k_aa = _poly_kernel(a.features, a.features)
    k_bb = _poly_kernel(b.features, b.features)
    k_ab = _poly_kernel(a.features, b.features)
    within_a = (k_aa.sum() - np.trace(k_aa)) / (m * (m - 1))
    within_b = (k_bb.sum() - np.trace(k_bb)) / (n * (n - 1))
    cross = k_ab.mean()
    return float(within_a + within_b - 2.0 * cross)


# ============ BETA REPORT ============

@dataclass
class BetaReport:
    """Thresholded beta as an aligned/unaligned classifier (positive = aligned)"""
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    threshold: float
    n_aligned: int
    n_unaligned: int
    defined: bool

    def to_dict(self) -> Dict:
        return asdict(self)


def beta_report(weights: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> BetaReport:
    weights = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if weights.shape != labels.shape:
        raise ShapeError("weights and labels differ in length")
    predicted = weights >= threshold
    tp = int(np.sum(predicted & labels))
    fp = int(np.sum(predicted & ~labels))
    fn = int(np.sum(~predicted & labels))
    accuracy = float(np.mean(predicted == labels)) if len(labels) else 0.0

    n_aligned = int(labels.sum())
    n_unaligned = int(len(labels) - n_aligned)
    both_classes = n_aligned > 0 and n_unaligned > 0
    precision = recall = None
    if both_classes:
        recall = tp / (tp + fn)
        precision = tp / (tp + fp) if (tp + fp) > 0 else None
    return BetaReport(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        threshold=threshold,
        n_aligned=n_aligned,
        n_unaligned=n_unaligned,
        defined=both_classes,
    )


# ============ EFFECTIVE SAMPLE SIZE ============

def ess_statistic(weights: np.ndarray) -> float:
    """Kish effective sample size (sum w)^2 / sum w^2, in [1, N]"""
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    sq = float(np.sum(w * w))
    if sq == 0.0:
        raise ValueError("effective sample size undefined for all-zero weights")
    return float(np.sum(w)) ** 2 / sq


# ============ HISTOGRAM ============

@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    counts_aligned: Optional[np.ndarray] = None
    counts_unaligned: Optional[np.ndarray] = None

    def to_dict(self) -> Dict:
        result = {"edges": self.edges.tolist(), "counts": self.counts.tolist()}
        if self.counts_aligned is not None:
            result["counts_aligned"] = self.counts_aligned.tolist()
            result["counts_unaligned"] = self.counts_unaligned.tolist()
        return result

    def rows(self) -> List[List]:
        """bin_low, bin_high, count_aligned, count_unaligned, count_total"""
        out = []
        for i in range(len(self.counts)):
            aligned = "" if self.counts_aligned is None else int(self.counts_aligned[i])
            unaligned = "" if self.counts_unaligned is None else int(self.counts_unaligned[i])
            out.append([float(self.edges[i]), float(self.edges[i + 1]), aligned, unaligned, int(self.counts[i])])
        return out


HISTOGRAM_COLUMNS = ["bin_low", "bin_high", "count_aligned", "count_unaligned", "count_total"]


def weight_histogram(
    weights: np.ndarray,
    bins: int,
    low: float = 0.0,
    high: Optional[float] = None,
    labels: Optional[np.ndarray] = None,
) -> Histogram:
    """Uniform bins over [low, high]; out-of-range weights land in the end bins"""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    w = np.asarray(weights, dtype=np.float64)
    if high is None:
        high = max(2.0, float(w.max(initial=0.0)))
    edges = np.linspace(low, high, bins + 1)
    clipped = np.clip(w, low, high)
    counts, _ = np.histogram(clipped, bins=edges)
    if labels is None:
        return Histogram(edges, counts)
    labels = np.asarray(labels, dtype=bool)
    aligned, _ = np.histogram(clipped[labels], bins=edges)
    unaligned, _ = np.histogram(clipped[~labels], bins=edges)
    return Histogram(edges, counts, aligned, unaligned)


# ============ COMBINED REPORT ============

def evaluate_pair(generated: np.ndarray, reference: np.ndarray, extractor: str = "raw-pixels") -> Dict[str, float]:
    """FID / KID between a translated image block and a reference block"""
    a = FeatureSet.from_images(generated, extractor)
    b = FeatureSet.from_images(reference, extractor)
    kid_value = kid(a, b)
    return {"fid": fid(a, b), "kid": kid_value, "kid_x100": 100.0 * kid_value}
