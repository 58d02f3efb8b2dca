"""Gaussian kernel, median-heuristic bandwidth, random Fourier features and
Gram matrices.

The kernel is k(y1, y2) = exp(-||y1 - y2||^2 / (2 sigma^2)). The squared norm
is what makes the random Fourier approximation
    phi(y)_r = sqrt(2/R) cos(omega_r . y + b_r),  omega_r ~ N(0, sigma^-2 I),
    b_r ~ U[0, 2pi)
unbiased for it.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import ConfigError, DegenerateDataError, UsageError

logger = logging.getLogger(__name__)

DEFAULT_MEDIAN_CAP = 1000


@dataclass(frozen=True)
class Bandwidth:
    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.sigma) or self.sigma <= 0:
            raise ConfigError(f"Bandwidth must be positive and finite, got {self.sigma!r}")


def _as_rows(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if Y.ndim != 2:
        raise UsageError(f"Expected a 2-d response matrix, got shape {Y.shape}")
    return Y


def gaussian_kernel(y1, y2, bw: Bandwidth) -> float:
    a = np.atleast_1d(np.asarray(y1, dtype=float))
    b = np.atleast_1d(np.asarray(y2, dtype=float))
    if a.shape != b.shape or a.ndim != 1:
        raise UsageError(f"Kernel arguments must be vectors of equal length, got {a.shape} and {b.shape}")
    d2 = float(np.sum((a - b) ** 2))
    return math.exp(-d2 / (2.0 * bw.sigma ** 2))


def median_bandwidth(Y, cap: Optional[int] = DEFAULT_MEDIAN_CAP, seed: int = 0) -> Bandwidth:
    """Median of the pairwise Euclidean distances between rows of ``Y``.

    Above ``cap`` rows a seeded subsample of ``cap`` rows is used. When more
    than half of the pairs coincide the median is taken over the nonzero
    distances only.
    """
    Y = _as_rows(Y)
    n = Y.shape[0]
    if n < 2:
        raise DegenerateDataError("Median bandwidth needs at least two responses")
    if cap is not None and n > cap:
        rng = np.random.default_rng(seed)
        Y = Y[np.sort(rng.choice(n, size=cap, replace=False))]
    dists = pdist(Y, metric="euclidean")
    positive = dists[dists > 0]
    if positive.size == 0:
        raise DegenerateDataError("All responses are identical; the median bandwidth is undefined")
    sigma = float(np.median(dists))
    if sigma <= 0:
        sigma = float(np.median(positive))
        logger.warning("Median pairwise distance is zero; using median of %d nonzero distances (%.6g)",
                       positive.size, sigma)
    logger.debug("Median bandwidth over %d rows: %.6g", Y.shape[0], sigma)
    return Bandwidth(sigma)


@dataclass(frozen=True)
class FeatureMap:
    frequencies: np.ndarray
    phases: np.ndarray
    source_bandwidth: Bandwidth
    seed: int = 0
    scale: float = field(init=False)

    def __post_init__(self):
        freqs = np.atleast_2d(np.asarray(self.frequencies, dtype=float))
        phases = np.atleast_1d(np.asarray(self.phases, dtype=float))
        if freqs.shape[0] != phases.shape[0]:
            raise UsageError("FeatureMap needs one phase per frequency row")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "scale", math.sqrt(2.0 / freqs.shape[0]))

    @classmethod
    def draw(cls, bw: Bandwidth, num_features: int, dim: int, seed: int) -> "FeatureMap":
        if num_features < 1:
            raise ConfigError("num_features must be positive")
        rng = np.random.default_rng(seed)
        freqs = rng.normal(0.0, 1.0 / bw.sigma, size=(num_features, dim))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=num_features)
        return cls(freqs, phases, bw, seed)

    @property
    def num_features(self) -> int:
        return self.frequencies.shape[0]

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]


def embed(fm: FeatureMap, y) -> np.ndarray:
    """phi(y) for a single d-vector (returns R-vector) or an n x d matrix
    (returns n x R)."""
    arr = np.asarray(y, dtype=float)
    single = arr.ndim <= 1
    Y = arr.reshape(1, -1) if single else arr
    if Y.shape[1] != fm.dim:
        raise UsageError(f"Feature map expects dimension {fm.dim}, got {Y.shape[1]}")
    out = fm.scale * np.cos(Y @ fm.frequencies.T + fm.phases)
    return out[0] if single else out


def gram(Ya, Yb=None, bw: Bandwidth = None) -> np.ndarray:
    """Kernel matrix between the rows of ``Ya`` and ``Yb``.

    With ``Yb`` omitted (or the same object) each pair is evaluated once so
    the result is exactly symmetric.
    """
    if bw is None:
        raise UsageError("gram needs a bandwidth")
    A = _as_rows(Ya)
    if Yb is None or Yb is Ya:
        sq = squareform(pdist(A, metric="sqeuclidean"))
    else:
        B = _as_rows(Yb)
        if A.shape[1] != B.shape[1]:
            raise UsageError(f"Response dimensions differ: {A.shape[1]} vs {B.shape[1]}")
        sq = cdist(A, B, metric="sqeuclidean")
    return np.exp(-sq / (2.0 * bw.sigma ** 2))


@dataclass(frozen=True)
class GramMatrices:
    K0: np.ndarray
    K1: np.ndarray
    K01: np.ndarray

    @classmethod
    def from_arms(cls, Y0, Y1, bw: Bandwidth) -> "GramMatrices":
        Y0 = _as_rows(Y0)
        Y1 = _as_rows(Y1)
        return cls(gram(Y0, bw=bw), gram(Y1, bw=bw), gram(Y0, Y1, bw))

    @property
    def n0(self) -> int:
        return self.K0.shape[0]

    @property
    def n1(self) -> int:
        return self.K1.shape[0]
