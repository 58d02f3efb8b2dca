"""Half-sample bootstrap: covariance, confidence intervals, ellipsoids and
the Hilbert-norm variance of the forest embedding.

Replicates are the group-wise estimates theta_b computed from the group
weights w_b; they are centred at the full-forest estimate theta_hat.
"""

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.linalg import eigh
from scipy.stats import chi2, norm

from .errors import InsufficientReplicatesError, SingularityError, UsageError

logger = logging.getLogger(__name__)


@dataclass
class BootstrapSample:
    theta_hat: np.ndarray
    theta_b: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        self.theta_hat = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        theta_b = np.asarray(self.theta_b, dtype=float)
        if theta_b.ndim == 1:
            theta_b = theta_b.reshape(-1, 1) if self.theta_hat.size == 1 else theta_b.reshape(1, -1)
        if theta_b.size == 0:
            theta_b = theta_b.reshape(0, self.theta_hat.size)
        if theta_b.shape[1] != self.theta_hat.size:
            raise UsageError(f"Replicates have {theta_b.shape[1]} components, estimate has {self.theta_hat.size}")
        finite = np.all(np.isfinite(theta_b), axis=1)
        if not finite.all():
            logger.warning("Dropping %d non-finite bootstrap replicates", int((~finite).sum()))
            self.dropped += int((~finite).sum())
            theta_b = theta_b[finite]
        self.theta_b = theta_b

    @property
    def q(self) -> int:
        return self.theta_hat.size

    @property
    def effective_B(self) -> int:
        return self.theta_b.shape[0]

    @property
    def deviations(self) -> np.ndarray:
        return self.theta_b - self.theta_hat


@dataclass
class CovarianceEstimate:
    matrix: np.ndarray
    effective_B: int


@dataclass
class EllipsoidResult:
    statistic: float
    threshold: float
    reject: bool
    rank: int
    mode: str = "chi2"


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise UsageError(f"Level alpha must lie in (0, 1), got {alpha!r}")


def empirical_quantile(values, prob: float) -> float:
    """Left-continuous inverse of the empirical CDF (type 1)."""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if v.size == 0:
        raise InsufficientReplicatesError("Empirical quantile of an empty sample")
    k = math.ceil(prob * v.size - 1e-9)
    return float(v[min(max(k - 1, 0), v.size - 1)])


def bootstrap_covariance(bs: BootstrapSample) -> CovarianceEstimate:
    if bs.effective_B < 2:
        raise InsufficientReplicatesError(f"Need at least 2 finite replicates, have {bs.effective_B}")
    dev = bs.deviations
    cov = dev.T @ dev / bs.effective_B
    return CovarianceEstimate((cov + cov.T) / 2.0, bs.effective_B)


def gaussian_ci(bs: BootstrapSample, alpha: float = 0.05) -> np.ndarray:
    """q x 2 array of [lower, upper] from the normal approximation."""
    _check_alpha(alpha)
    cov = bootstrap_covariance(bs).matrix
    z = norm.ppf(1.0 - alpha / 2.0)
    half = z * np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return np.column_stack([bs.theta_hat - half, bs.theta_hat + half])


def quantile_ci(bs: BootstrapSample, alpha: float = 0.05) -> np.ndarray:
    """Pivot interval [theta_hat - q_{1-a/2}, theta_hat - q_{a/2}] from the
    empirical quantiles of the replicate deviations."""
    _check_alpha(alpha)
    needed = math.ceil(2.0 / alpha)
    if bs.effective_B < needed:
        raise InsufficientReplicatesError(
            f"Quantile intervals at alpha={alpha} need {needed} replicates, have {bs.effective_B}")
    dev = bs.deviations
    out = np.empty((bs.q, 2))
    for j in range(bs.q):
        out[j, 0] = bs.theta_hat[j] - empirical_quantile(dev[:, j], 1.0 - alpha / 2.0)
        out[j, 1] = bs.theta_hat[j] - empirical_quantile(dev[:, j], alpha / 2.0)
    return out


def _pseudo_inverse(cov: np.ndarray):
    vals, vecs = eigh(cov)
    tol = max(vals.max(initial=0.0), 0.0) * cov.shape[0] * np.finfo(float).eps * 10
    keep = vals > max(tol, 1e-300)
    inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return inv, int(keep.sum())


def ellipsoid_test(bs: BootstrapSample, tau, alpha: float = 0.05,
                   mode: Literal["chi2", "empirical"] = "chi2", strict: bool = False) -> EllipsoidResult:
    """Mahalanobis distance of theta_hat from tau under the bootstrap
    covariance, compared with a chi-square quantile (degrees of freedom =
    covariance rank) or with the replicates' own distances."""
    _check_alpha(alpha)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if tau.shape != bs.theta_hat.shape:
        raise UsageError(f"tau has {tau.size} components, estimate has {bs.q}")
    cov = bootstrap_covariance(bs).matrix
    inv, rank = _pseudo_inverse(cov)
    if rank < bs.q:
        if strict:
            raise SingularityError(f"Bootstrap covariance has rank {rank} < {bs.q}")
        logger.warning("Bootstrap covariance has rank %d < %d; using the pseudo-inverse", rank, bs.q)
    diff = bs.theta_hat - tau
    if rank == 0:
        statistic = 0.0 if np.allclose(diff, 0.0) else math.inf
        return EllipsoidResult(statistic, 0.0, statistic > 0.0, 0, mode)
    statistic = float(diff @ inv @ diff)
    if mode == "chi2":
        threshold = float(chi2.ppf(1.0 - alpha, df=rank))
    elif mode == "empirical":
        dev = bs.deviations
        threshold = empirical_quantile(np.einsum("bi,ij,bj->b", dev, inv, dev), 1.0 - alpha)
    else:
        raise UsageError(f"Unknown ellipsoid mode {mode!r}")
    return EllipsoidResult(statistic, threshold, statistic > threshold, rank, mode)


def hilbert_variance(wb, K) -> float:
    """(1/B) sum_b (w_b - w)^T K (w_b - w): bootstrap estimate of the
    squared RKHS spread of the embedding."""
    K = np.asarray(K, dtype=float)
    G = np.asarray(wb.group_weights, dtype=float)
    if K.shape != (G.shape[1], G.shape[1]):
        raise UsageError(f"Gram matrix {K.shape} does not match {G.shape[1]} training rows")
    D = G - wb.w
    return max(float(np.mean(np.sum((D @ K) * D, axis=1))), 0.0)
