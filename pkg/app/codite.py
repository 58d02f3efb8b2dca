"""Conditional distributional treatment effects: a forest per treatment
arm, the MMD test of equal conditional distributions at x, and a
simultaneous confidence band for the conditional witness function.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from .data import Dataset
from .errors import ConfigError, DataError, InsufficientReplicatesError, SchemaError, UsageError
from .forest import ForestConfig, GroupedForest, WeightBundle, build_forest, resolve_bandwidth, weights
from .kernel import Bandwidth, GramMatrices, gram
from .uncertainty import empirical_quantile

logger = logging.getLogger(__name__)

NEGATIVE_TOL = 1e-8
PROBE_POINTS = 201
_ARM_STREAM = 2


@dataclass
class TwoGroupFit:
    forest0: GroupedForest
    forest1: GroupedForest
    bandwidth: Bandwidth
    Y0: np.ndarray
    Y1: np.ndarray
    grams: GramMatrices

    @property
    def n0(self) -> int:
        return self.Y0.shape[0]

    @property
    def n1(self) -> int:
        return self.Y1.shape[0]


@dataclass
class CoditeTestResult:
    statistic: float
    null_draws: np.ndarray
    threshold_c: float
    p_value: float
    alpha: float
    n0: int = 0
    n1: int = 0

    @property
    def reject(self) -> bool:
        return self.statistic > self.threshold_c

    def to_record(self) -> dict:
        return {
            "statistic": float(self.statistic),
            "threshold": float(self.threshold_c),
            "p_value": float(self.p_value),
            "alpha": self.alpha,
            "reject": bool(self.reject),
            "n0": self.n0,
            "n1": self.n1,
            "B": int(self.null_draws.size),
        }


def arm_seed(seed: int, arm: int) -> int:
    return int(np.random.SeedSequence([seed, _ARM_STREAM, arm]).generate_state(1)[0])


def fit_two_groups(dataset: Dataset, config: ForestConfig) -> TwoGroupFit:
    if dataset.W is None:
        raise SchemaError("CoDiTE needs a treatment (w) column")
    arms = [np.flatnonzero(dataset.W == a) for a in (0, 1)]
    for a, rows in enumerate(arms):
        if rows.size == 0:
            raise DataError(f"Treatment arm w={a} is empty")
    bw = resolve_bandwidth(dataset.Y, config.model_copy(update={"treatment_as_response": False}))
    forests = []
    for a, rows in enumerate(arms):
        arm_config = config.model_copy(update={"seed": arm_seed(config.seed, a), "treatment_as_response": False})
        arm_data = Dataset(dataset.X[rows], dataset.Y[rows], None, list(dataset.x_names), list(dataset.y_names))
        logger.info("Fitting arm w=%d on %d rows", a, rows.size)
        forests.append(build_forest(arm_data, arm_config, bandwidth=bw))
    Y0, Y1 = dataset.Y[arms[0]], dataset.Y[arms[1]]
    return TwoGroupFit(forests[0], forests[1], bw, Y0, Y1, GramMatrices.from_arms(Y0, Y1, bw))


def _clamp(value: float, what: str) -> float:
    if value < -NEGATIVE_TOL:
        logger.warning("%s is %.3g before clamping", what, value)
    return max(value, 0.0)


def mmd_statistic(w0, w1, gm: GramMatrices) -> float:
    """w0' K0 w0 + w1' K1 w1 - 2 w0' K01 w1 = ||mu0_hat - mu1_hat||^2."""
    w0 = np.asarray(w0, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    if w0.shape != (gm.n0,) or w1.shape != (gm.n1,):
        raise UsageError(f"Weights of length {w0.size}/{w1.size} do not match arms of size {gm.n0}/{gm.n1}")
    value = w0 @ gm.K0 @ w0 + w1 @ gm.K1 @ w1 - 2.0 * (w0 @ gm.K01 @ w1)
    return _clamp(float(value), "MMD statistic")


def null_draws(bundle0: WeightBundle, bundle1: WeightBundle, gm: GramMatrices,
               pairing: Optional[np.ndarray] = None) -> np.ndarray:
    """Half-sample draws of ||(mu0_b - mu0_hat) - (mu1_b - mu1_hat)||^2,
    pairing group b of arm 0 with group ``pairing[b]`` of arm 1."""
    if bundle0.num_groups != bundle1.num_groups:
        raise ConfigError(f"Arms have {bundle0.num_groups} and {bundle1.num_groups} groups")
    D0 = bundle0.group_weights - bundle0.w
    D1 = bundle1.group_weights - bundle1.w
    if pairing is not None:
        D1 = D1[np.asarray(pairing)]
    if D0.shape[1] != gm.n0 or D1.shape[1] != gm.n1:
        raise UsageError("Group weights do not match the Gram matrices")
    draws = (np.sum((D0 @ gm.K0) * D0, axis=1) + np.sum((D1 @ gm.K1) * D1, axis=1)
             - 2.0 * np.sum((D0 @ gm.K01) * D1, axis=1))
    if draws.min(initial=0.0) < -NEGATIVE_TOL:
        logger.warning("Null draw as low as %.3g before clamping", draws.min())
    return np.clip(draws, 0.0, None)


def _common_groups(bundle0: WeightBundle, bundle1: WeightBundle) -> Tuple[WeightBundle, WeightBundle]:
    if np.array_equal(bundle0.group_ids, bundle1.group_ids):
        return bundle0, bundle1
    ids = np.intersect1d(bundle0.group_ids, bundle1.group_ids)
    logger.warning("Pairing %d groups present in both arms (%d / %d available)",
                   ids.size, bundle0.num_groups, bundle1.num_groups)

    def restrict(bundle):
        keep = np.isin(bundle.group_ids, ids)
        return WeightBundle(bundle.w, bundle.group_weights[keep], bundle.group_ids[keep], bundle.abstentions)

    return restrict(bundle0), restrict(bundle1)


def arm_weights(fit: TwoGroupFit, x) -> Tuple[WeightBundle, WeightBundle]:
    if fit.forest0.num_groups != fit.forest1.num_groups:
        raise ConfigError("Both arms must be fitted with the same number of groups")
    return _common_groups(weights(fit.forest0, x), weights(fit.forest1, x))


def evaluate_test(bundle0: WeightBundle, bundle1: WeightBundle, gm: GramMatrices,
                  alpha: float) -> CoditeTestResult:
    if not 0.0 < alpha <= 0.5:
        raise UsageError(f"alpha must lie in (0, 0.5], got {alpha!r}")
    draws = null_draws(bundle0, bundle1, gm)
    if draws.size < 2:
        raise InsufficientReplicatesError("The test needs at least two paired groups")
    statistic = mmd_statistic(bundle0.w, bundle1.w, gm)
    threshold = empirical_quantile(draws, 1.0 - alpha)
    p_value = (1.0 + np.count_nonzero(draws >= statistic)) / (draws.size + 1.0)
    return CoditeTestResult(statistic, draws, threshold, float(p_value), alpha, gm.n0, gm.n1)


def codite_test(fit: TwoGroupFit, x, alpha: float = 0.05) -> CoditeTestResult:
    return run_codite(fit, x, alpha)[0]


def witness(w0, w1, Y0, Y1, bw: Bandwidth, y):
    """w1' k1(y) - w0' k0(y) for one d-vector (scalar) or a grid of rows."""
    Y0 = np.asarray(Y0, dtype=float).reshape(len(w0), -1)
    Y1 = np.asarray(Y1, dtype=float).reshape(len(w1), -1)
    arr = np.asarray(y, dtype=float)
    single = arr.ndim == 0 or (arr.ndim == 1 and arr.size == Y0.shape[1])
    grid = arr.reshape(1, -1) if single else arr.reshape(-1, Y0.shape[1])
    values = gram(grid, Y1, bw) @ np.asarray(w1, dtype=float) - gram(grid, Y0, bw) @ np.asarray(w0, dtype=float)
    return float(values[0]) if single else values


@dataclass
class WitnessBand:
    half_width: float
    w0: np.ndarray
    w1: np.ndarray
    Y0: np.ndarray
    Y1: np.ndarray
    bandwidth: Bandwidth

    def evaluate(self, grid) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        values = np.atleast_1d(witness(self.w0, self.w1, self.Y0, self.Y1, self.bandwidth,
                                       np.asarray(grid, dtype=float).reshape(-1, self.Y0.shape[1])))
        return values, values - self.half_width, values + self.half_width

    def contains(self, grid, truth=0.0) -> bool:
        _, lower, upper = self.evaluate(grid)
        truth = np.broadcast_to(np.asarray(truth, dtype=float), lower.shape)
        return bool(np.all((lower <= truth) & (truth <= upper)))

    def to_frame(self, grid) -> pd.DataFrame:
        grid = np.asarray(grid, dtype=float).reshape(-1, self.Y0.shape[1])
        values, lower, upper = self.evaluate(grid)
        if grid.shape[1] == 1:
            frame = pd.DataFrame({"y": grid[:, 0]})
        else:
            frame = pd.DataFrame(grid, columns=[f"y{j + 1}" for j in range(grid.shape[1])])
        frame["witness"] = values
        frame["lower"] = lower
        frame["upper"] = upper
        return frame


def witness_band(result: CoditeTestResult, w0, w1, Y0, Y1, bw: Bandwidth) -> WitnessBand:
    """Band witness(y) +- sqrt(c * C) with C = sup k(y, y) = 1."""
    return WitnessBand(math.sqrt(max(result.threshold_c, 0.0)), np.asarray(w0, dtype=float),
                       np.asarray(w1, dtype=float), np.asarray(Y0, dtype=float),
                       np.asarray(Y1, dtype=float), bw)


def probe_grid(Y0, Y1, bw: Bandwidth, points: int = PROBE_POINTS) -> np.ndarray:
    """Evenly spaced grid over the pooled response range widened by one
    bandwidth on each side (one-dimensional responses only)."""
    pooled = np.concatenate([np.asarray(Y0, dtype=float).reshape(len(Y0), -1),
                             np.asarray(Y1, dtype=float).reshape(len(Y1), -1)])
    if pooled.shape[1] != 1:
        raise UsageError("A probe grid is only generated for one-dimensional responses; supply probe points")
    return np.linspace(pooled.min() - bw.sigma, pooled.max() + bw.sigma, points).reshape(-1, 1)


def run_codite(fit: TwoGroupFit, x, alpha: float = 0.05) -> Tuple[CoditeTestResult, WitnessBand]:
    bundle0, bundle1 = arm_weights(fit, x)
    result = evaluate_test(bundle0, bundle1, fit.grams, alpha)
    logger.info("CoDiTE statistic %.4g, threshold %.4g, p=%.4g",
                result.statistic, result.threshold_c, result.p_value)
    band = witness_band(result, bundle0.w, bundle1.w, fit.Y0, fit.Y1, fit.bandwidth)
    return result, band
