"""Plug-in functionals of the weighted empirical distribution
sum_i w_i delta_{Y_i} and the target grammar used by the CLI and the API.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateTargetError, InsufficientReplicatesError, UsageError
from .uncertainty import BootstrapSample, bootstrap_covariance, ellipsoid_test, gaussian_ci, quantile_ci

logger = logging.getLogger(__name__)

CUMULATIVE_TOL = 1e-12
KINDS = ("mean", "quantile", "cor", "cate", "cdf")


def weighted_mean(w, Y, coords: Optional[Sequence[int]] = None) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    cols = Y if coords is None else Y[:, list(coords)]
    return np.asarray(w, dtype=float) @ cols


def weighted_quantile(w, y, tau: float) -> float:
    """Smallest y whose cumulative weight reaches tau - CUMULATIVE_TOL.

    The tolerance absorbs summation error in the cumulative weights, so
    uniform weights land on the expected order statistic. For tau within
    CUMULATIVE_TOL above a cumulative weight the returned value has
    ``weighted_cdf(w, y, q) >= tau - CUMULATIVE_TOL`` rather than ``>= tau``.
    """
    if not 0.0 < tau < 1.0:
        raise UsageError(f"Quantile level must lie in (0, 1), got {tau!r}")
    y = np.asarray(y, dtype=float).reshape(-1)
    order = np.argsort(y, kind="stable")
    cumulative = np.cumsum(np.asarray(w, dtype=float)[order])
    k = int(np.searchsorted(cumulative, tau - CUMULATIVE_TOL, side="left"))
    return float(y[order][min(k, y.size - 1)])


def weighted_cdf(w, y, t: float) -> float:
    y = np.asarray(y, dtype=float).reshape(-1)
    return float(np.clip(np.sum(np.asarray(w, dtype=float)[y <= t]), 0.0, 1.0))


def weighted_correlation(w, a, b) -> float:
    w = np.asarray(w, dtype=float)
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    ma, mb = w @ a, w @ b
    da, db = a - ma, b - mb
    va, vb = w @ (da * da), w @ (db * db)
    if va <= 1e-14 * max(1.0, w @ (a * a)) or vb <= 1e-14 * max(1.0, w @ (b * b)):
        raise DegenerateTargetError("Correlation undefined: a column has zero weighted variance")
    return float(np.clip((w @ (da * db)) / np.sqrt(va * vb), -1.0, 1.0))


def cate(w, y, treatment) -> float:
    """Difference of the two arms' weighted means, treating W as part of the
    response."""
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    t = np.asarray(treatment, dtype=float).reshape(-1)
    s1 = w @ t
    s0 = w @ (1.0 - t)
    if s1 <= 0.0 or s0 <= 0.0:
        raise DegenerateTargetError("CATE undefined: all weight lies on one treatment arm")
    return float((w @ (t * y)) / s1 - (w @ ((1.0 - t) * y)) / s0)


@dataclass(frozen=True)
class TargetSpec:
    kind: str
    columns: Tuple[str, ...]
    taus: Tuple[float, ...] = ()
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"Unknown target kind {self.kind!r}; expected one of {KINDS}")
        if any(not 0.0 < t < 1.0 for t in self.taus):
            raise UsageError("Quantile levels must lie in (0, 1)")

    @property
    def dimension(self) -> int:
        if self.kind == "mean":
            return len(self.columns)
        if self.kind == "quantile":
            return len(self.taus)
        return 1

    def labels(self) -> List[str]:
        if self.kind == "mean":
            return [f"mean:{c}" for c in self.columns]
        if self.kind == "quantile":
            return [f"quantile:{self.columns[0]}@{t:g}" for t in self.taus]
        if self.kind == "cor":
            return [f"cor:{self.columns[0]},{self.columns[1]}"]
        if self.kind == "cate":
            return [f"cate:{self.columns[0]}|w"]
        return [f"cdf:{self.columns[0]}@{self.threshold:g}"]

    def __str__(self) -> str:
        if self.kind == "quantile":
            return f"quantile:{self.columns[0]}@" + ",".join(f"{t:g}" for t in self.taus)
        if self.kind == "mean":
            return "mean:" + ",".join(self.columns)
        return self.labels()[0]


def _floats(text: str, what: str) -> Tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise UsageError(f"Cannot parse {what} in {text!r}")


def parse_target(text: str) -> TargetSpec:
    """``mean:<col>[,<col>...]``, ``quantile:<col>@<tau>[,<tau>...]``,
    ``cor:<a>,<b>``, ``cate:<col>|w``, ``cdf:<col>@<t>``."""
    if ":" not in text:
        raise UsageError(f"Target {text!r} must look like kind:arguments")
    kind, rest = (s.strip() for s in text.split(":", 1))
    kind = kind.lower()
    if kind == "mean":
        cols = tuple(c.strip() for c in rest.split(",") if c.strip())
        if not cols:
            raise UsageError("mean target needs at least one column")
        return TargetSpec("mean", cols)
    if kind in ("quantile", "cdf"):
        if "@" not in rest:
            raise UsageError(f"{kind} target needs '<col>@<value>'")
        col, values = rest.split("@", 1)
        numbers = _floats(values, "levels" if kind == "quantile" else "threshold")
        if not numbers:
            raise UsageError(f"{kind} target needs a value after '@'")
        if kind == "quantile":
            return TargetSpec("quantile", (col.strip(),), taus=numbers)
        if len(numbers) != 1:
            raise UsageError("cdf target takes exactly one threshold")
        return TargetSpec("cdf", (col.strip(),), threshold=numbers[0])
    if kind in ("cor", "correlation"):
        cols = tuple(c.strip() for c in rest.split(","))
        if len(cols) != 2 or not all(cols):
            raise UsageError("cor target needs exactly two columns")
        return TargetSpec("cor", cols)
    if kind == "cate":
        if "|" not in rest:
            raise UsageError("cate target must look like cate:<col>|w")
        col, arm = (s.strip() for s in rest.split("|", 1))
        if arm.lower() != "w" or not col:
            raise UsageError("cate target must look like cate:<col>|w")
        return TargetSpec("cate", (col,))
    raise UsageError(f"Unknown target kind {kind!r}; expected one of {KINDS}")


class ResponseTable:
    """Training responses addressed by column name."""

    def __init__(self, Y, y_names: Sequence[str], W=None, w_name: Optional[str] = None):
        self.Y = np.asarray(Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y.reshape(-1, 1)
        self.y_names = list(y_names)
        self.W = None if W is None else np.asarray(W, dtype=float).reshape(-1)
        self.w_name = w_name

    @classmethod
    def of(cls, source) -> "ResponseTable":
        return cls(source.Y, source.y_names, source.W, source.w_name)

    def column(self, name: str) -> np.ndarray:
        if name in self.y_names:
            return self.Y[:, self.y_names.index(name)]
        if self.W is not None and name in ("w", self.w_name):
            return self.W
        raise UsageError(f"Unknown response column {name!r}; available: {', '.join(self.y_names)}")

    def treatment(self) -> np.ndarray:
        if self.W is None:
            raise UsageError("CATE targets need a treatment column")
        return self.W


def evaluate_target(spec: TargetSpec, w, table: ResponseTable) -> np.ndarray:
    if spec.kind == "mean":
        return np.array([float(np.asarray(w) @ table.column(c)) for c in spec.columns])
    if spec.kind == "quantile":
        y = table.column(spec.columns[0])
        return np.array([weighted_quantile(w, y, t) for t in spec.taus])
    if spec.kind == "cor":
        return np.array([weighted_correlation(w, table.column(spec.columns[0]), table.column(spec.columns[1]))])
    if spec.kind == "cate":
        return np.array([cate(w, table.column(spec.columns[0]), table.treatment())])
    return np.array([weighted_cdf(w, table.column(spec.columns[0]), spec.threshold)])


def bootstrap_sample(spec: TargetSpec, bundle, table: ResponseTable) -> BootstrapSample:
    """Full-forest estimate plus one replicate per group; groups whose
    functional is degenerate are dropped and counted."""
    theta_hat = evaluate_target(spec, bundle.w, table)
    replicates = []
    dropped = 0
    for w_b in bundle.group_weights:
        try:
            replicates.append(evaluate_target(spec, w_b, table))
        except DegenerateTargetError:
            dropped += 1
    if dropped:
        logger.warning("%d of %d groups gave a degenerate %s estimate", dropped, bundle.num_groups, spec)
    theta_b = np.vstack(replicates) if replicates else np.empty((0, spec.dimension))
    return BootstrapSample(theta_hat, theta_b, dropped)


def inference_records(spec: TargetSpec, bundle, table: ResponseTable, alpha: float = 0.05,
                      tau=None, ellipsoid_mode: str = "chi2") -> List[dict]:
    """One record per target coordinate (estimate, standard error, Gaussian
    and quantile intervals) followed by one ellipsoid record. The ellipsoid
    test is only evaluated when a null value ``tau`` is given."""
    bs = bootstrap_sample(spec, bundle, table)
    cov = bootstrap_covariance(bs)
    g_ci = gaussian_ci(bs, alpha)
    try:
        q_ci = quantile_ci(bs, alpha)
    except InsufficientReplicatesError as e:
        logger.warning("Quantile interval unavailable: %s", e)
        q_ci = None
    records = []
    for j, label in enumerate(spec.labels()):
        record = {
            "kind": "estimate",
            "target": label,
            "estimate": float(bs.theta_hat[j]),
            "std_error": float(np.sqrt(max(cov.matrix[j, j], 0.0))),
            "alpha": alpha,
            "gaussian_lower": float(g_ci[j, 0]),
            "gaussian_upper": float(g_ci[j, 1]),
            "effective_B": bs.effective_B,
            "dropped": bs.dropped,
        }
        if q_ci is not None:
            record["quantile_lower"] = float(q_ci[j, 0])
            record["quantile_upper"] = float(q_ci[j, 1])
        records.append(record)

    null = bs.theta_hat if tau is None else np.asarray(tau, dtype=float).reshape(-1)
    test = ellipsoid_test(bs, null, alpha, mode=ellipsoid_mode)
    ellipsoid = {
        "kind": "ellipsoid",
        "target": str(spec),
        "alpha": alpha,
        "mode": ellipsoid_mode,
        "center": bs.theta_hat.tolist(),
        "covariance": cov.matrix.tolist(),
        "threshold": float(test.threshold),
        "rank": int(test.rank),
    }
    if tau is not None:
        ellipsoid.update({"tau": null.tolist(), "statistic": float(test.statistic), "reject": bool(test.reject)})
    records.append(ellipsoid)
    return records
