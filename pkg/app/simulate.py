"""Simulation designs with known conditional targets.

cate_null     X ~ U(0,1)^5, W|X ~ Bernoulli(0.25 (1 + beta_{2,4}(X3))),
              Y = 2 (X3 - 0.5) + N(0, 1)                      (no effect)
cate_hetero   same X and W, Y = 2 (X3 - 0.5) + (W - 0.2) eta(X1) eta(X2) + N(0, 1)
quantile_shift X ~ U(-1,1)^5, Y ~ N(0.8 * 1{X1 > 0}, 1)
gauss_copula  X ~ U(-1,1)^5, (Y1, Y2) standard normal with Cor = X1
"""

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import beta as beta_dist
from scipy.stats import norm

from .data import Dataset
from .errors import UsageError
from .inference import TargetSpec, parse_target

DGP_KINDS = ("cate_null", "cate_hetero", "quantile_shift", "gauss_copula")
NUM_COVARIATES = 5
DEFAULT_CATE_PROBE = (0.7, 0.3, 0.5, 0.68, 0.43)


class DgpSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["cate_null", "cate_hetero", "quantile_shift", "gauss_copula"]
    n: int = Field(ge=1)
    seed: int = Field(default=0, ge=0)


def eta(x):
    return 1.0 + 1.0 / (1.0 + np.exp(-20.0 * (np.asarray(x, dtype=float) - 1.0 / 3.0)))


def propensity(x3):
    """0.25 (1 + beta_{2,4}(x3)); peaks near 0.765, clipped to [0, 1]."""
    return np.clip(0.25 * (1.0 + beta_dist.pdf(x3, 2, 4)), 0.0, 1.0)


def simulate(spec: DgpSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    names = [f"x{j + 1}" for j in range(NUM_COVARIATES)]
    if spec.kind in ("cate_null", "cate_hetero"):
        X = rng.uniform(0.0, 1.0, size=(n, NUM_COVARIATES))
        W = (rng.uniform(size=n) < propensity(X[:, 2])).astype(float)
        Y = 2.0 * (X[:, 2] - 0.5) + rng.standard_normal(n)
        if spec.kind == "cate_hetero":
            Y = Y + (W - 0.2) * eta(X[:, 0]) * eta(X[:, 1])
        return Dataset(X, Y.reshape(-1, 1), W, names, ["y"], "w")
    X = rng.uniform(-1.0, 1.0, size=(n, NUM_COVARIATES))
    if spec.kind == "quantile_shift":
        Y = 0.8 * (X[:, 0] > 0) + rng.standard_normal(n)
        return Dataset(X, Y.reshape(-1, 1), None, names, ["y"])
    rho = X[:, 0]
    Z = rng.standard_normal((n, 2))
    Y1 = Z[:, 0]
    Y2 = rho * Z[:, 0] + np.sqrt(np.clip(1.0 - rho ** 2, 0.0, None)) * Z[:, 1]
    return Dataset(X, np.column_stack([Y1, Y2]), None, names, ["y1", "y2"])


def true_value(kind: str, target: TargetSpec, x) -> np.ndarray:
    """Analytic value of ``target`` under design ``kind`` at covariate x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if kind in ("cate_null", "cate_hetero"):
        effect = 0.0 if kind == "cate_null" else float(eta(x[0]) * eta(x[1]))
        base = 2.0 * (x[2] - 0.5)
        p = float(propensity(x[2]))
        if target.kind == "cate":
            return np.array([effect])
        if target.kind == "mean" and all(c == "y" for c in target.columns):
            # E[Y | X=x] averages the arms with the propensity
            return np.full(len(target.columns), base + (p - 0.2) * effect)
        if target.kind == "mean" and all(c == "w" for c in target.columns):
            return np.full(len(target.columns), p)
    elif kind == "quantile_shift":
        shift = 0.8 if x[0] > 0 else 0.0
        if target.kind == "quantile":
            return np.array([shift + norm.ppf(t) for t in target.taus])
        if target.kind == "mean":
            return np.full(len(target.columns), shift)
        if target.kind == "cdf":
            return np.array([norm.cdf(target.threshold - shift)])
    elif kind == "gauss_copula":
        if target.kind == "cor":
            return np.array([x[0]])
        if target.kind == "mean":
            return np.zeros(len(target.columns))
        if target.kind == "quantile":
            return np.array([norm.ppf(t) for t in target.taus])
        if target.kind == "cdf":
            return np.array([norm.cdf(target.threshold)])
    raise UsageError(f"No analytic truth for target {target} under design {kind!r}")


def default_target(kind: str) -> TargetSpec:
    return parse_target({
        "cate_null": "cate:y|w",
        "cate_hetero": "cate:y|w",
        "quantile_shift": "quantile:y@0.1,0.5,0.9",
        "gauss_copula": "cor:y1,y2",
    }[kind])


def check_kind(kind: Optional[str]) -> str:
    if kind not in DGP_KINDS:
        raise UsageError(f"Unknown design {kind!r}; expected one of {', '.join(DGP_KINDS)}")
    return kind


def arm_means(kind: str, x) -> tuple:
    """Conditional means of Y in the control and treated arms at x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    effect = 0.0 if kind == "cate_null" else float(eta(x[0]) * eta(x[1]))
    base = 2.0 * (x[2] - 0.5)
    return base - 0.2 * effect, base + 0.8 * effect


def true_witness(kind: str, x, sigma: float, grid) -> np.ndarray:
    """Exact witness mu1(x)(y) - mu0(x)(y) for the CATE designs, where
    Y | W, X is N(m_w, 1) and the kernel is Gaussian with bandwidth sigma."""
    if kind not in ("cate_null", "cate_hetero"):
        raise UsageError(f"No analytic witness for design {kind!r}")
    y = np.asarray(grid, dtype=float).reshape(-1)
    s2 = sigma ** 2 + 1.0
    scale = sigma / np.sqrt(s2)
    m0, m1 = arm_means(kind, x)
    return scale * (np.exp(-(y - m1) ** 2 / (2.0 * s2)) - np.exp(-(y - m0) ** 2 / (2.0 * s2)))
