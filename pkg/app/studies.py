"""Repeated-simulation studies: interval coverage for plug-in targets and
validity, power and band coverage of the CoDiTE test."""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .codite import fit_two_groups, probe_grid, run_codite
from .errors import ConfigError, DrfError, NumericError, UsageError
from .forest import ForestConfig, build_forest, make_config, weights
from .inference import ResponseTable, bootstrap_sample, parse_target
from .simulate import DEFAULT_CATE_PROBE, DgpSpec, default_target, simulate, true_value, true_witness
from .uncertainty import ellipsoid_test, gaussian_ci, quantile_ci

logger = logging.getLogger(__name__)

_REP_STREAM = 3
KS_95 = 1.358


class Experiment(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    study: Literal["coverage", "codite"] = "coverage"
    dgp: Literal["cate_null", "cate_hetero", "quantile_shift", "gauss_copula"]
    n: List[int]
    probes: List[List[float]] = Field(default_factory=lambda: [list(DEFAULT_CATE_PROBE)])
    target: Optional[str] = None
    reps: int = Field(default=100, ge=10)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    ci: Literal["gaussian", "quantile"] = "gaussian"
    ellipsoid_mode: Literal["chi2", "empirical"] = "chi2"
    sanity: bool = False
    seed: int = Field(default=0, ge=0)
    n_jobs: int = 1
    forest: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("n", mode="before")
    @classmethod
    def _sizes(cls, v):
        if isinstance(v, str):
            v = [int(s) for s in v.split(",") if s.strip()]
        return v

    @field_validator("probes", mode="before")
    @classmethod
    def _probes(cls, v):
        if isinstance(v, str):
            v = [[float(s) for s in point.split(",") if s.strip()] for point in v.split(";") if point.strip()]
        return v

    def forest_config(self, seed: int) -> ForestConfig:
        return make_config(**dict(self.forest, seed=seed, n_jobs=1))


def experiment_from_settings(values: Dict[str, object]) -> Experiment:
    """Split a flat key/value mapping into experiment keys and forest keys."""
    own = set(Experiment.model_fields) - {"forest"}
    forest_keys = set(ForestConfig.keys()) - {"seed", "n_jobs"}
    unknown = [k for k in values if k not in own and k not in forest_keys]
    if unknown:
        valid = sorted(own | forest_keys)
        raise UsageError(f"Unknown experiment keys {unknown}; valid keys: {', '.join(valid)}")
    try:
        return Experiment(forest={k: v for k, v in values.items() if k in forest_keys},
                          **{k: v for k, v in values.items() if k in own})
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"Invalid experiment: {e}")


def rep_seed(seed: int, n: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, _REP_STREAM, n, rep]).generate_state(1)[0])


def _coverage_rep(exp: Experiment, n: int, rep: int) -> List[dict]:
    seed = rep_seed(exp.seed, n, rep)
    target = parse_target(exp.target) if exp.target else default_target(exp.dgp)
    started = time.perf_counter()
    rows = []
    try:
        dataset = simulate(DgpSpec(kind=exp.dgp, n=n, seed=seed))
        forest = build_forest(dataset, exp.forest_config(seed))
        table = ResponseTable.of(forest)
        for k, probe in enumerate(exp.probes):
            bs = bootstrap_sample(target, weights(forest, probe), table)
            truth = bs.theta_hat.copy() if exp.sanity else true_value(exp.dgp, target, probe)
            method = "gaussian" if exp.sanity else exp.ci
            ci = gaussian_ci(bs, exp.alpha) if method == "gaussian" else quantile_ci(bs, exp.alpha)
            for j, label in enumerate(target.labels()):
                lo, hi = ci[j]
                rows.append({
                    "n": n, "probe": k, "target": label, "rep": rep,
                    "hit": float(lo <= truth[j] <= hi), "length": hi - lo,
                    "bias": bs.theta_hat[j] - truth[j], "dropped_groups": bs.dropped,
                })
            if target.dimension > 1:
                test = ellipsoid_test(bs, truth, exp.alpha, mode=exp.ellipsoid_mode)
                rows.append({
                    "n": n, "probe": k, "target": "ellipsoid:" + str(target), "rep": rep,
                    "hit": float(not test.reject), "length": np.nan, "bias": np.nan,
                    "dropped_groups": bs.dropped,
                })
    except (NumericError, ConfigError) as e:
        logger.warning("n=%d rep %d dropped: %s", n, rep, e)
        return [{"n": n, "rep": rep, "degenerate": True, "seconds": time.perf_counter() - started}]
    elapsed = time.perf_counter() - started
    for row in rows:
        row["degenerate"] = False
        row["seconds"] = elapsed
    return rows


def binomial_band(rate: float, reps: int):
    half = 1.96 * np.sqrt(rate * (1.0 - rate) / reps) if reps else np.nan
    return rate - half, rate + half


@dataclass
class CoverageReport:
    rows: pd.DataFrame
    dropped: Dict[int, int] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return self.rows


def summarise_coverage(records: List[dict], probes: List[List[float]]) -> CoverageReport:
    frame = pd.DataFrame.from_records(records)
    frame["degenerate"] = frame["degenerate"].astype(bool)
    out = []
    dropped = frame[frame["degenerate"]].groupby("n").size().to_dict()
    ok = frame[~frame["degenerate"]]
    if ok.empty:
        return CoverageReport(pd.DataFrame(out), {int(k): int(v) for k, v in dropped.items()})
    for (n, probe, target), part in ok.groupby(["n", "probe", "target"], sort=True):
        reps = int(part.shape[0])
        rate = float(part["hit"].mean())
        lo, hi = binomial_band(rate, reps)
        out.append({
            "n": int(n), "probe": ",".join(f"{v:g}" for v in probes[int(probe)]), "target": target,
            "coverage": rate, "coverage_lo": lo, "coverage_hi": hi,
            "median_length": float(part["length"].median()), "median_bias": float(part["bias"].median()),
            "median_abs_bias": float(part["bias"].abs().median()),
            "reps": reps, "dropped": int(dropped.get(n, 0)), "wall_seconds": float(part["seconds"].sum()),
        })
    return CoverageReport(pd.DataFrame(out), {int(k): int(v) for k, v in dropped.items()})


def run_coverage(exp: Experiment) -> CoverageReport:
    if exp.study != "coverage":
        raise UsageError("run_coverage needs study = coverage")
    records: List[dict] = []
    for n in exp.n:
        logger.info("Coverage study %s: n=%d, %d reps", exp.dgp, n, exp.reps)
        batches = Parallel(n_jobs=exp.n_jobs)(delayed(_coverage_rep)(exp, n, rep) for rep in range(exp.reps))
        for batch in batches:
            records.extend(batch)
    return summarise_coverage(records, exp.probes)


def ks_excess(p_values) -> float:
    """max_t (ECDF(t) - t) of the p-values against Uniform(0, 1)."""
    p = np.sort(np.asarray(p_values, dtype=float))
    if p.size == 0:
        return float("nan")
    return float(max(np.max(np.arange(1, p.size + 1) / p.size - p), 0.0))


def _codite_rep(exp: Experiment, n: int, rep: int) -> dict:
    seed = rep_seed(exp.seed, n, rep)
    probe = exp.probes[0]
    try:
        dataset = simulate(DgpSpec(kind=exp.dgp, n=n, seed=seed))
        fit = fit_two_groups(dataset, exp.forest_config(seed))
        result, band = run_codite(fit, probe, exp.alpha)
    except DrfError as e:
        logger.warning("n=%d rep %d dropped: %s", n, rep, e)
        return {"n": n, "rep": rep, "degenerate": True}
    grid = probe_grid(fit.Y0, fit.Y1, fit.bandwidth)
    covers_zero = band.contains(grid, 0.0)
    truth = true_witness(exp.dgp, probe, fit.bandwidth.sigma, grid)
    return {
        "n": n, "rep": rep, "degenerate": False, "p_value": result.p_value, "reject": result.reject,
        "statistic": result.statistic, "threshold": result.threshold_c,
        "covers_truth": band.contains(grid, truth), "covers_zero": covers_zero,
        "violation": (not result.reject) and (not covers_zero),
    }


@dataclass
class CoditeStudyReport:
    summary: pd.DataFrame
    reps: pd.DataFrame

    def to_frame(self) -> pd.DataFrame:
        return self.summary


def run_codite_study(exp: Experiment) -> CoditeStudyReport:
    if exp.dgp not in ("cate_null", "cate_hetero"):
        raise UsageError("CoDiTE studies need a design with a treatment column")
    records = []
    for n in exp.n:
        logger.info("CoDiTE study %s: n=%d, %d reps", exp.dgp, n, exp.reps)
        records.extend(Parallel(n_jobs=exp.n_jobs)(delayed(_codite_rep)(exp, n, rep) for rep in range(exp.reps)))
    reps = pd.DataFrame.from_records(records)
    rows = []
    for n, part in reps.groupby("n", sort=True):
        ok = part[~part["degenerate"].astype(bool)]
        m = int(ok.shape[0])
        rate = float(ok["reject"].astype(float).mean()) if m else float("nan")
        lo, hi = binomial_band(rate, m)
        rows.append({
            "n": int(n), "reps": m, "dropped": int(part["degenerate"].astype(bool).sum()),
            "rejection_rate": rate, "rejection_lo": lo, "rejection_hi": hi,
            "ks_excess": ks_excess(ok["p_value"]) if m else float("nan"),
            "ks_band": KS_95 / np.sqrt(m) if m else float("nan"),
            "band_covers_truth": float(ok["covers_truth"].astype(float).mean()) if m else float("nan"),
            "band_covers_zero": float(ok["covers_zero"].astype(float).mean()) if m else float("nan"),
            "violations": int(ok["violation"].astype(bool).sum()) if m else 0,
        })
    return CoditeStudyReport(pd.DataFrame(rows), reps)
