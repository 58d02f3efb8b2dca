"""Command-line surface.

    drf fit       --data train.csv --roles x1:x,x2:x,y:y --out model.drf
    drf weights   --forest model.drf --x 0.7,0.3 [--out weights.csv]
    drf infer     --forest model.drf --x 0.7,0.3 --target quantile:y@0.1,0.9
    drf codite    --data arms.csv --roles ...,w:w --x ... --band-out band.csv
    drf simulate  --dgp cate_null --n 1000 --out data.csv
    drf coverage  --experiment study.cfg --out report.csv

Global flags ``--seed``, ``--threads`` and ``--config`` come before the
subcommand. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric degeneracy.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from . import settings
from .codite import fit_two_groups, probe_grid, run_codite
from .data import DatasetSchema, load_dataset, save_dataset
from .errors import DataError, DrfError, UsageError
from .forest import ForestConfig, build_forest, make_config, weights
from .inference import ResponseTable, inference_records, parse_target
from .serialization import dump_forest_json, load_forest, save_forest
from .simulate import DgpSpec, simulate
from .studies import experiment_from_settings, run_codite_study, run_coverage

logger = logging.getLogger("app.cli")

# flag name -> ForestConfig key
FOREST_FLAGS = {
    "num_trees": int,
    "num_groups": int,
    "subsample_exponent": float,
    "mtry": int,
    "min_node_size": int,
    "alpha_regularity": float,
    "num_features": int,
    "bandwidth": str,
    "split_mode": str,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _vector(text: str) -> np.ndarray:
    try:
        return np.array([float(s) for s in text.split(",") if s.strip()])
    except ValueError:
        raise UsageError(f"Cannot parse {text!r} as a comma-separated vector")


def _schema(args) -> DatasetSchema:
    if args.roles:
        return DatasetSchema.parse(args.roles)
    if not args.x_cols or not args.y_cols:
        raise UsageError("Give --roles or both --x-cols and --y-cols")
    return DatasetSchema.from_lists(args.x_cols.split(","), args.y_cols.split(","), args.w_col)


def _settings_file(args) -> Dict[str, object]:
    """Environment defaults overlaid by the config file."""
    values: Dict[str, object] = {"seed": settings.DRF_SEED, "n_jobs": settings.DRF_THREADS}
    path = args.config or settings.DRF_CONFIG
    if path:
        values.update(settings.read_config_file(path))
    return values


def forest_config(args) -> ForestConfig:
    overrides: Dict[str, object] = {key: getattr(args, key, None) for key in FOREST_FLAGS}
    overrides["seed"] = args.seed
    overrides["n_jobs"] = args.threads
    if getattr(args, "no_treatment_response", False):
        overrides["treatment_as_response"] = False
    for item in getattr(args, "set", None) or []:
        key, _, value = item.partition("=")
        overrides[key.strip().replace("-", "_")] = value.strip()
    merged = settings.merge_settings(ForestConfig.keys(), _settings_file(args), overrides)
    return make_config(**merged)


def _emit_lines(records: List[dict], out: Optional[str]) -> None:
    text = "".join(json.dumps(r) + "\n" for r in records)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _emit_frame(frame: pd.DataFrame, out: Optional[str]) -> None:
    if out:
        frame.to_csv(out, index=False, float_format="%.17g")
    else:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")


def cmd_fit(args) -> int:
    config = forest_config(args)
    dataset = load_dataset(args.data, _schema(args))
    forest = build_forest(dataset, config)
    save_forest(forest, args.out)
    if args.json:
        Path(args.json).write_text(dump_forest_json(forest), encoding="utf-8")
    logger.info("Saved forest with %d groups to %s", forest.num_groups, args.out)
    return 0


def cmd_weights(args) -> int:
    forest = load_forest(args.forest)
    bundle = weights(forest, _vector(args.x))
    frame = pd.DataFrame({"row": np.arange(forest.n), "weight": bundle.w})
    for b, w_b in zip(bundle.group_ids, bundle.group_weights):
        frame[f"group_{b}"] = w_b
    _emit_frame(frame, args.out)
    return 0


def cmd_infer(args) -> int:
    forest = load_forest(args.forest)
    bundle = weights(forest, _vector(args.x))
    records = inference_records(parse_target(args.target), bundle, ResponseTable.of(forest), args.alpha,
                                tau=_vector(args.tau) if args.tau else None,
                                ellipsoid_mode=args.ellipsoid_mode)
    _emit_lines(records, args.out)
    return 0


def cmd_codite(args) -> int:
    config = forest_config(args)
    dataset = load_dataset(args.data, _schema(args))
    fit = fit_two_groups(dataset, config)
    result, band = run_codite(fit, _vector(args.x), args.alpha)
    _emit_lines([result.to_record()], args.out)
    if args.band_out:
        if args.probes:
            grid = _probe_points(args.probes, fit.Y0.shape[1])
        else:
            grid = probe_grid(fit.Y0, fit.Y1, fit.bandwidth)
        band.to_frame(grid).to_csv(args.band_out, index=False, float_format="%.17g")
    return 0


def _probe_points(path, d: int) -> np.ndarray:
    try:
        grid = pd.read_csv(path, header=None).to_numpy(dtype=float)
    except (OSError, ValueError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Cannot read probe points from {path}: {e}")
    if grid.ndim != 2 or grid.shape[1] != d:
        raise DataError(f"Probe points in {path} have {grid.shape[-1]} columns, responses have {d}")
    return grid


def _dgp_spec(args) -> DgpSpec:
    try:
        return DgpSpec(kind=args.dgp, n=args.n, seed=settings.DRF_SEED if args.seed is None else args.seed)
    except ValidationError as e:
        messages = "; ".join(f"{'.'.join(map(str, err['loc'])) or 'dgp'}: {err['msg']}" for err in e.errors())
        raise UsageError(f"Invalid simulation settings: {messages}")


def cmd_simulate(args) -> int:
    dataset = simulate(_dgp_spec(args))
    if args.out:
        save_dataset(dataset, args.out)
    else:
        _emit_frame(dataset.to_frame(), None)
    return 0


def cmd_coverage(args) -> int:
    values: Dict[str, object] = {"seed": settings.DRF_SEED, "n_jobs": settings.DRF_THREADS}
    values.update(settings.read_config_file(args.experiment))
    for key, value in (("seed", args.seed), ("n_jobs", args.threads)):
        if value is not None:
            values[key] = value
    exp = experiment_from_settings(values)
    if exp.study == "codite":
        report = run_codite_study(exp)
        if args.reps_out:
            report.reps.to_csv(args.reps_out, index=False, float_format="%.17g")
    else:
        report = run_coverage(exp)
    _emit_frame(report.to_frame(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drf", description="Distributional random forests with uncertainty quantification")
    parser.add_argument("--seed", type=int, default=None, help="overrides DRF_SEED and config files")
    parser.add_argument("--threads", type=int, default=None, help="overrides DRF_THREADS")
    parser.add_argument("--config", default=None, help="flat key = value forest config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def data_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--roles", help="col:role pairs, roles x|y|w|ignore")
        p.add_argument("--x-cols", dest="x_cols")
        p.add_argument("--y-cols", dest="y_cols")
        p.add_argument("--w-col", dest="w_col")

    def forest_args(p):
        for key, kind in FOREST_FLAGS.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any other config key")

    p = sub.add_parser("fit", help="fit a grouped forest and save it")
    data_args(p)
    forest_args(p)
    p.add_argument("--no-treatment-response", action="store_true",
                   help="do not append the w column to the splitting response")
    p.add_argument("--out", required=True)
    p.add_argument("--json", help="also write a JSON debug dump")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("weights", help="weights of a saved forest at x")
    p.add_argument("--forest", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("infer", help="estimate, intervals and ellipsoid for a target")
    p.add_argument("--forest", required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--tau", help="null value for the ellipsoid test")
    p.add_argument("--ellipsoid-mode", choices=("chi2", "empirical"), default="chi2")
    p.add_argument("--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("codite", help="test equal conditional distributions across arms at x")
    data_args(p)
    forest_args(p)
    p.add_argument("--x", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--band-out", help="witness band CSV")
    p.add_argument("--probes", help="CSV of probe response vectors (one per row, no header)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_codite)

    p = sub.add_parser("simulate", help="draw a simulated dataset")
    p.add_argument("--dgp", required=True, choices=("cate_null", "cate_hetero", "quantile_shift", "gauss_copula"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("coverage", help="run a coverage or CoDiTE study from an experiment file")
    p.add_argument("--experiment", required=True)
    p.add_argument("--out")
    p.add_argument("--reps-out", help="per-replication CSV for CoDiTE studies")
    p.set_defaults(func=cmd_coverage)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        logging.basicConfig(level=settings.LOG_LEVEL)
        logger.error("%s", e)
        return e.exit_code
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else settings.LOG_LEVEL,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DrfError as e:
        logger.error("%s", e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
