import json
import logging
import uuid
from pathlib import Path
from typing import Dict, List, Literal, Optional

from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from . import settings
from .codite import fit_two_groups, probe_grid, run_codite
from .data import DatasetSchema, parse_dataset_bytes
from .errors import ConfigError, DrfError, UsageError
from .forest import ForestConfig, GroupedForest, build_forest, make_config, weights
from .inference import ResponseTable, inference_records, parse_target
from .serialization import load_forest, save_forest
from .simulate import DgpSpec, simulate

logging.basicConfig(level=settings.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)

app = FastAPI(title="drf-uq-backend")

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# forest id -> fitted forest; files under DRF_FOREST_DIR outlive the process
_forests: Dict[str, GroupedForest] = {}


def _http_error(e: DrfError) -> HTTPException:
    status = 400 if isinstance(e, (UsageError, ConfigError)) else 422
    return HTTPException(status_code=status, detail=str(e))


def _forest_path(forest_id: str) -> Path:
    return Path(settings.DRF_FOREST_DIR) / f"{forest_id}.drf"


def get_forest(forest_id: str) -> GroupedForest:
    try:
        forest_id = str(uuid.UUID(forest_id))
    except ValueError:
        raise HTTPException(status_code=404, detail=f"Unknown forest {forest_id!r}")
    if forest_id in _forests:
        return _forests[forest_id]
    path = _forest_path(forest_id)
    if not path.exists():
        raise HTTPException(status_code=404, detail=f"Unknown forest {forest_id!r}")
    forest = load_forest(path)
    _forests[forest_id] = forest
    return forest


def _config_from_form(config: Optional[str]) -> ForestConfig:
    """``config`` is a JSON object of ForestConfig overrides."""
    overrides = {}
    if config:
        try:
            overrides = json.loads(config)
        except json.JSONDecodeError as e:
            raise UsageError(f"config must be a JSON object: {e}")
        if not isinstance(overrides, dict):
            raise UsageError("config must be a JSON object")
    defaults = {"seed": settings.DRF_SEED, "n_jobs": settings.DRF_THREADS}
    return make_config(**settings.merge_settings(ForestConfig.keys(), defaults, overrides))


def _vector(text: str) -> List[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"Cannot parse {text!r} as a comma-separated vector")


@app.get("/")
def root():
    return {"message": "drf-uq-backend API", "status": "running", "docs": "/docs"}


@app.get("/health")
def health():
    """Health check endpoint for monitoring and load balancers"""
    return {
        "status": "healthy",
        "ok": True,
        "service": "drf-uq-backend",
        "forests_loaded": len(_forests),
    }


@app.post("/api/simulate")
def simulate_dataset(payload: DgpSpec):
    try:
        frame = simulate(payload).to_frame()
        return {"columns": list(frame.columns), "rows": frame.to_dict(orient="records")}
    except HTTPException:
        raise
    except DrfError as e:
        raise _http_error(e)
    except Exception as e:
        logger.exception("Simulation failed")
        raise HTTPException(status_code=500, detail=f"Error simulating data: {str(e)}")


@app.post("/api/forests")
def fit_forest(
    data: UploadFile = File(...),
    roles: str = Form(...),
    config: Optional[str] = Form(None),
):
    try:
        forest_config = _config_from_form(config)
        dataset = parse_dataset_bytes(data.file.read(), DatasetSchema.parse(roles), source=data.filename or "<upload>")
        forest = build_forest(dataset, forest_config)
        forest_id = str(uuid.uuid4())
        path = _forest_path(forest_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_forest(forest, path)
        _forests[forest_id] = forest
        logger.info("Stored forest %s (n=%d, %d groups)", forest_id, forest.n, forest.num_groups)
        return {
            "id": forest_id,
            "n": forest.n,
            "p": forest.p,
            "d": forest.d,
            "num_groups": forest.num_groups,
            "trees_per_group": forest_config.trees_per_group,
            "bandwidth": forest.bandwidth.sigma,
            "x_columns": forest.x_names,
            "y_columns": forest.y_names,
            "w_column": forest.w_name,
        }
    except HTTPException:
        raise
    except DrfError as e:
        raise _http_error(e)
    except Exception as e:
        logger.exception("Forest fit failed")
        raise HTTPException(status_code=500, detail=f"Error fitting forest: {str(e)}")


class WeightsRequest(BaseModel):
    x: List[float]


class InferRequest(BaseModel):
    x: List[float]
    target: str
    alpha: float = 0.05
    tau: Optional[List[float]] = None
    ellipsoid_mode: Literal["chi2", "empirical"] = "chi2"


@app.post("/api/forests/{forest_id}/weights")
def forest_weights(forest_id: str, payload: WeightsRequest):
    try:
        bundle = weights(get_forest(forest_id), payload.x)
        return {
            "w": bundle.w.tolist(),
            "group_ids": bundle.group_ids.tolist(),
            "group_weights": bundle.group_weights.tolist(),
            "abstentions": bundle.abstentions,
        }
    except HTTPException:
        raise
    except DrfError as e:
        raise _http_error(e)
    except Exception as e:
        logger.exception("Weights failed")
        raise HTTPException(status_code=500, detail=f"Error computing weights: {str(e)}")


@app.post("/api/forests/{forest_id}/infer")
def forest_infer(forest_id: str, payload: InferRequest):
    try:
        forest = get_forest(forest_id)
        records = inference_records(
            parse_target(payload.target), weights(forest, payload.x), ResponseTable.of(forest),
            payload.alpha, tau=payload.tau, ellipsoid_mode=payload.ellipsoid_mode,
        )
        return {
            "estimates": [r for r in records if r["kind"] == "estimate"],
            "ellipsoid": next(r for r in records if r["kind"] == "ellipsoid"),
        }
    except HTTPException:
        raise
    except DrfError as e:
        raise _http_error(e)
    except Exception as e:
        logger.exception("Inference failed")
        raise HTTPException(status_code=500, detail=f"Error running inference: {str(e)}")


@app.post("/api/codite")
def codite(
    data: UploadFile = File(...),
    roles: str = Form(...),
    x: str = Form(...),
    alpha: float = Form(0.05),
    config: Optional[str] = Form(None),
    probes: Optional[str] = Form(None),
):
    """``probes``: response vectors separated by ';' (required when d > 1)."""
    try:
        forest_config = _config_from_form(config)
        dataset = parse_dataset_bytes(data.file.read(), DatasetSchema.parse(roles), source=data.filename or "<upload>")
        fit = fit_two_groups(dataset, forest_config)
        result, band = run_codite(fit, _vector(x), alpha)
        if probes:
            grid = [_vector(point) for point in probes.split(";") if point.strip()]
        else:
            grid = probe_grid(fit.Y0, fit.Y1, fit.bandwidth)
        return {
            "test": result.to_record(),
            "band_half_width": band.half_width,
            "band": band.to_frame(grid).to_dict(orient="records"),
        }
    except HTTPException:
        raise
    except DrfError as e:
        raise _http_error(e)
    except Exception as e:
        logger.exception("CoDiTE failed")
        raise HTTPException(status_code=500, detail=f"Error running CoDiTE: {str(e)}")
