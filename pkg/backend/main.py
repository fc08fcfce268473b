from typing import Any, Dict, List, Literal, Optional
import logging
import os

import numpy as np
from dotenv import load_dotenv
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from services.errors import CellFreeError, ConfigurationError, ConvergenceError, InfeasibleError, SetupError
from services.experiment import VERSION, ExperimentSpec, build_setup, resolve_network_config, run_experiment
from services.metrics import build_scalability_report
from services.presets import list_presets

load_dotenv()

logging.basicConfig(level=os.environ.get("CELLFREE_LOG_LEVEL", "INFO").upper())
logger = logging.getLogger("cellfree.api")

app = FastAPI(title="User-Centric Cell-Free MIMO Simulator")

MAX_API_SETUPS = int(os.environ.get("CELLFREE_MAX_API_SETUPS", "20"))

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)


def _status_for(exc: CellFreeError) -> int:
    if isinstance(exc, SetupError) and isinstance(exc.cause, CellFreeError):
        return _status_for(exc.cause)
    if isinstance(exc, ConfigurationError):
        return 422
    if isinstance(exc, (InfeasibleError, ConvergenceError)):
        return 409
    return 500


@app.exception_handler(CellFreeError)
def handle_simulator_error(request: Request, exc: CellFreeError):
    status = _status_for(exc)
    if status == 500:
        logger.error("%s %s failed: %s", request.method, request.url.path, exc)
    return JSONResponse(status_code=status, content={"detail": str(exc), "error": type(exc).__name__})


# ---------- Pydantic models ----------

class HealthOut(BaseModel):
    status: str = "ok"
    version: str
    numpy: Optional[str] = None
    cvxpy: Optional[str] = None


class TableOut(BaseModel):
    value_column: str
    count: int
    mean: float
    mean_stderr: float
    quantiles: Dict[str, float]
    samples: List[float]
    stderr: List[float]


class ExperimentOut(BaseModel):
    api_version: str = "v1"
    version: str
    seed: int
    spec: Dict[str, Any]
    network: Dict[str, Any]
    tables: Dict[str, TableOut]
    scalability: Optional[Dict[str, Any]] = None
    powers: Optional[Dict[str, Any]] = None


class ScalabilityRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: Optional[str] = "running-example-100x4"
    network: Dict[str, Any] = Field(default_factory=dict)
    mode: Literal["centralized", "distributed", "cellular", "small-cell"] = "distributed"
    seed: int = Field(0, ge=0)


class ScalabilityOut(BaseModel):
    api_version: str = "v1"
    seed: int
    num_aps: int
    num_ues: int
    fronthaul: Dict[str, Dict[str, float]]
    complexity: Dict[str, List[float]]
    scalable: Dict[str, bool]
    hardening: List[float] = Field(default_factory=list)


@app.get("/health", response_model=HealthOut)
def health():
    try:
        import cvxpy
        cvxpy_version = cvxpy.__version__
    except ImportError:
        cvxpy_version = None
    return HealthOut(version=VERSION, numpy=np.__version__, cvxpy=cvxpy_version)


@app.get("/presets")
def get_presets():
    return list_presets()


@app.post("/experiments", response_model=ExperimentOut)
def post_experiment(spec: ExperimentSpec):
    if spec.num_setups > MAX_API_SETUPS:
        raise ConfigurationError(
            f"num_setups={spec.num_setups} exceeds the API limit of {MAX_API_SETUPS}; use the command line for larger runs"
        )
    result = run_experiment(spec)
    return ExperimentOut(**result.to_dict())


@app.post("/scalability", response_model=ScalabilityOut)
def post_scalability(request: ScalabilityRequest):
    spec = ExperimentSpec(
        scenario=request.scenario,
        network=request.network,
        mode=request.mode,
        num_setups=1,
        draws_per_setup=1,
        seed=request.seed,
    )
    config = resolve_network_config(spec)
    setup = build_setup(spec, config, 0, np.random.SeedSequence(request.seed))
    report = build_scalability_report(
        setup.cluster,
        config.antennas_per_ap,
        config.pilot_length,
        config.ul_data,
        config.dl_data,
        R=setup.channels.R,
        rho=setup.cluster.serving.astype(float),
    )
    return ScalabilityOut(seed=request.seed, num_aps=config.num_aps, num_ues=config.num_ues, **report.to_dict())
