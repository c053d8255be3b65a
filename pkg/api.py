import logging
import shutil
import tempfile
import traceback
from datetime import time
from typing import Any, Dict, List, Literal, Optional

import uvicorn
from fastapi import BackgroundTasks, FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from config import SCHEMA_VERSION, TestConfig, configure_logging, load_settings, validated
from errors import IngestError, JumpTestError
from harness import experiment_spec_from_mapping
from ingest import DEFAULT_TIMEZONE, SessionSpec, ingest_file, resolve_source
from jumptest import CutoffStyle, run_tests
from simulate import simulate_path

logger = logging.getLogger(__name__)

settings = load_settings()
configure_logging(settings.log_level)

NULLS = {"no_jumps": ["no_jumps"], "jumps": ["jumps"], "both": ["no_jumps", "jumps"]}

app = FastAPI(
    title="Jump Test API",
    description="Two-scale power-variation test for jumps in high-frequency price data",
    version="1.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class TestJumpsRequest(BaseModel):
    __test__ = False

    document: str = Field(..., description="URL to download the tick CSV from, or local file path")
    sample_seconds: int = Field(5, gt=0)
    session_open: time = time(9, 30)
    session_close: time = time(16, 0)
    session_timezone: str = DEFAULT_TIMEZONE
    null: Literal["no_jumps", "jumps", "both"] = "both"
    cutoff_style: CutoffStyle = "gaussian"
    config: Dict[str, Any] = Field(default_factory=dict, description="TestConfig overrides")
    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "document": "https://example.com/ticks/2024-01-02.csv",
                "sample_seconds": 5,
                "null": "both",
                "config": {"p": 4, "k": 2},
            }
        }
    )


class SimulateTestRequest(BaseModel):
    path: Dict[str, Any] = Field(..., description="path table: sv, jumps, sample_seconds, horizon_days, seed, ...")
    path_index: int = Field(0, ge=0)
    null: Literal["no_jumps", "jumps", "both"] = "both"
    cutoff_style: CutoffStyle = "gaussian"
    config: Dict[str, Any] = Field(default_factory=dict, description="TestConfig overrides")
    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "path": {
                    "sample_seconds": 5,
                    "seed": 1,
                    "sv": {"beta": 0.16, "gamma": 0.5, "kappa": 5.0, "rho": -0.5},
                },
                "null": "no_jumps",
            }
        }
    )


def _test_config(overrides: Dict[str, Any]) -> TestConfig:
    data = dict(overrides)
    data.setdefault("units", {"unit": settings.time_unit})
    return validated(TestConfig, data)


def _envelope(results: List[dict], ingest: Optional[dict] = None, error: Optional[str] = None) -> Dict[str, Any]:
    return {
        "is_success": error is None,
        "schema_version": SCHEMA_VERSION,
        "results": results,
        "ingest": ingest,
        "error": error,
    }


def _failure(e: Exception) -> JSONResponse:
    if isinstance(e, JumpTestError):
        logger.info("request rejected: %s", e)
        return JSONResponse(status_code=400, content=_envelope([], error=f"{type(e).__name__}: {e}"))
    error_trace = traceback.format_exc()
    logger.error("unexpected error: %s", error_trace)
    message = f"{type(e).__name__}: {e}"
    if settings.expose_tracebacks:
        message = f"{message}\n\n{error_trace}"
    return JSONResponse(status_code=500, content=_envelope([], error=message))


def _check_document(document: str) -> None:
    if not document.startswith(("http://", "https://")) and not settings.allow_local_paths:
        raise IngestError("only http(s) documents are accepted; set JUMPTEST_ALLOW_LOCAL_PATHS to read server files")


def cleanup_temp_files(temp_dir: str):
    """Clean up temporary files in background."""
    shutil.rmtree(temp_dir, ignore_errors=True)


@app.get("/")
def root():
    """Health check endpoint."""
    return {
        "status": "healthy",
        "service": "Jump Test API",
        "version": "1.0.0"
    }


@app.get("/health")
def health():
    """Detailed health check."""
    return {
        "status": "healthy",
        "schema_version": SCHEMA_VERSION,
        "time_unit": settings.time_unit,
        "workers": settings.workers,
    }


@app.post("/test-jumps")
def test_jumps(background_tasks: BackgroundTasks, request: TestJumpsRequest):
    """
    Run the jump test on a tick file.

    Request Body (JSON):
    {
        "document": "https://example.com/ticks.csv",
        "sample_seconds": 5,
        "null": "both"
    }
    """
    temp_dir = tempfile.mkdtemp()
    background_tasks.add_task(cleanup_temp_files, temp_dir)
    try:
        cfg = _test_config(request.config)
        session = validated(SessionSpec, {
            "open": request.session_open,
            "close": request.session_close,
            "sample_seconds": request.sample_seconds,
            "timezone": request.session_timezone,
        })
        _check_document(request.document)
        logger.info("testing document %s", request.document)
        source = resolve_source(request.document, temp_dir)
        series, summary = ingest_file(source, session, cfg.units)
        results = run_tests(series, cfg, NULLS[request.null], request.cutoff_style)
        return JSONResponse(content=_envelope([r.to_json_dict() for r in results], ingest=summary.model_dump()))
    except Exception as e:
        return _failure(e)


@app.post("/simulate-test")
def simulate_test(request: SimulateTestRequest):
    """Simulate one path and run the jump test on it."""
    try:
        config = dict(request.config)
        config.setdefault("units", {"unit": settings.time_unit})
        spec = experiment_spec_from_mapping({
            "n_paths": 1,
            "path": request.path,
            "test": config,
            "units": config["units"],
        })
        path = simulate_path(spec.path, request.path_index)
        results = run_tests(path.series, spec.test, NULLS[request.null], request.cutoff_style)
        return JSONResponse(content=_envelope([r.to_json_dict() for r in results]))
    except Exception as e:
        return _failure(e)


if __name__ == "__main__":
    uvicorn.run(
        "api:app",
        host="0.0.0.0",
        port=settings.port,
        reload=False,
        workers=1
    )
