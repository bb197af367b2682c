from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field
import logging

from app.settings import log_level, log_response_chars
from app.simulation.analysis import IntervalKind, decomposition_report, success_bound_battery
from app.simulation.engine import run_execution
from app.simulation.errors import BudgetExceededError, SimulationError
from app.simulation.export import dumps, export_trace, truncate
from app.simulation.models import ExecutionConfig, ExecutionTrace

app = FastAPI(title="Contention Bench")
logging.basicConfig(level=log_level())
logger = logging.getLogger("contention-bench")
logger.propagate = True


class LemmaRequest(BaseModel):
    samples: int = Field(default=10_000, ge=1, le=1_000_000)
    seed: int = 0
    spotVectors: int = Field(default=10, ge=0, le=1_000)
    mcSamples: int = Field(default=10_000, ge=1, le=1_000_000)


class DecomposeRequest(BaseModel):
    trace: ExecutionTrace
    kind: IntervalKind = IntervalKind.COMPLETE_DYNAMIC


def _log_result(label: str, result) -> None:
    try:
        snippet, truncated = truncate(dumps(result), log_response_chars())
        if snippet:
            logger.info("%s%s response=%s", label, " (truncated)" if truncated else "", snippet)
    except Exception:
        logger.info("%s (response not JSON-serializable)", label)


def _guard(label: str, fn):
    try:
        result = fn()
        _log_result(label, result)
        return result
    except HTTPException:
        raise
    except BudgetExceededError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except SimulationError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.exception("Unhandled error in %s", label)
        raise HTTPException(status_code=500, detail=str(e))


@app.post("/v1/run")
def run_v1(config: ExecutionConfig, includeSlots: bool = False):
    logger.info(
        "Run request protocol=%s adversary=%s n=%s d=%s seed=%s",
        config.protocol, config.adversary, config.n, config.d, config.seed,
    )
    return _guard("/v1/run", lambda: export_trace(run_execution(config), include_slots=includeSlots))


@app.post("/v1/verify-lemma")
def verify_lemma_v1(req: LemmaRequest):
    return _guard(
        "/v1/verify-lemma",
        lambda: success_bound_battery(
            samples=req.samples,
            seed=req.seed,
            spot_vectors=req.spotVectors,
            mc_samples=req.mcSamples,
        ),
    )


@app.post("/v1/decompose")
def decompose_v1(req: DecomposeRequest):
    return _guard("/v1/decompose", lambda: decomposition_report(req.trace, req.kind))


@app.get("/health")
def health():
    return {"ok": True}


@app.get("/ready")
def ready():
    return {"ready": True}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run("app.main:app", host="0.0.0.0", reload=True, port=6000)
