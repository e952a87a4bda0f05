"""
Sensor Ingest API Routes

VM agents and the virtual-network tap post batches of events; each batch is
run through the one live pipeline in arrival order, under a lock, so the
service produces the same alert stream as a batch `idps detect` run.
"""
import asyncio
import logging
from typing import Any

from fastapi import APIRouter, HTTPException
from pydantic import BaseModel

from app.errors import InputError, RuleError
from app.pipeline.events import event_from_dict
from app.pipeline.orchestrator import IDPSPipeline
from app.pipeline.rules import parse_ruleset

logger = logging.getLogger(__name__)
router = APIRouter(prefix="/api")

# The live pipeline; set by the app lifespan (or tests)
_state: dict[str, IDPSPipeline | None] = {"pipeline": None}
_lock = asyncio.Lock()


def install_pipeline(pipeline: IDPSPipeline | None) -> None:
    _state["pipeline"] = pipeline


def _pipeline() -> IDPSPipeline:
    pipeline = _state["pipeline"]
    if pipeline is None:
        raise HTTPException(status_code=503, detail="no pipeline loaded (set IDPS_RULES_PATH and IDPS_PROFILE_PATH)")
    return pipeline


# =============================================================================
# Request Models
# =============================================================================

class RulesRequest(BaseModel):
    text: str


# =============================================================================
# Ingest
# =============================================================================

@router.post("/events")
async def ingest_events(batch: list[dict[str, Any]]):
    """
    Process a batch of trace records. The batch is validated as a whole
    before any event is processed.
    """
    pipeline = _pipeline()
    try:
        events = [event_from_dict(item, i) for i, item in enumerate(batch, start=1)]
    except InputError as e:
        raise HTTPException(status_code=422, detail=str(e))

    async with _lock:
        last = pipeline.state.last_ts
        for i, e in enumerate(events, start=1):
            if last is not None and e.ts < last:
                raise HTTPException(
                    status_code=409,
                    detail=f"event {i}: out-of-order timestamp: {e.ts} after {last}",
                )
            last = e.ts

        first_new = len(pipeline.alerts)
        verdicts = [pipeline.process_event(e).to_dict() for e in events]
        alerts = [a.to_dict() for a in pipeline.alerts[first_new:]]

    logger.info(f"[api] Ingested {len(events)} events, {len(alerts)} new alerts")
    return {"verdicts": verdicts, "alerts": alerts}


@router.post("/flush")
async def flush():
    """End of stream: close every open window."""
    pipeline = _pipeline()
    async with _lock:
        alerts = pipeline.flush()
    return {"alerts": [a.to_dict() for a in alerts]}


# =============================================================================
# State
# =============================================================================

@router.get("/alerts")
async def list_alerts(since: int = 0):
    """Alerts with alert_id greater than `since`."""
    pipeline = _pipeline()
    return {"alerts": [a.to_dict() for a in pipeline.alerts if a.alert_id > since]}


@router.get("/blocks")
async def list_blocks():
    pipeline = _pipeline()
    return {
        "entries": pipeline.state.blocks.entries(),
        "as_of": pipeline.state.last_ts,
    }


@router.get("/stats")
async def stats():
    pipeline = _pipeline()
    return {
        "stats": pipeline.stats.to_dict(),
        "config": pipeline.config.to_dict(),
        "ruleset_generation": pipeline.state.ruleset.generation,
        "rules": len(pipeline.state.ruleset),
    }


@router.post("/rules/validate")
async def validate_rules(req: RulesRequest):
    try:
        rules = parse_ruleset(req.text)
    except RuleError as e:
        return {"valid": False, "error": e.reason, "line": e.line, "column": e.column}
    return {"valid": True, "rules": len(rules)}
