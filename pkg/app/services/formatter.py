"""
Output Formatter

Renders pipeline output into its wire and human forms:
- the alert stream (JSONL: header record, one line per alert, summary record)
- the block-table dump (JSONL, one entry per line)
- the plain-text evaluation report printed by `idps evaluate`
"""
import json
import logging
from pathlib import Path
from typing import Any, Iterable

from app.errors import InputError
from app.pipeline.orchestrator import Alert, IDPSPipeline
from app.pipeline.responder import BlockTable
from app.services.evaluation import EvalReport

logger = logging.getLogger(__name__)


def to_json_line(record: dict[str, Any]) -> str:
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)


# =============================================================================
# ALERT STREAM
# =============================================================================

def header_record(pipeline: IDPSPipeline, trace_digest: str) -> dict[str, Any]:
    cfg = pipeline.config
    return {
        "header": {
            "trace_digest": trace_digest,
            "mode": cfg.mode.value,
            "tau": cfg.tau,
            "window_s": cfg.window_s,
            "rules": len(pipeline.state.ruleset),
        }
    }


def summary_record(pipeline: IDPSPipeline) -> dict[str, Any]:
    s = pipeline.stats
    return {
        "summary": {
            "events": s.events,
            "blocked": s.blocked,
            "signature_alerts": s.signature_alerts,
            "anomaly_alerts": s.anomaly_alerts,
            "passed": s.passed,
            "promoted": s.promoted,
            "ruleset_generation": pipeline.state.ruleset.generation,
            "by_sensor": dict(sorted(s.by_sensor.items())),
        }
    }


def write_alert_stream(
    path: str | Path,
    header: dict[str, Any],
    alerts: Iterable[Alert],
    summary: dict[str, Any],
) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(to_json_line(header) + "\n")
        for alert in alerts:
            f.write(to_json_line(alert.to_dict()) + "\n")
            count += 1
        f.write(to_json_line(summary) + "\n")
    logger.info(f"[formatter] Wrote {count} alerts to {path}")
    return count


def read_alert_stream(path: str | Path) -> list[dict[str, Any]]:
    """All records of an alert stream, framing records included."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            text = raw.strip()
            if not text:
                continue
            try:
                record = json.loads(text)
            except json.JSONDecodeError as e:
                raise InputError(f"line {lineno}: malformed JSON: {e.msg}") from None
            if not isinstance(record, dict):
                raise InputError(f"line {lineno}: malformed JSON: expected an object")
            records.append(record)
    return records


# =============================================================================
# BLOCK TABLE
# =============================================================================

def write_block_dump(path: str | Path, table: BlockTable) -> int:
    rows = table.entries()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(to_json_line(row) + "\n")
    logger.info(f"[formatter] Wrote {len(rows)} block entries to {path}")
    return len(rows)


# =============================================================================
# TEXT REPORTS
# =============================================================================

def render_report(report: EvalReport) -> str:
    lines = [f"IDPS evaluation (W={report.window_s:g}s)", ""]
    lines.append(f"{'kind':<12} {'tp':>5} {'fp':>5} {'fn':>5} {'precision':>10} {'recall':>8}")
    rows = sorted(report.by_kind.items()) + [("TOTAL", report.totals)]
    for kind, c in rows:
        lines.append(f"{kind:<12} {c.tp:>5} {c.fp:>5} {c.fn:>5} {c.precision:>10.3f} {c.recall:>8.3f}")
    lines.append("")

    detectors = ", ".join(f"{k}={v}" for k, v in sorted(report.alerts_by_detector.items())) or "none"
    lines.append(f"alerts by detector: {detectors}")
    sensors = ", ".join(f"{k}={v}" for k, v in sorted(report.events_by_sensor.items())) or "none"
    lines.append(f"events by sensor:   {sensors}")
    blocked = "n/a" if report.blocked_events is None else str(report.blocked_events)
    lines.append(f"blocked events:     {blocked}")
    if report.config:
        echo = ", ".join(f"{k}={v}" for k, v in report.config.items())
        lines.append(f"config:             {echo}")
    return "\n".join(lines) + "\n"


def render_detect_summary(pipeline: IDPSPipeline) -> str:
    s = pipeline.stats
    return (
        f"events={s.events} blocked={s.blocked} signature_alerts={s.signature_alerts} "
        f"anomaly_alerts={s.anomaly_alerts} promoted={s.promoted} "
        f"generation={pipeline.state.ruleset.generation}\n"
    )
