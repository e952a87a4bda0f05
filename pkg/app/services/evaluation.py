"""
Evaluation Harness

Scores an alert stream against a labeled trace. The unit is the
(entity, window) pair:
- truth-positive for kind k: the pair holds at least one "attack:k" event
- tp: some alert (either detector) attributes that entity in that window
- fp: an alerted pair with no attack-labeled events
- fn: a truth-positive nobody alerted on

Signature alerts map to the window of their timestamp; anomaly alerts carry
the window they scored in their evidence.
"""
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from pydantic import BaseModel, ValidationError

from app.errors import InputError, TraceDigestError
from app.pipeline.anomaly import window_of
from app.pipeline.events import HostEvent, NetworkEvent, entity_of
from app.pipeline.orchestrator import Alert, Detector

logger = logging.getLogger(__name__)


class AlertRecord(BaseModel):
    """One line of an alert stream, as detect writes it."""
    alert_id: int
    ts: float
    detector: Detector
    entity: str
    evidence: dict[str, Any] = {}
    action_taken: dict[str, Any] = {}
    mode: str = "inline"


def _ratio(num: int, den: int) -> float:
    return 1.0 if den == 0 else num / den


@dataclass
class DetectionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    def to_dict(self) -> dict[str, Any]:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": round(self.precision, 6),
            "recall": round(self.recall, 6),
        }


@dataclass
class EvalReport:
    window_s: float
    by_kind: dict[str, DetectionCounts] = field(default_factory=dict)
    totals: DetectionCounts = field(default_factory=DetectionCounts)
    alerts_by_detector: dict[str, int] = field(default_factory=dict)
    events_by_sensor: dict[str, int] = field(default_factory=dict)
    blocked_events: int | None = None
    config: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "window_s": self.window_s,
            "by_kind": {k: c.to_dict() for k, c in sorted(self.by_kind.items())},
            "totals": self.totals.to_dict(),
            "alerts_by_detector": dict(sorted(self.alerts_by_detector.items())),
            "events_by_sensor": dict(sorted(self.events_by_sensor.items())),
            "blocked_events": self.blocked_events,
            "config": self.config,
        }


def _records(alerts: Iterable[Alert | dict]) -> tuple[list[AlertRecord], dict, dict]:
    header: dict = {}
    summary: dict = {}
    records = []
    for i, item in enumerate(alerts, start=1):
        if isinstance(item, Alert):
            item = item.to_dict()
        if "header" in item:
            header = item["header"]
            continue
        if "summary" in item:
            summary = item["summary"]
            continue
        try:
            records.append(AlertRecord.model_validate(item))
        except ValidationError as e:
            err = e.errors()[0]
            where = ".".join(str(p) for p in err["loc"])
            raise InputError(f"invalid alert record {i}: {where}: {err['msg']}") from None
    return records, header, summary


def _alerted_window(rec: AlertRecord, window_s: float) -> int:
    if rec.detector is Detector.ANOMALY and "window_id" in rec.evidence:
        return int(rec.evidence["window_id"])
    return window_of(rec.ts, window_s)


def evaluate(
    alerts: Iterable[Alert | dict],
    truth: Sequence[NetworkEvent | HostEvent],
    window_s: float,
    truth_digest: str | None = None,
) -> EvalReport:
    """
    Score alerts against the labeled trace they were produced from.

    Header and summary records in the alert stream are optional. When both
    the header and truth_digest are present they must agree.
    """
    records, header, summary = _records(alerts)
    if header and truth_digest and header.get("trace_digest") not in (None, truth_digest):
        raise TraceDigestError(
            f"alert stream was produced from trace {header['trace_digest'][:12]}..., "
            f"not {truth_digest[:12]}..."
        )
    if header and header.get("window_s") not in (None, window_s):
        logger.warning(f"[eval] Alerts were produced with W={header['window_s']}s, evaluating with W={window_s}s")

    positives: dict[tuple[str, int], set[str]] = defaultdict(set)
    sensors: Counter[str] = Counter()
    for e in truth:
        sensors[e.sensor.value] += 1
        if e.label and e.label.startswith("attack:"):
            positives[(entity_of(e), window_of(e.ts, window_s))].add(e.label.removeprefix("attack:"))

    alerted = {(r.entity, _alerted_window(r, window_s)) for r in records}

    by_kind: dict[str, DetectionCounts] = {}
    for key, kinds in positives.items():
        for kind in kinds:
            counts = by_kind.setdefault(kind, DetectionCounts())
            if key in alerted:
                counts.tp += 1
            else:
                counts.fn += 1

    totals = DetectionCounts(
        tp=sum(1 for key in positives if key in alerted),
        fp=sum(1 for key in alerted if key not in positives),
        fn=sum(1 for key in positives if key not in alerted),
    )

    report = EvalReport(
        window_s=window_s,
        by_kind=by_kind,
        totals=totals,
        alerts_by_detector=dict(Counter(r.detector.value for r in records)),
        events_by_sensor=dict(sensors),
        blocked_events=summary.get("blocked"),
        config={k: v for k, v in header.items() if k != "trace_digest"},
    )
    logger.info(
        f"[eval] {len(records)} alerts over {len(truth)} events: tp={totals.tp} fp={totals.fp} fn={totals.fn}"
    )
    return report
