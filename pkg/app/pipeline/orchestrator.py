"""
Pipeline Orchestrator

Runs the integrated detection/prevention workflow over a time-ordered stream:
1. Close anomaly windows that the new event's timestamp has moved past
2. Inline mode: drop events hitting a live block entry
3. Signature matching on the current ruleset generation
4. Unmatched events feed the per-(entity, window) anomaly accumulators

A window that scores at or above tau raises an anomaly alert, is promoted into
a new signature, and triggers the configured response. Output must equal the
sequential fold over the stream, so everything here runs in event order.
"""
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import StrEnum
from typing import Any, Callable, Iterable

from app.errors import TraceOrderError
from app.pipeline.anomaly import FEATURES, Profile, WindowAccumulator, WindowAggregator, score
from app.pipeline.events import HostEvent, NetworkEvent, entity_of
from app.pipeline.matcher import CompiledRuleset, Match, add_rule, compile_ruleset
from app.pipeline.promotion import synthesize_signature
from app.pipeline.responder import BlockReason, BlockTable, ResponseAction, ResponseKind, target_of
from app.pipeline.rules import PROMOTED_SID_BASE, Action, Rule

logger = logging.getLogger(__name__)


class Mode(StrEnum):
    PASSIVE = "passive"
    INLINE = "inline"


class Detector(StrEnum):
    SIGNATURE = "signature"
    ANOMALY = "anomaly"


class VerdictKind(StrEnum):
    BLOCKED = "blocked"
    SIGNATURE_ALERT = "signature_alert"
    PASSED = "passed"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    reason: BlockReason | None = None
    matches: tuple[Match, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"verdict": self.kind.value}
        if self.reason is not None:
            out["reason"] = {"kind": self.reason.kind.value, "key": self.reason.key, "expiry_ts": self.reason.expiry_ts}
        if self.matches:
            out["sids"] = [m.sid for m in self.matches]
        return out


PASSED = Verdict(VerdictKind.PASSED)


@dataclass(frozen=True)
class Alert:
    alert_id: int
    ts: float
    detector: Detector
    entity: str
    evidence: dict[str, Any]
    action_taken: ResponseAction
    mode: Mode

    def to_dict(self) -> dict[str, Any]:
        return {
            "alert_id": self.alert_id,
            "ts": self.ts,
            "detector": self.detector.value,
            "entity": self.entity,
            "evidence": self.evidence,
            "action_taken": self.action_taken.to_dict(),
            "mode": self.mode.value,
        }


# =============================================================================
# CONFIGURATION & STATE
# =============================================================================

@dataclass(frozen=True)
class PipelineConfig:
    window_s: float = 10.0
    tau: float = 4.0
    mode: Mode = Mode.INLINE
    default_ttl_s: int = 300
    anomaly_action: ResponseKind = ResponseKind.BLOCK_ATTACKER
    promoted_priority: int = 2
    promoted_sid_base: int = PROMOTED_SID_BASE
    lcs_min_len: int = 8
    lcs_min_payloads: int = 3

    def __post_init__(self):
        if self.window_s <= 0:
            raise ValueError(f"window_s must be positive, got {self.window_s}")
        if self.anomaly_action not in (ResponseKind.BLOCK_ATTACKER, ResponseKind.ALERT_ONLY):
            raise ValueError(f"anomaly_action must be block_attacker or alert_only, got {self.anomaly_action}")

    @classmethod
    def from_settings(cls, s, **overrides) -> "PipelineConfig":
        """Resolve app.config.Settings plus per-invocation overrides (None means keep)."""
        base = cls(
            window_s=s.window_s,
            tau=s.tau,
            mode=Mode(s.mode),
            default_ttl_s=s.default_ttl_s,
            anomaly_action=ResponseKind(s.anomaly_action),
            promoted_priority=s.promoted_priority,
            promoted_sid_base=s.promoted_sid_base,
            lcs_min_len=s.lcs_min_len,
            lcs_min_payloads=s.lcs_min_payloads,
        )
        changes = {k: v for k, v in overrides.items() if v is not None}
        if "mode" in changes:
            changes["mode"] = Mode(changes["mode"])
        return replace(base, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["mode"] = self.mode.value
        out["anomaly_action"] = self.anomaly_action.value
        return out


@dataclass
class PipelineStats:
    events: int = 0
    blocked: int = 0
    signature_alerts: int = 0
    passed: int = 0
    sd_lookups: int = 0
    accumulated: int = 0
    windows_closed: int = 0
    anomaly_alerts: int = 0
    promoted: int = 0
    by_sensor: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class PipelineState:
    ruleset: CompiledRuleset
    profile: Profile
    blocks: BlockTable
    windows: WindowAggregator
    next_promoted_sid: int
    config: PipelineConfig
    next_alert_id: int = 1
    last_ts: float | None = None
    promoted_rules: list[Rule] = field(default_factory=list)
    stats: PipelineStats = field(default_factory=PipelineStats)


def _response_for(match: Match, e: NetworkEvent | HostEvent) -> ResponseAction:
    if match.action is Action.TERMINATE_SESSION:
        if e.session_id is None:
            return ResponseAction.alert_only()
        return ResponseAction.terminate_session(e.session_id, match.ttl_s)
    if match.action is Action.BLOCK_ATTACKER:
        return ResponseAction.block_attacker(entity_of(e), match.ttl_s)
    if match.action is Action.BLOCK_TARGET:
        return ResponseAction.block_target(target_of(e), match.ttl_s)
    return ResponseAction.alert_only()


# =============================================================================
# PIPELINE
# =============================================================================

class IDPSPipeline:
    """
    Sequential detection/prevention pipeline.

    Alerts are appended to `alerts` and handed to on_alert (if given) as they
    are emitted.
    """

    def __init__(
        self,
        rules: Iterable[Rule] | CompiledRuleset,
        profile: Profile,
        config: PipelineConfig | None = None,
        on_alert: Callable[[Alert], None] | None = None,
    ):
        config = config or PipelineConfig()
        ruleset = rules if isinstance(rules, CompiledRuleset) else compile_ruleset(rules)
        highest = max((r.sid for r in ruleset.rules), default=0)
        self.state = PipelineState(
            ruleset=ruleset,
            profile=profile,
            blocks=BlockTable(),
            windows=WindowAggregator(config.window_s),
            next_promoted_sid=max(config.promoted_sid_base, highest + 1),
            config=config,
        )
        self.alerts: list[Alert] = []
        self._on_alert = on_alert
        if profile.window_s != config.window_s:
            logger.warning(
                f"[pipeline] Profile trained with W={profile.window_s}s but pipeline uses W={config.window_s}s"
            )

    @property
    def config(self) -> PipelineConfig:
        return self.state.config

    @property
    def stats(self) -> PipelineStats:
        return self.state.stats

    def _emit(self, ts: float, detector: Detector, entity: str, evidence: dict, action: ResponseAction) -> Alert:
        st = self.state
        alert = Alert(st.next_alert_id, ts, detector, entity, evidence, action, st.config.mode)
        st.next_alert_id += 1
        self.alerts.append(alert)
        if self._on_alert is not None:
            self._on_alert(alert)
        return alert

    # -------------------------------------------------------------------------

    def process_event(self, e: NetworkEvent | HostEvent) -> Verdict:
        st = self.state
        if st.last_ts is not None and e.ts < st.last_ts:
            raise TraceOrderError(f"out-of-order timestamp: {e.ts} after {st.last_ts}", field="ts")
        st.last_ts = e.ts
        st.stats.events += 1
        sensor = e.sensor.value
        st.stats.by_sensor[sensor] = st.stats.by_sensor.get(sensor, 0) + 1

        closed = st.windows.advance(e.ts)
        if closed:
            for acc in closed:
                self._close(acc, now=e.ts)
            st.blocks = st.blocks.expire(e.ts)

        if st.config.mode is Mode.INLINE:
            reason = st.blocks.is_blocked(e, e.ts)
            if reason is not None:
                st.stats.blocked += 1
                return Verdict(VerdictKind.BLOCKED, reason=reason)

        st.stats.sd_lookups += 1
        matches = st.ruleset.match(e)
        if matches:
            top = matches[0]
            action = _response_for(top, e)
            st.blocks = st.blocks.apply(action, e.ts)
            evidence = {
                "sid": top.sid,
                "msg": top.msg,
                "priority": top.priority,
                "matched_sids": [m.sid for m in matches],
                "sensor": sensor,
            }
            self._emit(e.ts, Detector.SIGNATURE, entity_of(e), evidence, action)
            st.stats.signature_alerts += 1
            return Verdict(VerdictKind.SIGNATURE_ALERT, matches=tuple(matches))

        st.windows.add(e)
        st.stats.accumulated += 1
        st.stats.passed += 1
        return PASSED

    def close_window(self, entity: str, window_id: int) -> Alert | None:
        """Score and discard one open accumulator."""
        acc = self.state.windows.open.get(entity)
        if acc is None or acc.window_id != window_id:
            raise KeyError(f"no open window {window_id} for {entity}")
        del self.state.windows.open[entity]
        now = self.state.last_ts if self.state.last_ts is not None else 0.0
        return self._close(acc, now=now)

    def _close(self, acc: WindowAccumulator, now: float) -> Alert | None:
        st = self.state
        cfg = st.config
        st.stats.windows_closed += 1
        fv = acc.features()
        result = score(st.profile, fv, entity=acc.entity, window_id=acc.window_id)
        if result.score < cfg.tau:
            return None

        sid = st.next_promoted_sid
        st.next_promoted_sid += 1
        rule = synthesize_signature(
            acc.entity, acc.events, result,
            sid=sid,
            ttl_s=cfg.default_ttl_s,
            priority=cfg.promoted_priority,
            min_len=cfg.lcs_min_len,
            min_support=cfg.lcs_min_payloads,
        )
        st.ruleset = add_rule(st.ruleset, rule)
        st.promoted_rules.append(rule)
        st.stats.promoted += 1

        if cfg.anomaly_action is ResponseKind.BLOCK_ATTACKER:
            action = ResponseAction.block_attacker(acc.entity, cfg.default_ttl_s)
        else:
            action = ResponseAction.alert_only()
        st.blocks = st.blocks.apply(action, now)

        evidence = {
            "score": result.score,
            "top_feature": result.top_feature,
            "window_id": acc.window_id,
            "features": dict(zip(FEATURES, fv)),
            "promoted_sid": sid,
        }
        st.stats.anomaly_alerts += 1
        logger.info(
            f"[pipeline] Anomaly: {acc.entity} window {acc.window_id} "
            f"z={result.score:.2f} ({result.top_feature}) -> sid {sid}"
        )
        return self._emit(now, Detector.ANOMALY, acc.entity, evidence, action)

    def flush(self) -> list[Alert]:
        """End of stream: close every open window."""
        st = self.state
        now = st.last_ts if st.last_ts is not None else 0.0
        alerts = []
        for acc in st.windows.drain():
            alert = self._close(acc, now=now)
            if alert is not None:
                alerts.append(alert)
        return alerts


@dataclass
class RunResult:
    verdicts: list[Verdict]
    alerts: list[Alert]
    pipeline: IDPSPipeline

    @property
    def state(self) -> PipelineState:
        return self.pipeline.state


def run(
    events: Iterable[NetworkEvent | HostEvent],
    rules: Iterable[Rule] | CompiledRuleset,
    profile: Profile,
    config: PipelineConfig | None = None,
    on_alert: Callable[[Alert], None] | None = None,
    keep_verdicts: bool = True,
) -> RunResult:
    """Fold process_event over the trace, then close all windows."""
    pipeline = IDPSPipeline(rules, profile, config, on_alert=on_alert)
    verdicts: list[Verdict] = []
    for e in events:
        verdict = pipeline.process_event(e)
        if keep_verdicts:
            verdicts.append(verdict)
    pipeline.flush()
    s = pipeline.stats
    logger.info(
        f"[pipeline] Done: {s.events} events, {s.signature_alerts} signature alerts, "
        f"{s.anomaly_alerts} anomaly alerts, {s.blocked} blocked, {s.promoted} promoted"
    )
    return RunResult(verdicts, pipeline.alerts, pipeline)
