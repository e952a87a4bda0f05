"""
Event Model and JSONL Trace Codec

Every sensor observation is one JSON object per line:
- kind "net": a network packet/flow record seen by the virtual-network sensor
- kind "host": a host action reported by the agent inside a VM

Payloads travel base64-encoded in `payload_b64`; everything downstream works
on the decoded bytes.
"""
import base64
import binascii
import hashlib
import json
import logging
from enum import StrEnum
from ipaddress import IPv4Address
from pathlib import Path
from typing import Annotated, Any, Iterable, Iterator, Literal, NamedTuple, Union

from pydantic import (
    BaseModel, ConfigDict, Field, TypeAdapter, ValidationError,
    ValidationInfo, field_validator,
)

from app.errors import TraceError, TraceOrderError

logger = logging.getLogger(__name__)


# =============================================================================
# TAXONOMY
# =============================================================================

class Proto(StrEnum):
    TCP = "tcp"
    UDP = "udp"
    ICMP = "icmp"


class HostCategory(StrEnum):
    AUTH_FAIL = "auth_fail"
    AUTH_OK = "auth_ok"
    FILE_CHANGE = "file_change"
    PROC_START = "proc_start"
    PRIV_ESCALATION = "priv_escalation"


class SensorLocation(StrEnum):
    """The four places an IDS sensor can sit in an IaaS deployment."""
    VM_AGENT = "vm_agent"
    HYPERVISOR = "hypervisor"
    VIRTUAL_NETWORK = "virtual_network"
    TRADITIONAL_NETWORK = "traditional_network"


LABEL_PATTERN = r"^(normal|attack:[a-z_]+)$"

Port = Annotated[int, Field(ge=0, le=65535)]


class Endpoint(NamedTuple):
    ip: IPv4Address
    port: int


# =============================================================================
# EVENT TYPES
# =============================================================================

class _EventBase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="ignore", populate_by_name=True)

    ts: float = Field(ge=0, allow_inf_nan=False)
    sensor: SensorLocation
    session_id: str | None = None
    # Ground truth for evaluation only; detectors never read it.
    label: str | None = Field(default=None, pattern=LABEL_PATTERN)


class NetworkEvent(_EventBase):
    kind: Literal["net"] = "net"
    proto: Proto
    src_ip: IPv4Address
    src_port: Port
    dst_ip: IPv4Address
    dst_port: Port
    payload: bytes = Field(alias="payload_b64")
    size: int = Field(alias="bytes", ge=0)
    user: str | None = None
    vm_src: str | None = None
    vm_dst: str | None = None

    @field_validator("payload", mode="before")
    @classmethod
    def _decode_payload(cls, value: Any) -> Any:
        if isinstance(value, str):
            try:
                return base64.b64decode(value, validate=True)
            except (binascii.Error, ValueError):
                raise ValueError("invalid base64") from None
        return value

    @field_validator("size")
    @classmethod
    def _covers_payload(cls, value: int, info: ValidationInfo) -> int:
        payload = info.data.get("payload")
        if payload is not None and value < len(payload):
            raise ValueError(f"bytes ({value}) is smaller than the payload length ({len(payload)})")
        return value

    @property
    def src(self) -> Endpoint:
        return Endpoint(self.src_ip, self.src_port)

    @property
    def dst(self) -> Endpoint:
        return Endpoint(self.dst_ip, self.dst_port)


class HostEvent(_EventBase):
    kind: Literal["host"] = "host"
    vm: str = Field(min_length=1)
    user: str = Field(min_length=1)
    category: HostCategory
    detail: str = ""


Event = Annotated[Union[NetworkEvent, HostEvent], Field(discriminator="kind")]

_EVENT_ADAPTER: TypeAdapter = TypeAdapter(Event)


# =============================================================================
# CODEC
# =============================================================================

def _describe(exc: ValidationError, line: int | None) -> TraceError:
    """Turn the first pydantic error into a TraceError naming the field."""
    err = exc.errors()[0]
    etype = err["type"]
    if etype == "union_tag_not_found":
        return TraceError("missing required field: kind", field="kind", line=line)
    if etype == "union_tag_invalid":
        return TraceError("invalid enum value: kind", field="kind", line=line)

    # loc is (tag, field, ...) for discriminated unions
    parts = [str(p) for p in err["loc"][1:]] or [str(p) for p in err["loc"]]
    field = ".".join(parts) if parts else None

    if etype == "missing":
        message = f"missing required field: {field}"
    elif etype in ("enum", "literal_error"):
        message = f"invalid enum value: {field}"
    elif etype.startswith("ip_"):
        message = f"invalid IP address: {field}"
    elif field and field.endswith("_port") and etype in ("greater_than_equal", "less_than_equal"):
        message = f"port out of range: {field}"
    else:
        message = f"invalid value for {field}: {err['msg']}"
    return TraceError(message, field=field, line=line)


def parse_event(line: str, lineno: int | None = None) -> NetworkEvent | HostEvent:
    """Parse one JSONL record into a validated event. Unknown keys are ignored."""
    try:
        data = json.loads(line)
    except json.JSONDecodeError as e:
        raise TraceError(f"malformed JSON: {e.msg}", line=lineno) from None
    return event_from_dict(data, lineno)


def event_from_dict(data: Any, lineno: int | None = None) -> NetworkEvent | HostEvent:
    if not isinstance(data, dict):
        raise TraceError("malformed JSON: expected an object", line=lineno)
    try:
        return _EVENT_ADAPTER.validate_python(data)
    except ValidationError as e:
        raise _describe(e, lineno) from None


def event_to_dict(e: NetworkEvent | HostEvent) -> dict[str, Any]:
    """Wire representation with a fixed key order."""
    if isinstance(e, NetworkEvent):
        record: dict[str, Any] = {
            "ts": e.ts,
            "kind": "net",
            "proto": e.proto.value,
            "src_ip": str(e.src_ip),
            "src_port": e.src_port,
            "dst_ip": str(e.dst_ip),
            "dst_port": e.dst_port,
            "bytes": e.size,
            "payload_b64": base64.b64encode(e.payload).decode("ascii"),
            "sensor": e.sensor.value,
        }
        for key in ("session_id", "user", "vm_src", "vm_dst"):
            value = getattr(e, key)
            if value is not None:
                record[key] = value
    else:
        record = {
            "ts": e.ts,
            "kind": "host",
            "vm": e.vm,
            "user": e.user,
            "category": e.category.value,
            "detail": e.detail,
            "sensor": e.sensor.value,
        }
        if e.session_id is not None:
            record["session_id"] = e.session_id
    if e.label is not None:
        record["label"] = e.label
    return record


def serialize_event(e: NetworkEvent | HostEvent) -> str:
    return json.dumps(event_to_dict(e), separators=(",", ":"), ensure_ascii=False)


def entity_of(e: NetworkEvent | HostEvent) -> str:
    """Behavioral subject of an event: source ip, or user@vm for host events."""
    if isinstance(e, NetworkEvent):
        return str(e.src_ip)
    return f"{e.user}@{e.vm}"


# =============================================================================
# TRACE I/O
# =============================================================================

class TraceReader:
    """
    Iterates a JSONL trace, yielding validated events.

    Blank lines are skipped. Timestamps must be non-decreasing unless
    check_order is off. The sha256 of the lines read is available as
    `hexdigest` once iteration finishes.
    """

    def __init__(self, lines: Iterable[str], check_order: bool = True):
        self._lines = lines
        self.check_order = check_order
        self._hash = hashlib.sha256()
        self.events_read = 0

    def __iter__(self) -> Iterator[NetworkEvent | HostEvent]:
        last_ts = None
        for lineno, raw in enumerate(self._lines, start=1):
            text = raw.strip()
            if not text:
                continue
            self._hash.update(text.encode("utf-8") + b"\n")
            event = parse_event(text, lineno)
            if self.check_order and last_ts is not None and event.ts < last_ts:
                raise TraceOrderError(
                    f"out-of-order timestamp: {event.ts} after {last_ts}", field="ts", line=lineno
                )
            last_ts = event.ts
            self.events_read += 1
            yield event

    @property
    def hexdigest(self) -> str:
        return self._hash.hexdigest()


def trace_digest(events: Iterable[NetworkEvent | HostEvent]) -> str:
    """Digest of a trace as it would be written by write_trace."""
    h = hashlib.sha256()
    for e in events:
        h.update(serialize_event(e).encode("utf-8") + b"\n")
    return h.hexdigest()


def load_trace(path: str | Path, check_order: bool = True) -> tuple[list[NetworkEvent | HostEvent], str]:
    """Read a whole trace file. Returns (events, digest)."""
    with open(path, "r", encoding="utf-8") as f:
        reader = TraceReader(f, check_order=check_order)
        events = list(reader)
    logger.info(f"[events] Loaded {len(events)} events from {path}")
    return events, reader.hexdigest


def write_trace(events: Iterable[NetworkEvent | HostEvent], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for e in events:
            f.write(serialize_event(e))
            f.write("\n")
            count += 1
    logger.info(f"[events] Wrote {count} events to {path}")
    return count
