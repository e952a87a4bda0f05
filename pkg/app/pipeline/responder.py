"""
Responder (prevention)

Holds the block table and turns detections into the three prevention
actions: terminate the attacking session, block the attacker, block the
target. Every entry expires after its TTL; re-blocking only ever extends.

BlockTable is a value: apply() and expire() return a new table.
"""
import logging
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any

from app.pipeline.events import HostEvent, NetworkEvent, entity_of
from app.pipeline.rules import DEFAULT_TTL_S

logger = logging.getLogger(__name__)


class ResponseKind(StrEnum):
    ALERT_ONLY = "alert_only"
    TERMINATE_SESSION = "terminate_session"
    BLOCK_ATTACKER = "block_attacker"
    BLOCK_TARGET = "block_target"


class ReasonKind(StrEnum):
    SESSION_TERMINATED = "session_terminated"
    ATTACKER_BLOCKED = "attacker_blocked"
    TARGET_BLOCKED = "target_blocked"


@dataclass(frozen=True)
class ResponseAction:
    kind: ResponseKind
    key: str | None = None
    ttl_s: float = DEFAULT_TTL_S

    def __post_init__(self):
        if self.kind is not ResponseKind.ALERT_ONLY:
            if not self.key:
                raise ValueError(f"{self.kind} needs a key")
            if self.ttl_s <= 0:
                raise ValueError(f"{self.kind} needs a positive ttl, got {self.ttl_s}")

    @classmethod
    def alert_only(cls) -> "ResponseAction":
        return cls(ResponseKind.ALERT_ONLY)

    @classmethod
    def terminate_session(cls, session_id: str, ttl_s: float = DEFAULT_TTL_S) -> "ResponseAction":
        return cls(ResponseKind.TERMINATE_SESSION, session_id, ttl_s)

    @classmethod
    def block_attacker(cls, entity: str, ttl_s: float = DEFAULT_TTL_S) -> "ResponseAction":
        return cls(ResponseKind.BLOCK_ATTACKER, entity, ttl_s)

    @classmethod
    def block_target(cls, resource: str, ttl_s: float = DEFAULT_TTL_S) -> "ResponseAction":
        return cls(ResponseKind.BLOCK_TARGET, resource, ttl_s)

    def to_dict(self) -> dict[str, Any]:
        if self.kind is ResponseKind.ALERT_ONLY:
            return {"kind": self.kind.value}
        return {"kind": self.kind.value, "key": self.key, "ttl_s": self.ttl_s}


@dataclass(frozen=True)
class BlockReason:
    kind: ReasonKind
    key: str
    expiry_ts: float


def target_of(e: NetworkEvent | HostEvent) -> str:
    """Resource a block-target action protects: the destination ip, or the VM for host events."""
    if isinstance(e, NetworkEvent):
        return str(e.dst_ip)
    return f"vm:{e.vm}"


@dataclass(frozen=True)
class BlockTable:
    # key -> expiry timestamp (exclusive)
    attackers: dict[str, float] = field(default_factory=dict)
    targets: dict[str, float] = field(default_factory=dict)
    sessions: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.attackers) + len(self.targets) + len(self.sessions)

    def apply(self, action: ResponseAction, now: float) -> "BlockTable":
        table_name = {
            ResponseKind.TERMINATE_SESSION: "sessions",
            ResponseKind.BLOCK_ATTACKER: "attackers",
            ResponseKind.BLOCK_TARGET: "targets",
        }.get(action.kind)
        if table_name is None:
            return self
        current = getattr(self, table_name)
        expiry = now + action.ttl_s
        if current.get(action.key, float("-inf")) >= expiry:
            return self
        updated = dict(current)
        updated[action.key] = expiry
        logger.debug(f"[responder] {action.kind} {action.key} until {expiry}")
        return BlockTable(**{
            "attackers": self.attackers,
            "targets": self.targets,
            "sessions": self.sessions,
            table_name: updated,
        })

    def is_blocked(self, e: NetworkEvent | HostEvent, now: float) -> BlockReason | None:
        if e.session_id is not None:
            expiry = self.sessions.get(e.session_id)
            if expiry is not None and now < expiry:
                return BlockReason(ReasonKind.SESSION_TERMINATED, e.session_id, expiry)
        entity = entity_of(e)
        expiry = self.attackers.get(entity)
        if expiry is not None and now < expiry:
            return BlockReason(ReasonKind.ATTACKER_BLOCKED, entity, expiry)
        if isinstance(e, NetworkEvent) and self.targets:
            keys = [str(e.dst_ip)]
            if e.vm_dst is not None:
                keys.append(f"vm:{e.vm_dst}")
            for key in keys:
                expiry = self.targets.get(key)
                if expiry is not None and now < expiry:
                    return BlockReason(ReasonKind.TARGET_BLOCKED, key, expiry)
        return None

    def expire(self, now: float) -> "BlockTable":
        def live(entries: dict[str, float]) -> dict[str, float]:
            return {k: v for k, v in entries.items() if v > now}
        return BlockTable(live(self.attackers), live(self.targets), live(self.sessions))

    def entries(self) -> list[dict[str, Any]]:
        """Flat, ordered dump of every entry."""
        rows = []
        for kind, table in (("attacker", self.attackers), ("target", self.targets), ("session", self.sessions)):
            for key in sorted(table):
                rows.append({"kind": kind, "key": key, "expiry_ts": table[key]})
        return rows


def apply(bt: BlockTable, action: ResponseAction, now: float) -> BlockTable:
    return bt.apply(action, now)


def is_blocked(bt: BlockTable, e: NetworkEvent | HostEvent, now: float) -> BlockReason | None:
    return bt.is_blocked(e, now)


def expire(bt: BlockTable, now: float) -> BlockTable:
    return bt.expire(now)
