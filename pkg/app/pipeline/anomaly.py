"""
Anomaly Engine

Normal behavior is learned as per-feature mean/deviation over (entity, window)
aggregates of a clean training trace. A window is scored by its largest
absolute z-value; each deviation is floored so near-constant features do not
blow up the score.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from app.errors import InputError, ProfileError
from app.pipeline.events import HostCategory, HostEvent, NetworkEvent, entity_of

logger = logging.getLogger(__name__)

FEATURES = (
    "event_count",
    "distinct_dst_ports",
    "distinct_dst_ips",
    "mean_bytes",
    "auth_fail_count",
    "mean_payload_entropy",
)
PROFILE_VERSION = 1

# floor_i = max(RELATIVE_FLOOR * |mean_i|, ABSOLUTE_FLOOR)
RELATIVE_FLOOR = 0.1
ABSOLUTE_FLOOR = 1.0


class FeatureVector(NamedTuple):
    event_count: float
    distinct_dst_ports: float
    distinct_dst_ips: float
    mean_bytes: float
    auth_fail_count: float
    mean_payload_entropy: float


@dataclass(frozen=True)
class AnomalyScore:
    score: float
    top_feature: str
    window_id: int | None = None
    entity: str | None = None


def window_of(ts: float, window_s: float) -> int:
    """Tumbling window index; a boundary timestamp belongs to the later window."""
    if window_s <= 0:
        raise ValueError(f"window length must be positive, got {window_s}")
    return math.floor(ts / window_s)


def payload_entropy(payload: bytes) -> float:
    """Shannon entropy over byte frequencies, in bits per byte."""
    if not payload:
        return 0.0
    counts = np.bincount(np.frombuffer(payload, dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / len(payload)
    return float(-(p * np.log2(p)).sum())


def extract_features(events: list[NetworkEvent | HostEvent]) -> FeatureVector:
    """Aggregate the events of one (entity, window) into a feature vector."""
    if not events:
        raise ValueError("cannot extract features from an empty window")
    net = [e for e in events if isinstance(e, NetworkEvent)]
    auth_fails = sum(
        1 for e in events if isinstance(e, HostEvent) and e.category is HostCategory.AUTH_FAIL
    )
    if not net:
        return FeatureVector(float(len(events)), 0.0, 0.0, 0.0, float(auth_fails), 0.0)
    return FeatureVector(
        event_count=float(len(events)),
        distinct_dst_ports=float(len({e.dst_port for e in net})),
        distinct_dst_ips=float(len({e.dst_ip for e in net})),
        mean_bytes=sum(e.size for e in net) / len(net),
        auth_fail_count=float(auth_fails),
        mean_payload_entropy=sum(payload_entropy(e.payload) for e in net) / len(net),
    )


# =============================================================================
# WINDOWING
# =============================================================================

@dataclass
class WindowAccumulator:
    entity: str
    window_id: int
    events: list = field(default_factory=list)

    def features(self) -> FeatureVector:
        return extract_features(self.events)


class WindowAggregator:
    """
    Open (entity, window) accumulators over a time-ordered stream.

    All open windows share the window id of the latest event seen, so at most
    one is open per entity; advancing time closes every one of them.
    """

    def __init__(self, window_s: float):
        if window_s <= 0:
            raise ValueError(f"window length must be positive, got {window_s}")
        self.window_s = window_s
        self.current: int | None = None
        self.open: dict[str, WindowAccumulator] = {}

    def advance(self, ts: float) -> list[WindowAccumulator]:
        """Close windows older than the one ts falls in, ordered by entity."""
        wid = window_of(ts, self.window_s)
        if self.current is not None and wid <= self.current:
            return []
        self.current = wid
        return self.drain()

    def add(self, e: NetworkEvent | HostEvent) -> None:
        wid = window_of(e.ts, self.window_s)
        if self.current is None or wid > self.current:
            self.current = wid
        entity = entity_of(e)
        acc = self.open.get(entity)
        if acc is None:
            acc = self.open[entity] = WindowAccumulator(entity, wid)
        acc.events.append(e)

    def drain(self) -> list[WindowAccumulator]:
        closed = [self.open[k] for k in sorted(self.open)]
        self.open = {}
        return closed


# =============================================================================
# PROFILE
# =============================================================================

class RunningStats:
    """Welford's single-pass mean and sample variance."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self._m2 += delta * (x - self.mean)

    @property
    def variance(self) -> float:
        return self._m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def std(self) -> float:
        return math.sqrt(max(self.variance, 0.0))


@dataclass(frozen=True)
class Profile:
    window_s: float
    n: int
    means: tuple[float, ...]
    stds: tuple[float, ...]
    trace_digest: str = ""

    @property
    def mean_vector(self) -> FeatureVector:
        return FeatureVector(*self.means)


def train(
    events: Iterable[NetworkEvent | HostEvent],
    window_s: float,
    trace_digest: str = "",
) -> Profile:
    """Learn feature statistics from a time-ordered trace of normal operation."""
    stats = [RunningStats() for _ in FEATURES]
    aggregator = WindowAggregator(window_s)

    def consume(closed: list[WindowAccumulator]) -> None:
        for acc in closed:
            for s, x in zip(stats, acc.features()):
                s.push(x)

    for e in events:
        consume(aggregator.advance(e.ts))
        aggregator.add(e)
    consume(aggregator.drain())

    n = stats[0].n
    if n < 2:
        raise InputError(f"training needs at least 2 (entity, window) samples, got {n}")
    profile = Profile(
        window_s=window_s,
        n=n,
        means=tuple(s.mean for s in stats),
        stds=tuple(s.std for s in stats),
        trace_digest=trace_digest,
    )
    logger.info(f"[anomaly] Trained profile on {n} windows (W={window_s}s)")
    return profile


def score(
    profile: Profile,
    fv: FeatureVector,
    entity: str | None = None,
    window_id: int | None = None,
) -> AnomalyScore:
    """Max over features of |x - mean| / max(std, floor); first feature wins ties."""
    if profile.n < 2:
        raise ProfileError("profile is untrained (needs n >= 2)")
    best, top = -1.0, FEATURES[0]
    for name, x, mean, std in zip(FEATURES, fv, profile.means, profile.stds):
        floor = max(RELATIVE_FLOOR * abs(mean), ABSOLUTE_FLOOR)
        z = abs(x - mean) / max(std, floor)
        if z > best:
            best, top = z, name
    return AnomalyScore(score=best, top_feature=top, window_id=window_id, entity=entity)


# =============================================================================
# PERSISTENCE
# =============================================================================

class _FeatureStats(BaseModel):
    mean: float
    std: float = Field(ge=0)


class _ProfileFile(BaseModel):
    version: int
    window_s: float = Field(gt=0)
    n: int = Field(ge=0)
    features: dict[str, _FeatureStats]
    trace_digest: str = ""


def save_profile(p: Profile) -> str:
    doc = {
        "version": PROFILE_VERSION,
        "window_s": p.window_s,
        "n": p.n,
        "features": {
            name: {"mean": mean, "std": std}
            for name, mean, std in zip(FEATURES, p.means, p.stds)
        },
        "trace_digest": p.trace_digest,
    }
    return json.dumps(doc, indent=2) + "\n"


def load_profile(text: str) -> Profile:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProfileError(f"malformed profile: {e.msg}") from None
    if not isinstance(data, dict):
        raise ProfileError("malformed profile: expected a JSON object")
    version = data.get("version")
    if version != PROFILE_VERSION:
        raise ProfileError(f"unsupported profile version: {version!r} (expected {PROFILE_VERSION})")
    try:
        doc = _ProfileFile.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        where = ".".join(str(p) for p in err["loc"])
        raise ProfileError(f"invalid profile field {where}: {err['msg']}") from None
    for name in FEATURES:
        if name not in doc.features:
            raise ProfileError(f"missing feature: {name}")
    return Profile(
        window_s=doc.window_s,
        n=doc.n,
        means=tuple(doc.features[name].mean for name in FEATURES),
        stds=tuple(doc.features[name].std for name in FEATURES),
        trace_digest=doc.trace_digest,
    )


def read_profile(path) -> Profile:
    with open(path, "r", encoding="utf-8") as f:
        profile = load_profile(f.read())
    logger.info(f"[anomaly] Loaded profile from {path} (n={profile.n}, W={profile.window_s}s)")
    return profile
