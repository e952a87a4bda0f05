"""
Signature promotion: turn an anomalous window into a rule so the next
occurrence is caught by signature matching instead of waiting for the window
to close.
"""
import logging
from collections import Counter
from ipaddress import IPv4Network

import numpy as np

from app.pipeline.anomaly import AnomalyScore
from app.pipeline.events import HostCategory, HostEvent, NetworkEvent
from app.pipeline.rules import Action, Content, PortSpec, Rule, RuleProto

logger = logging.getLogger(__name__)

# Bounds the substring search on very large windows
MAX_LCS_PAYLOADS = 256
MAX_LCS_BYTES = 2048

# Substrings are compared by a pair of polynomial hashes over two prime moduli
_MODULI = (2_147_483_647, 1_000_000_007)
_BASES = (131, 257)


def _power_table(base: int, mod: int) -> np.ndarray:
    table = np.empty(MAX_LCS_BYTES + 1, dtype=np.int64)
    value = 1
    for i in range(len(table)):
        table[i] = value
        value = value * base % mod
    return table


_POW = [_power_table(b, m) for b, m in zip(_BASES, _MODULI)]
_INV_POW = [_power_table(pow(b, -1, m), m) for b, m in zip(_BASES, _MODULI)]


def _prefix_sums(payload: bytes) -> list[np.ndarray]:
    data = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    sums = []
    for inv, mod in zip(_INV_POW, _MODULI):
        q = np.zeros(len(data) + 1, dtype=np.int64)
        np.cumsum(data * inv[:len(data)] % mod, out=q[1:])
        sums.append(q % mod)
    return sums


def _window_keys(sums: list[np.ndarray], length: int) -> np.ndarray:
    count = len(sums[0]) - length
    keys = np.zeros(count, dtype=np.int64)
    for q, pw, mod in zip(sums, _POW, _MODULI):
        h = (q[length:] - q[:-length]) % mod * pw[:count] % mod
        keys = keys * _MODULI[1] + h
    return keys


def longest_common_substring(payloads: list[bytes], min_len: int = 8, min_support: int = 3) -> bytes | None:
    """
    Longest byte string of at least min_len that occurs in at least min_support
    payloads. Ties go to the string found in more payloads, then the smallest.
    """
    min_len, min_support = max(min_len, 1), max(min_support, 1)
    candidates = [p[:MAX_LCS_BYTES] for p in payloads if len(p) >= min_len][:MAX_LCS_PAYLOADS]
    if len(candidates) < min_support:
        return None
    sums = [_prefix_sums(p) for p in candidates]

    def common(length: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(support, payload index, offset) of every substring shared by min_support payloads."""
        keys, owners, offsets = [], [], []
        for k, (p, s) in enumerate(zip(candidates, sums)):
            if len(p) < length:
                continue
            uniq, first = np.unique(_window_keys(s, length), return_index=True)
            keys.append(uniq)
            owners.append(np.full(len(uniq), k))
            offsets.append(first)
        flat = np.concatenate(keys)
        _, where, support = np.unique(flat, return_index=True, return_counts=True)
        keep = support >= min_support
        return support[keep], np.concatenate(owners)[where[keep]], np.concatenate(offsets)[where[keep]]

    # a common substring of length L implies one of every shorter length
    lo, hi = min_len, sorted((len(p) for p in candidates), reverse=True)[min_support - 1]
    best = common(lo)
    if not len(best[0]):
        return None
    while lo < hi:
        mid = (lo + hi + 1) // 2
        found = common(mid)
        if len(found[0]):
            lo, best = mid, found
        else:
            hi = mid - 1

    support, owners, offsets = best
    top = support == support.max()
    return min(candidates[k][i:i + lo] for k, i in zip(owners[top].tolist(), offsets[top].tolist()))


def _dominant_category(events: list[HostEvent]) -> HostCategory:
    counts = Counter(e.category for e in events)
    order = list(HostCategory)
    return max(counts, key=lambda c: (counts[c], -order.index(c)))


def _majority_port(events: list[NetworkEvent]) -> PortSpec | None:
    counts = Counter(e.dst_port for e in events)
    port, n = min(counts.items(), key=lambda item: (-item[1], item[0]))
    if 2 * n >= len(events):
        return PortSpec(port, port)
    return None


def synthesize_signature(
    entity: str,
    events: list[NetworkEvent | HostEvent],
    anomaly: AnomalyScore,
    sid: int,
    ttl_s: int,
    priority: int = 2,
    min_len: int = 8,
    min_support: int = 3,
) -> Rule:
    """Build a block-attacker rule keyed to the entity behind an anomalous window."""
    if not events:
        raise ValueError("cannot synthesize a signature from empty evidence")

    msg = f"promoted anomaly {entity}: {anomaly.top_feature} z={anomaly.score:.2f}"
    host_events = [e for e in events if isinstance(e, HostEvent)]
    if host_events:
        first = host_events[0]
        rule = Rule(
            action=Action.BLOCK_ATTACKER,
            proto=RuleProto.HOST,
            sid=sid,
            host_category=_dominant_category(host_events),
            user=first.user,
            vm=first.vm,
            msg=msg,
            priority=priority,
            ttl_s=ttl_s,
        )
    else:
        net_events = [e for e in events if isinstance(e, NetworkEvent)]
        pattern = longest_common_substring([e.payload for e in net_events], min_len, min_support)
        rule = Rule(
            action=Action.BLOCK_ATTACKER,
            proto=RuleProto.ANY,
            sid=sid,
            src_net=IPv4Network(f"{entity}/32"),
            dst_port=_majority_port(net_events),
            contents=(Content(pattern),) if pattern else (),
            msg=msg,
            priority=priority,
            ttl_s=ttl_s,
        )
    logger.info(f"[promotion] New signature sid={sid} for {entity} ({anomaly.top_feature}, z={anomaly.score:.2f})")
    return rule
