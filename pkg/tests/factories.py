"""Event/rule builders and seeded random generators shared by the tests."""
import random
from ipaddress import IPv4Network

from app.pipeline.anomaly import FEATURES, Profile
from app.pipeline.events import HostCategory, HostEvent, NetworkEvent, Proto, SensorLocation
from app.pipeline.rules import Action, Content, PortSpec, Rule, RuleProto


def net(
    ts: float = 0.0,
    src: str = "10.0.0.1",
    dst: str = "10.0.0.2",
    sport: int = 40000,
    dport: int = 80,
    payload: bytes = b"",
    size: int | None = None,
    proto: str = "tcp",
    session_id: str | None = None,
    label: str | None = None,
    **extra,
) -> NetworkEvent:
    return NetworkEvent(
        ts=ts, sensor=SensorLocation.VIRTUAL_NETWORK, proto=proto,
        src_ip=src, src_port=sport, dst_ip=dst, dst_port=dport,
        payload=payload, size=len(payload) + 40 if size is None else size,
        session_id=session_id, label=label, **extra,
    )


def host(
    ts: float = 0.0,
    vm: str = "vm-1",
    user: str = "alice",
    category: str = "auth_ok",
    label: str | None = None,
    **extra,
) -> HostEvent:
    return HostEvent(
        ts=ts, sensor=SensorLocation.VM_AGENT, vm=vm, user=user,
        category=category, label=label, **extra,
    )


def quiet_profile(window_s: float = 10.0) -> Profile:
    """A profile nothing can deviate from."""
    return Profile(window_s=window_s, n=100, means=(0.0,) * len(FEATURES), stds=(1e12,) * len(FEATURES))


# =============================================================================
# RANDOM GENERATORS
# =============================================================================

IPS = ["10.0.0.1", "10.0.0.2", "10.0.0.9", "10.0.1.5", "192.168.1.20", "192.168.1.21", "172.16.4.4"]
PORTS = [22, 53, 80, 443, 8080, 40000]
PATTERNS = [b"GET", b"admin", b"EXPLOITV1", b"\x00\x01", b"passwd", b"SELECT", b"|x\"y\\"]
USERS = ["alice", "bob", "root"]
VMS = ["vm-1", "vm-2", "vm-3"]


def random_rule(rng: random.Random, sid: int) -> Rule:
    action = rng.choice(list(Action))
    priority = rng.randint(1, 5)
    ttl = rng.choice([300, 300, 60, 1200])
    if rng.random() < 0.15:
        return Rule(
            action=action, proto=RuleProto.HOST, sid=sid,
            host_category=rng.choice(list(HostCategory)),
            user=rng.choice([None, *USERS]),
            vm=rng.choice([None, *VMS]),
            msg=f"host rule {sid}", priority=priority, ttl_s=ttl,
        )

    def addr():
        if rng.random() < 0.5:
            return None
        return IPv4Network(f"{rng.choice(IPS)}/{rng.choice([8, 16, 24, 32])}", strict=False)

    def port():
        r = rng.random()
        if r < 0.6:
            return None
        if r < 0.85:
            p = rng.choice(PORTS)
            return PortSpec(p, p)
        lo = rng.randint(0, 60000)
        return PortSpec(lo, lo + rng.randint(0, 5000))

    contents = tuple(
        Content(rng.choice(PATTERNS), nocase=rng.random() < 0.3)
        for _ in range(rng.choice([0, 0, 1, 1, 2]))
    )
    return Rule(
        action=action,
        proto=rng.choice([RuleProto.TCP, RuleProto.UDP, RuleProto.ICMP, RuleProto.ANY]),
        sid=sid, src_net=addr(), src_port=port(), dst_net=addr(), dst_port=port(),
        contents=contents, msg=f"rule {sid}; \"quoted\"", priority=priority, ttl_s=ttl,
    )


def random_payload(rng: random.Random) -> bytes:
    parts = []
    for _ in range(rng.randint(0, 4)):
        r = rng.random()
        if r < 0.4:
            chunk = rng.choice(PATTERNS)
            if rng.random() < 0.5:
                chunk = chunk.swapcase()
            parts.append(chunk)
        else:
            parts.append(rng.randbytes(rng.randint(1, 12)))
    return b"".join(parts)


def random_event(rng: random.Random, ts: float) -> NetworkEvent | HostEvent:
    if rng.random() < 0.2:
        return HostEvent(
            ts=ts, sensor=SensorLocation.VM_AGENT,
            vm=rng.choice(VMS), user=rng.choice(USERS),
            category=rng.choice(list(HostCategory)),
            detail=rng.choice(["", "ssh", "naïve détail"]),
            session_id=rng.choice([None, "s-1"]),
            label=rng.choice([None, "normal", "attack:scan"]),
        )
    payload = random_payload(rng)
    return NetworkEvent(
        ts=ts, sensor=SensorLocation.VIRTUAL_NETWORK,
        proto=rng.choice(list(Proto)),
        src_ip=rng.choice(IPS), src_port=rng.choice(PORTS + [rng.randint(0, 65535)]),
        dst_ip=rng.choice(IPS), dst_port=rng.choice(PORTS + [rng.randint(0, 65535)]),
        payload=payload, size=len(payload) + rng.randint(0, 1500),
        session_id=rng.choice([None, f"s-{rng.randint(1, 9)}"]),
        user=rng.choice([None, "alice"]),
        vm_src=rng.choice([None, "vm-1"]),
        vm_dst=rng.choice([None, "vm-2"]),
        label=rng.choice([None, "normal", "attack:exploit"]),
    )


def random_trace(rng: random.Random, n: int) -> list[NetworkEvent | HostEvent]:
    ts = 0.0
    events = []
    for _ in range(n):
        ts = round(ts + rng.expovariate(2.0), 6)
        events.append(random_event(rng, ts))
    return events
