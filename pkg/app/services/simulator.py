"""
Cloud IaaS Traffic Simulator

Generates labeled, time-ordered traces for a small IaaS deployment:
physical hosts, each with a hypervisor and a handful of VMs on a virtual
network. Sensors sit where the detector is deployed: the agent inside each VM
(host events) and the virtual network (network events).

Background traffic is low-variance by design: every VM emits events at a
fixed rate, one per slot, with seeded jitter inside the slot. Attacks are
injected on top from their own seeded streams, so adding an attack never
changes the background.
"""
import logging
import math
import random
from dataclasses import dataclass, field
from enum import StrEnum
from ipaddress import IPv4Address

from pydantic import BaseModel, Field, ValidationError, model_validator

from app.errors import ScenarioError
from app.pipeline.anomaly import window_of
from app.pipeline.events import HostCategory, HostEvent, NetworkEvent, Proto, SensorLocation
from app.pipeline.rules import serialize_ruleset, parse_ruleset

logger = logging.getLogger(__name__)

EXPLOIT_MARKER = b"EXPLOITV1"

# Expected bytes of a background network event: ~40 payload + 400 mean padding
BACKGROUND_MEAN_BYTES = 440
EXFIL_FACTOR = 25


class AttackKind(StrEnum):
    SCAN = "scan"
    BRUTEFORCE = "bruteforce"
    EXPLOIT = "exploit"
    EXFIL = "exfil"


# Minimum intensity that makes each kind what it claims to be
MIN_INTENSITY = {
    AttackKind.SCAN: 30,
    AttackKind.BRUTEFORCE: 20,
    AttackKind.EXPLOIT: 1,
    AttackKind.EXFIL: 1,
}


# =============================================================================
# CONFIGURATION
# =============================================================================

class AttackSpec(BaseModel):
    kind: AttackKind
    start_ts: float = Field(ge=0)
    # ip for network attacks; user name for bruteforce
    attacker: str
    # ip or VM id; VM id for bruteforce
    target: str
    intensity: int = Field(ge=1)
    spread_s: float = Field(default=5.0, gt=0)

    @model_validator(mode="after")
    def _check_intensity(self):
        minimum = MIN_INTENSITY[self.kind]
        if self.intensity < minimum:
            raise ValueError(f"{self.kind} needs intensity >= {minimum}")
        return self


class ScenarioConfig(BaseModel):
    seed: int = 42
    duration_s: float = Field(default=600.0, gt=0)
    hosts: int = Field(default=2, ge=1, le=200)
    vms_per_host: int = Field(default=3, ge=1, le=50)
    net_rate: float = Field(default=0.5, gt=0)
    host_rate: float = Field(default=0.2, gt=0)
    # scan and bruteforce must land in one window of this length
    window_s: float = Field(default=10.0, gt=0)
    attacks: list[AttackSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_attacks(self):
        for i, a in enumerate(self.attacks):
            if a.start_ts >= self.duration_s:
                raise ValueError(f"attacks[{i}].start_ts must be < duration_s")
            if a.start_ts + a.spread_s > self.duration_s:
                raise ValueError(f"attacks[{i}] runs past duration_s")
            if a.kind in (AttackKind.SCAN, AttackKind.BRUTEFORCE):
                last = _ts(a.start_ts + (a.intensity - 1) * (a.spread_s / a.intensity))
                if window_of(_ts(a.start_ts), self.window_s) != window_of(last, self.window_s):
                    raise ValueError(f"attacks[{i}] ({a.kind}) must fall within one {self.window_s:g}s window")
        return self


def load_scenario(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        err = e.errors()[0]
        where = ".".join(str(p) for p in err["loc"]) or "config"
        raise ScenarioError(f"invalid scenario field {where}: {err['msg']}") from None


# =============================================================================
# TOPOLOGY
# =============================================================================

USERS = ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"]
BASE_SERVICES = [(22, "ssh"), (80, "http"), (443, "https")]
EXTRA_SERVICES = [(5432, "postgres"), (6379, "redis"), (8080, "http")]

BENIGN_PAYLOADS = {
    "ssh": [b"SSH-2.0-OpenSSH_8.9p1 Ubuntu-3", b"SSH-2.0-OpenSSH_9.3 keepalive@openssh.com"],
    "http": [
        b"GET /index.html HTTP/1.1\r\nHost: app",
        b"GET /api/v1/health HTTP/1.1\r\nAccept: */*",
        b"POST /api/v1/orders HTTP/1.1\r\nContent-Type: json",
    ],
    "https": [
        b"\x16\x03\x01\x02\x00\x01\x00\x01\xfc\x03\x03 client hello",
        b"\x17\x03\x03\x00\x45 application data record",
    ],
    "postgres": [b"SELECT id, status FROM orders WHERE id = $1", b"BEGIN; UPDATE carts SET qty = 2; COMMIT"],
    "redis": [b"*2\r\n$3\r\nGET\r\n$9\r\nsession:1", b"*3\r\n$3\r\nSET\r\n$5\r\ncache\r\n$2\r\nok"],
}

HOST_DETAILS = {
    HostCategory.AUTH_OK: ["ssh login", "sudo session opened", "console login"],
    HostCategory.AUTH_FAIL: ["ssh login failed"],
    HostCategory.FILE_CHANGE: ["/var/log/app.log rotated", "/etc/app/config.yml written", "/tmp/cache refreshed"],
    HostCategory.PROC_START: ["nginx worker", "cron: backup.sh", "python3 worker.py"],
}
HOST_CATEGORY_WEIGHTS = [
    (HostCategory.AUTH_OK, 0.35),
    (HostCategory.FILE_CHANGE, 0.30),
    (HostCategory.PROC_START, 0.30),
    (HostCategory.AUTH_FAIL, 0.05),
]


@dataclass
class PhysicalHost:
    hypervisor: str
    vms: list[str]


@dataclass
class Topology:
    hosts: list[PhysicalHost] = field(default_factory=list)
    vm_ip: dict[str, str] = field(default_factory=dict)
    services: dict[str, list[tuple[int, str]]] = field(default_factory=dict)
    users: dict[str, str] = field(default_factory=dict)

    @property
    def vms(self) -> list[str]:
        return [vm for h in self.hosts for vm in h.vms]

    def resolve(self, target: str) -> tuple[str, str | None]:
        """(ip, vm id) for a VM id or a bare ip."""
        if target in self.vm_ip:
            return self.vm_ip[target], target
        for vm, ip in self.vm_ip.items():
            if ip == target:
                return ip, vm
        IPv4Address(target)
        return target, None


def build_topology(cfg: ScenarioConfig) -> Topology:
    topo = Topology()
    k = 0
    for h in range(1, cfg.hosts + 1):
        host = PhysicalHost(hypervisor=f"hv-{h}", vms=[])
        for _ in range(cfg.vms_per_host):
            k += 1
            vm = f"vm-{k}"
            host.vms.append(vm)
            topo.vm_ip[vm] = f"10.{k // 250}.{h % 256}.{10 + k % 240}"
            topo.services[vm] = BASE_SERVICES + [EXTRA_SERVICES[k % len(EXTRA_SERVICES)]]
            topo.users[vm] = USERS[(k - 1) % len(USERS)]
        topo.hosts.append(host)
    return topo


# =============================================================================
# GENERATION
# =============================================================================

def _ts(value: float) -> float:
    return math.floor(value * 1e6) / 1e6


def _background_network(cfg: ScenarioConfig, topo: Topology, vm: str) -> list[NetworkEvent]:
    rng = random.Random(f"{cfg.seed}:net:{vm}")
    others = [v for v in topo.vms if v != vm] or [vm]
    period = 1.0 / cfg.net_rate
    events = []
    for i in range(int(cfg.duration_s * cfg.net_rate)):
        dst = rng.choice(others)
        port, service = rng.choice(topo.services[dst])
        payload = rng.choice(BENIGN_PAYLOADS[service])
        events.append(NetworkEvent(
            ts=_ts(i * period + rng.random() * period),
            sensor=SensorLocation.VIRTUAL_NETWORK,
            session_id=f"{vm}-s{i}",
            label="normal",
            proto=Proto.TCP,
            src_ip=topo.vm_ip[vm],
            src_port=rng.randint(32768, 60999),
            dst_ip=topo.vm_ip[dst],
            dst_port=port,
            payload=payload,
            size=len(payload) + rng.randint(200, 600),
            vm_src=vm,
            vm_dst=dst,
        ))
    return events


def _background_host(cfg: ScenarioConfig, topo: Topology, vm: str) -> list[HostEvent]:
    rng = random.Random(f"{cfg.seed}:host:{vm}")
    categories = [c for c, _ in HOST_CATEGORY_WEIGHTS]
    weights = [w for _, w in HOST_CATEGORY_WEIGHTS]
    period = 1.0 / cfg.host_rate
    events = []
    for i in range(int(cfg.duration_s * cfg.host_rate)):
        category = rng.choices(categories, weights)[0]
        events.append(HostEvent(
            ts=_ts(i * period + rng.random() * period),
            sensor=SensorLocation.VM_AGENT,
            label="normal",
            vm=vm,
            user=topo.users[vm],
            category=category,
            detail=rng.choice(HOST_DETAILS[category]),
        ))
    return events


def _attack_events(cfg: ScenarioConfig, topo: Topology, index: int, spec: AttackSpec) -> list:
    rng = random.Random(f"{cfg.seed}:attack:{index}")
    label = f"attack:{spec.kind.value}"
    step = spec.spread_s / spec.intensity
    times = [_ts(spec.start_ts + j * step) for j in range(spec.intensity)]

    if spec.kind is AttackKind.BRUTEFORCE:
        if spec.target not in topo.vm_ip:
            raise ScenarioError(f"invalid scenario field attacks.{index}.target: unknown VM {spec.target}")
        return [
            HostEvent(
                ts=t, sensor=SensorLocation.VM_AGENT, label=label, vm=spec.target,
                user=spec.attacker, category=HostCategory.AUTH_FAIL, detail="ssh login failed",
            )
            for t in times
        ]

    try:
        dst_ip, dst_vm = topo.resolve(spec.target)
        src_ip, src_vm = topo.resolve(spec.attacker)
    except ValueError:
        raise ScenarioError(f"invalid scenario field attacks.{index}: attacker/target must be a VM id or IPv4") from None
    common = dict(sensor=SensorLocation.VIRTUAL_NETWORK, label=label, proto=Proto.TCP,
                  src_ip=src_ip, dst_ip=dst_ip, vm_src=src_vm, vm_dst=dst_vm)

    if spec.kind is AttackKind.SCAN:
        ports = rng.sample(range(1, 10000), spec.intensity)
        src_port = rng.randint(32768, 60999)
        return [
            NetworkEvent(ts=t, src_port=src_port, dst_port=p, payload=b"", size=60, **common)
            for t, p in zip(times, ports)
        ]

    if spec.kind is AttackKind.EXPLOIT:
        port = topo.services[dst_vm][1][0] if dst_vm else 80
        events = []
        for j, t in enumerate(times):
            payload = (
                b"POST /cgi-bin/upload.cgi HTTP/1.1\r\nX-Data: " + EXPLOIT_MARKER
                + b" " + rng.randbytes(12).hex().encode("ascii")
            )
            events.append(NetworkEvent(
                ts=t, src_port=rng.randint(32768, 60999), dst_port=port, payload=payload,
                size=len(payload) + 40, session_id=f"exploit-{index}-{j}", **common,
            ))
        return events

    # exfil
    return [
        NetworkEvent(
            ts=t, src_port=rng.randint(32768, 60999), dst_port=443, payload=rng.randbytes(48),
            size=EXFIL_FACTOR * BACKGROUND_MEAN_BYTES + rng.randint(0, 1000),
            session_id=f"exfil-{index}", **common,
        )
        for t in times
    ]


def generate(cfg: ScenarioConfig) -> list[NetworkEvent | HostEvent]:
    """Deterministic labeled trace, sorted by timestamp."""
    topo = build_topology(cfg)
    events: list = []
    for vm in topo.vms:
        events.extend(_background_network(cfg, topo, vm))
        events.extend(_background_host(cfg, topo, vm))
    for i, spec in enumerate(cfg.attacks):
        events.extend(_attack_events(cfg, topo, i, spec))
    # stable: equal timestamps keep generation order
    events.sort(key=lambda e: e.ts)
    logger.info(
        f"[sim] Generated {len(events)} events for {len(topo.vms)} VMs over {cfg.duration_s}s "
        f"with {len(cfg.attacks)} attacks (seed {cfg.seed})"
    )
    return events


# =============================================================================
# DEFAULT SCENARIO & RULES
# =============================================================================

def default_attacks(cfg: ScenarioConfig, kinds: list[str] | None = None) -> list[AttackSpec]:
    """One attack of each requested kind, spaced through the run on window boundaries."""
    topo = build_topology(cfg)
    vms = topo.vms
    victim = vms[min(3, len(vms) - 1)]
    brute_vm = vms[min(1, len(vms) - 1)]
    web_vm = vms[0]
    w = cfg.window_s
    slot = max(w, math.floor(cfg.duration_s / 5 / w) * w)
    spread = min(5.0, w / 2)
    specs = {
        AttackKind.SCAN: AttackSpec(kind="scan", start_ts=slot, attacker="203.0.113.66",
                                    target=topo.vm_ip[victim], intensity=40, spread_s=spread),
        AttackKind.BRUTEFORCE: AttackSpec(kind="bruteforce", start_ts=2 * slot, attacker="admin",
                                          target=brute_vm, intensity=25, spread_s=spread),
        AttackKind.EXPLOIT: AttackSpec(kind="exploit", start_ts=3 * slot, attacker="198.51.100.23",
                                       target=topo.vm_ip[web_vm], intensity=5, spread_s=spread),
        AttackKind.EXFIL: AttackSpec(kind="exfil", start_ts=4 * slot, attacker="10.0.2.66",
                                     target="198.51.100.7", intensity=5, spread_s=spread),
    }
    wanted = list(AttackKind) if kinds is None else [AttackKind(k) for k in kinds]
    return [specs[k] for k in wanted]


def default_scenario(
    seed: int = 42,
    duration_s: float = 600.0,
    kinds: list[str] | None = None,
    window_s: float = 10.0,
) -> ScenarioConfig:
    base = load_scenario({"seed": seed, "duration_s": duration_s, "window_s": window_s})
    attacks = [a.model_dump() for a in default_attacks(base, kinds)]
    return load_scenario({**base.model_dump(exclude={"attacks"}), "attacks": attacks})


DEFAULT_RULES = """\
# Known attacks shipped with the detector
terminate-session tcp any any -> any any (msg:"EXPLOITV1 exploit payload"; content:"EXPLOITV1"; sid:1000; priority:1;)
alert host any any -> any any (msg:"privilege escalation on VM"; host-category:priv_escalation; sid:1001; priority:2;)
"""


def default_ruleset() -> str:
    """Rule text for the known-attack ruleset, in canonical form."""
    return serialize_ruleset(parse_ruleset(DEFAULT_RULES))
