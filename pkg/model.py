"""
Core domain types for the LSFA flooding-defense simulator
Node ids, simulated time, geometry, packets and the scenario configuration schema
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

NodeId = int
SimTime = float

# One-hop broadcast destination (HELLO, ISOLATE); never a routable id
BROADCAST = -1


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Position:
    x: float
    y: float


def distance(a: Position, b: Position) -> float:
    """Euclidean distance in meters"""
    return math.hypot(a.x - b.x, a.y - b.y)


# ---------------------------------------------------------------------------
# Addresses
# ---------------------------------------------------------------------------

def invalid_address(node_count: int, k: int = 1) -> int:
    """Reserved, unroutable address node_count + k (k >= 1)"""
    if k < 1:
        raise ValueError("invalid address offset must be >= 1")
    return node_count + k


def is_invalid_address(addr: int, node_count: int) -> bool:
    return addr >= node_count


# ---------------------------------------------------------------------------
# Packets
# ---------------------------------------------------------------------------

class PacketKind(str, Enum):
    RREQ = "RREQ"
    RREP = "RREP"
    HELLO = "HELLO"
    DATA = "DATA"
    ISOLATE = "ISOLATE"


# Frame sizes in bytes including IPv6 (40) and UDP (8) headers
HEADER_BYTES = 48
PACKET_BYTES = {
    PacketKind.RREQ: 24 + HEADER_BYTES,
    PacketKind.RREP: 20 + HEADER_BYTES,
    PacketKind.HELLO: 28 + HEADER_BYTES,
    PacketKind.ISOLATE: 16 + HEADER_BYTES,
}

# Control frames ride the priority band of the interface queue
CONTROL_KINDS = frozenset({PacketKind.HELLO, PacketKind.RREP, PacketKind.ISOLATE})


class DropReason(str, Enum):
    """Why a DATA packet never reached its destination"""
    LOST = "lost"               # radio loss or link failure after retries
    NO_ROUTE = "no_route"       # discovery failed
    TTL = "ttl"                 # hop budget exhausted
    DETAINED = "detained"       # next hop or last hop on the detention list
    QUEUE = "queue"             # interface queue overflow
    BUFFER = "buffer"           # discovery buffer overflow (oldest first)


@dataclass(frozen=True)
class Packet:
    """
    Routing-layer frame

    For RREQ `seq` is the originator's sequence number and `dest_seq` the last
    known destination sequence. For RREP `origin` is the node the route leads
    to, `dest` the requester and `seq` the destination sequence number.
    """
    kind: PacketKind
    origin: NodeId
    sender: NodeId
    dest: int
    seq: int = 0
    rreq_id: int = 0
    hop_count: int = 0
    dest_seq: int = 0
    payload_id: int = -1
    flow_id: int = -1
    ttl: int = 0
    created_at: SimTime = 0.0
    hello_counters: Optional[Tuple[int, int]] = None
    suspect: Optional[NodeId] = None
    expiry: Optional[SimTime] = None

    def forwarded(self, sender: NodeId) -> "Packet":
        """Copy for the next hop: new last hop, one more hop, one less TTL"""
        return replace(self, sender=sender, hop_count=self.hop_count + 1, ttl=self.ttl - 1)

    def size_bits(self, payload_bytes: int = 512) -> int:
        if self.kind is PacketKind.DATA:
            return (HEADER_BYTES + payload_bytes) * 8
        return PACKET_BYTES[self.kind] * 8


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------

class ConfigError(ValueError):
    """Scenario configuration violates one or more invariants"""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ScenarioFileError(ValueError):
    """Malformed scenario file"""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = f"{path or '<scenario>'}:{line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one experiment cell"""
    node_count: int = 100
    attacker_ratio: float = 0.10
    field_width: float = 1000.0
    field_height: float = 1000.0
    radio_range: float = 300.0
    link_success_prob: float = 0.9
    bandwidth: float = 3_000_000.0
    cbr_rate: float = 10.0
    cbr_flow_count: int = 10
    v_min: float = 1.0
    v_max: float = 10.0
    pause_time: float = 2.0
    hello_interval: float = 1.0
    measurement_interval: float = 1.0
    alpha_low: float = 0.3
    alpha_high: float = 0.7
    apt_threshold: float = 5.0
    net_alarm_threshold: int = 20
    net_alarm_window: float = 10.0
    attacker_rreq_rate: float = 20.0
    sim_duration: float = 2000.0
    experiments: int = 5
    seed: int = 1
    # attacker behaviour
    attacker_start: float = 10.0
    attacker_duty_cycle: float = 1.0
    attacker_duty_period: float = 10.0
    lying_counters: bool = False
    # defense behaviour
    defense_enabled: bool = True
    require_local_confirmation: bool = False
    default_rtt: float = 0.5
    # routing
    route_lifetime: float = 10.0
    discovery_timeout: float = 1.0
    discovery_retries: int = 2
    buffer_capacity: int = 64
    # link and medium
    propagation_delay: float = 0.001
    mac_retries: int = 3
    ifq_capacity: int = 64
    carrier_sense: bool = True
    topology_refresh: float = 0.1
    # frame processing at receivers
    frame_processing_time: float = 0.005
    input_queue_capacity: int = 100
    # traffic
    cbr_stop_margin: float = 5.0
    data_payload_bytes: int = 512

    @property
    def attacker_count(self) -> int:
        return attacker_count(self)

    @property
    def is_static(self) -> bool:
        return self.v_max == 0

    def with_overrides(self, **overrides) -> "ScenarioConfig":
        return replace(self, **overrides)


FIELD_DOCS: Dict[str, str] = {
    "node_count": "number of nodes N (ids 0..N-1)",
    "attacker_ratio": "fraction of flooding attackers, in [0, 0.3]",
    "field_width": "field width in meters",
    "field_height": "field height in meters",
    "radio_range": "unit-disk communication range in meters",
    "link_success_prob": "delivery probability of one transmission attempt (unicast frames get 1 + mac_retries attempts)",
    "bandwidth": "channel bit rate in bits/s (serialization delay)",
    "cbr_rate": "CBR packets per second per flow",
    "cbr_flow_count": "number of CBR flows among benign nodes",
    "v_min": "random waypoint minimum speed, m/s",
    "v_max": "random waypoint maximum speed, m/s (0 = static)",
    "pause_time": "random waypoint pause at each waypoint, s",
    "hello_interval": "Hello beacon period, s",
    "measurement_interval": "APT-RREQ measurement interval, s",
    "alpha_low": "EWMA weight of the slow average",
    "alpha_high": "EWMA weight of the fast average",
    "apt_threshold": "RREQs per interval above which a neighbor is convicted",
    "net_alarm_threshold": "distinct RREQs per window that raise the alarm",
    "net_alarm_window": "alarm sliding window, s",
    "attacker_rreq_rate": "fake RREQs per second per attacker",
    "sim_duration": "simulated seconds per run",
    "experiments": "seeds per sweep cell (Ex)",
    "seed": "base seed, 0 <= seed < 2^64",
    "attacker_start": "time attackers start flooding, s",
    "attacker_duty_cycle": "active fraction of each duty period",
    "attacker_duty_period": "duty-cycle window length, s",
    "lying_counters": "attackers advertise sent=0 in Hello",
    "defense_enabled": "run detection and detention",
    "require_local_confirmation": "ISOLATE recipients need their own evidence",
    "default_rtt": "RTT estimate before any RREQ/RREP sample, s",
    "route_lifetime": "active route lifetime, s",
    "discovery_timeout": "wait for RREP before retrying, s",
    "discovery_retries": "RREQ retries before discovery fails",
    "buffer_capacity": "DATA packets buffered per pending discovery",
    "propagation_delay": "fixed per-hop propagation delay, s",
    "mac_retries": "link-layer retransmissions for unicast frames",
    "ifq_capacity": "interface queue capacity per band, packets",
    "carrier_sense": "defer transmissions while the local channel is busy",
    "topology_refresh": "neighbor sets are recomputed at most this often, s (0 = every transmission)",
    "frame_processing_time": "receiver processing time per decoded frame, s (0 = free)",
    "input_queue_capacity": "decoded frames a node can hold for processing",
    "cbr_stop_margin": "flows stop this long before the run ends, s",
    "data_payload_bytes": "DATA payload size, bytes",
}


def attacker_count(cfg: ScenarioConfig) -> int:
    """round(node_count * attacker_ratio), halves rounded up"""
    return int(math.floor(cfg.node_count * cfg.attacker_ratio + 0.5))


def validate_config(cfg: ScenarioConfig) -> List[str]:
    """Return every violated invariant; an empty list means the config is ok"""
    violations: List[str] = []

    def check(ok: bool, message: str) -> None:
        if not ok:
            violations.append(message)

    check(cfg.node_count >= 2, "node_count ≥ 2")
    check(0.0 <= cfg.attacker_ratio <= 0.3, "attacker_ratio out of [0, 0.3]")
    check(cfg.field_width > 0 and cfg.field_height > 0, "field dimensions must be > 0")
    check(cfg.radio_range > 0, "radio_range must be > 0")
    check(0.0 <= cfg.link_success_prob <= 1.0, "link_success_prob out of [0, 1]")
    check(cfg.bandwidth > 0, "bandwidth must be > 0")
    check(cfg.cbr_rate > 0, "cbr_rate must be > 0")
    check(cfg.cbr_flow_count >= 0, "cbr_flow_count must be ≥ 0")
    check(0.0 <= cfg.v_min <= cfg.v_max, "require 0 ≤ v_min ≤ v_max")
    check(cfg.v_max == 0 or cfg.v_min > 0, "v_min must be > 0 for a mobile scenario")
    check(cfg.pause_time >= 0, "pause_time must be ≥ 0")
    check(cfg.hello_interval > 0, "hello_interval must be > 0")
    check(cfg.measurement_interval > 0, "measurement_interval must be > 0")
    if not (0.0 < cfg.alpha_low <= 1.0 and 0.0 < cfg.alpha_high <= 1.0):
        violations.append("alpha out of (0,1]")
    check(cfg.alpha_low < cfg.alpha_high, "alpha_low must be < alpha_high")
    check(cfg.apt_threshold > 0, "apt_threshold must be > 0")
    check(cfg.net_alarm_threshold >= 0, "net_alarm_threshold must be ≥ 0")
    check(cfg.net_alarm_window > 0, "net_alarm_window must be > 0")
    check(cfg.attacker_rreq_rate > 0, "attacker_rreq_rate must be > 0")
    check(cfg.sim_duration > 0, "sim_duration must be > 0")
    check(cfg.experiments >= 1, "experiments must be ≥ 1")
    check(0 <= cfg.seed < 2 ** 64, "seed out of [0, 2^64)")
    check(cfg.attacker_start >= 0, "attacker_start must be ≥ 0")
    check(0.0 <= cfg.attacker_duty_cycle <= 1.0, "attacker_duty_cycle out of [0, 1]")
    check(cfg.attacker_duty_period > 0, "attacker_duty_period must be > 0")
    check(cfg.default_rtt > 0, "default_rtt must be > 0")
    check(cfg.route_lifetime > 0, "route_lifetime must be > 0")
    check(cfg.discovery_timeout > 0, "discovery_timeout must be > 0")
    check(cfg.discovery_retries >= 0, "discovery_retries must be ≥ 0")
    check(cfg.buffer_capacity >= 1, "buffer_capacity must be ≥ 1")
    check(cfg.propagation_delay > 0, "propagation_delay must be > 0")
    check(cfg.mac_retries >= 0, "mac_retries must be ≥ 0")
    check(cfg.ifq_capacity >= 1, "ifq_capacity must be ≥ 1")
    check(cfg.topology_refresh >= 0, "topology_refresh must be ≥ 0")
    check(cfg.frame_processing_time >= 0, "frame_processing_time must be ≥ 0")
    check(cfg.input_queue_capacity >= 1, "input_queue_capacity must be ≥ 1")
    check(cfg.cbr_stop_margin >= 0, "cbr_stop_margin must be ≥ 0")
    check(cfg.data_payload_bytes >= 0, "data_payload_bytes must be ≥ 0")
    return violations


def config_digest(cfg: ScenarioConfig) -> str:
    """Stable SHA1 digest of every config field"""
    payload = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha1(payload.encode('utf-8')).hexdigest()


# ---------------------------------------------------------------------------
# Scenario files: `key = value`, one per line, `#` comments
# ---------------------------------------------------------------------------

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _coerce(key: str, raw: str, default) -> Union[int, float, bool]:
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw, 0)
        except ValueError:
            as_float = float(raw)
            if not as_float.is_integer():
                raise ValueError(f"{key}: expected an integer, got {raw!r}")
            return int(as_float)
    return float(raw)


def config_field_names() -> List[str]:
    return [f.name for f in fields(ScenarioConfig)]


def apply_overrides(base: ScenarioConfig, pairs: Mapping[str, str]) -> ScenarioConfig:
    """Apply string overrides; unknown keys raise ScenarioFileError"""
    defaults = asdict(base)
    updates = {}
    for key, raw in pairs.items():
        if key not in defaults:
            raise ScenarioFileError(f"unknown key {key!r}")
        try:
            updates[key] = _coerce(key, raw.strip(), defaults[key])
        except ValueError as e:
            raise ScenarioFileError(str(e)) from e
    return replace(base, **updates)


def parse_scenario(text: str, base: Optional[ScenarioConfig] = None,
                   path: Optional[str] = None) -> ScenarioConfig:
    """Parse scenario-file text on top of `base` (defaults when omitted)"""
    cfg = base or ScenarioConfig()
    known = set(config_field_names())
    seen: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        content = line.split('#', 1)[0].strip()
        if not content:
            continue
        if '=' not in content:
            raise ScenarioFileError("expected 'key = value'", lineno, path)
        key, value = (part.strip() for part in content.split('=', 1))
        if key not in known:
            raise ScenarioFileError(f"unknown key {key!r}", lineno, path)
        if key in seen:
            raise ScenarioFileError(f"duplicate key {key!r}", lineno, path)
        if not value:
            raise ScenarioFileError(f"missing value for {key!r}", lineno, path)
        seen[key] = value
        try:
            cfg = apply_overrides(cfg, {key: value})
        except ScenarioFileError as e:
            raise ScenarioFileError(str(e), lineno, path) from e
    return cfg


def load_scenario(path: Union[str, Path], base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """Read a scenario file from disk"""
    file_path = Path(path)
    text = file_path.read_text(encoding='utf-8')
    return parse_scenario(text, base=base, path=str(file_path))


def dump_scenario(cfg: ScenarioConfig) -> str:
    """Render a config in scenario-file form (round-trips through parse_scenario)"""
    lines = []
    for f in fields(ScenarioConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
