"""
Two-phase flooding defense
Phase 1 raises a node-local network alarm when route requests exceed a
threshold inside a sliding window. Phase 2 (only while alarmed) tracks the
APT-RREQ of every neighbor with two exponentially weighted moving averages and
detains neighbors whose averages both exceed the threshold. Detentions last
4 x RTT, are announced one hop with ISOLATE and are revised on expiry.
"""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Set, Tuple

from engine import Event, EventKind, Scheduler
from model import BROADCAST, NodeId, Packet, PacketKind, ScenarioConfig, SimTime
from utils.logging_utils import TabLogWriter, get_logger

logger = get_logger(__name__)


class AlphaOutOfRange(ValueError):
    """EWMA weight outside (0, 1]"""


# ---------------------------------------------------------------------------
# APT-RREQ moving averages
# ---------------------------------------------------------------------------

def ewma_update(d_prev: Optional[float], c_t: float, alpha: float) -> float:
    """
    One step of D_t = alpha * C_t + (1 - alpha) * D_{t-1}

    `d_prev` is None before the first observation, in which case D_1 = C_1.
    """
    if not 0.0 < alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha={alpha} outside (0, 1]")
    if c_t < 0:
        raise ValueError(f"negative count {c_t}")
    if d_prev is None or alpha == 1.0:
        return float(c_t)
    return d_prev + alpha * (c_t - d_prev)


@dataclass
class EwmaState:
    d_low: float = 0.0
    d_high: float = 0.0
    initialized: bool = False
    last_interval_index: int = -1

    def update(self, c_t: float, alpha_low: float, alpha_high: float,
               interval_index: Optional[int] = None) -> Tuple[float, float]:
        prev_low = self.d_low if self.initialized else None
        prev_high = self.d_high if self.initialized else None
        self.d_low = ewma_update(prev_low, c_t, alpha_low)
        self.d_high = ewma_update(prev_high, c_t, alpha_high)
        self.initialized = True
        self.last_interval_index = (
            interval_index if interval_index is not None else self.last_interval_index + 1
        )
        return self.d_low, self.d_high

    def reset(self) -> None:
        self.d_low = 0.0
        self.d_high = 0.0
        self.initialized = False
        self.last_interval_index = -1


@dataclass
class NeighborRecord:
    neighbor: NodeId
    active: bool = True
    last_seen: SimTime = 0.0
    last_counters: Tuple[int, int] = (0, 0)
    prev_counters: Optional[Tuple[int, int]] = None
    ewma: EwmaState = field(default_factory=EwmaState)
    # RREQs this neighbor originated and we heard directly
    observed_rreq_this_interval: int = 0
    observed_total: int = 0
    hello_count: int = 0
    # origin RREQs heard since this neighbor's previous Hello
    observed_since_hello: int = 0
    counter_mismatches: int = 0
    forged: bool = False


class Verdict(str, Enum):
    NORMAL = "Normal"
    ATTACKER = "Attacker"


def classify_neighbor(record: NeighborRecord, cfg: ScenarioConfig) -> Verdict:
    """Attacker only when both time scales sit above the APT threshold"""
    ewma = record.ewma
    if not ewma.initialized:
        return Verdict.NORMAL
    if ewma.d_low > cfg.apt_threshold and ewma.d_high > cfg.apt_threshold:
        return Verdict.ATTACKER
    return Verdict.NORMAL


# ---------------------------------------------------------------------------
# Detention and RTT
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetentionEntry:
    suspect: NodeId
    detained_at: SimTime
    expiry: SimTime
    offense_count: int = 1
    source: str = "local"


class RttEstimator:
    """Running mean of RREQ→RREP round trips"""

    def __init__(self, default_rtt: float):
        if default_rtt <= 0:
            raise ValueError("default_rtt must be > 0")
        self.default_rtt = default_rtt
        self.samples = 0
        self._mean = 0.0

    def add_sample(self, rtt: float) -> None:
        if rtt <= 0:
            return
        self.samples += 1
        self._mean += (rtt - self._mean) / self.samples

    @property
    def estimate(self) -> float:
        return self._mean if self.samples else self.default_rtt


# ---------------------------------------------------------------------------
# Phase 1: network alarm
# ---------------------------------------------------------------------------

class AlarmMode(str, Enum):
    QUIET = "Quiet"
    ALARMED = "Alarmed"


@dataclass(frozen=True)
class AlarmState:
    mode: AlarmMode
    window_rreq_count: int
    window_start: SimTime


class NetworkAlarm:
    """
    Sliding-window route-request counter

    Alarmed as soon as the count in the window exceeds the threshold; back to
    Quiet after one full window spent at or below it.
    """

    def __init__(self, threshold: int, window: float):
        self.threshold = threshold
        self.window = window
        self.mode = AlarmMode.QUIET
        self._times: Deque[SimTime] = deque()
        self._below_since: Optional[SimTime] = None
        self.raised = 0

    def update(self, now: SimTime, observed: bool = True) -> AlarmState:
        if observed:
            self._times.append(now)
        horizon = now - self.window
        times = self._times
        while times and times[0] <= horizon:
            times.popleft()
        count = len(times)
        if count > self.threshold:
            if self.mode is AlarmMode.QUIET:
                self.raised += 1
            self.mode = AlarmMode.ALARMED
            self._below_since = None
        elif self.mode is AlarmMode.ALARMED:
            if self._below_since is None:
                self._below_since = now
            elif now - self._below_since >= self.window:
                self.mode = AlarmMode.QUIET
                self._below_since = None
        return AlarmState(self.mode, count, horizon)


# ---------------------------------------------------------------------------
# Per-node defense
# ---------------------------------------------------------------------------

class DetectionAction(str, Enum):
    DETAIN = "DETAIN"
    RELEASE = "RELEASE"
    ISOLATE_RX = "ISOLATE_RX"
    COUNTER_MISMATCH = "COUNTER_MISMATCH"


class LsfaDefense:
    """Monitoring, detection and detention state of one node"""

    def __init__(
        self,
        node_id: NodeId,
        cfg: ScenarioConfig,
        scheduler: Scheduler,
        send: Callable[[Packet, Optional[NodeId]], bool],
        enabled: bool = True,
        detect_log: Optional[TabLogWriter] = None,
        on_detain: Optional[Callable[[NodeId, NodeId, SimTime], None]] = None,
    ):
        self.node_id = node_id
        self.cfg = cfg
        self.scheduler = scheduler
        self._send = send
        self.enabled = enabled
        self.detect_log = detect_log
        self.on_detain = on_detain
        self.neighbors: Dict[NodeId, NeighborRecord] = {}
        self.detention: Dict[NodeId, DetentionEntry] = {}
        self.offenses: Dict[NodeId, int] = defaultdict(int)
        self.alarm = NetworkAlarm(cfg.net_alarm_threshold, cfg.net_alarm_window)
        self.rtt = RttEstimator(cfg.default_rtt)
        self.interval_index = 0
        self.stale_after = 2 * cfg.hello_interval

    # ------------------------------------------------------------------
    # Neighbor monitoring
    # ------------------------------------------------------------------

    def _record(self, neighbor: NodeId, now: SimTime) -> NeighborRecord:
        rec = self.neighbors.get(neighbor)
        if rec is None:
            rec = NeighborRecord(neighbor=neighbor, last_seen=now)
            self.neighbors[neighbor] = rec
        return rec

    def touch(self, neighbor: NodeId, now: SimTime) -> None:
        """Any frame heard from a known neighbor proves it is alive"""
        rec = self.neighbors.get(neighbor)
        if rec is not None:
            rec.last_seen = now
            rec.active = True

    def record_hello(self, neighbor: NodeId, counters: Tuple[int, int], now: SimTime) -> NeighborRecord:
        """
        Store a Hello's counters and check them against what was overheard

        Between two Hellos an honest neighbor's advertised `sent` grows by at
        least the number of RREQs we heard it originate; over its lifetime the
        advertised total is at least everything we saw it originate.
        """
        rec = self._record(neighbor, now)
        rec.active = True
        rec.last_seen = now
        rec.hello_count += 1
        rec.prev_counters = rec.last_counters if rec.hello_count > 1 else None
        rec.last_counters = counters
        observed = rec.observed_since_hello
        rec.observed_since_hello = 0
        advertised_sent = counters[0]
        if rec.prev_counters is not None:
            delta = advertised_sent - rec.prev_counters[0]
            if delta < observed or delta < 0:
                self._counter_mismatch(rec, now, f"sent grew by {delta} while {observed} RREQs were heard")
                return rec
        if rec.observed_total > advertised_sent:
            self._counter_mismatch(rec, now, f"advertises sent={advertised_sent} "
                                             f"but was seen originating {rec.observed_total} RREQs")
        return rec

    def _counter_mismatch(self, rec: NeighborRecord, now: SimTime, detail: str) -> None:
        rec.counter_mismatches += 1
        if not rec.forged:
            rec.forged = True
            logger.debug(f"node {self.node_id}: neighbor {rec.neighbor} {detail}")
        self._log(now, rec.neighbor, DetectionAction.COUNTER_MISMATCH)

    @property
    def forged_neighbors(self) -> List[NodeId]:
        """Neighbors whose Hello counters contradicted what was overheard"""
        return sorted(nid for nid, rec in self.neighbors.items() if rec.forged)

    def refresh_activity(self, now: SimTime) -> None:
        for rec in self.neighbors.values():
            if rec.active and now - rec.last_seen >= self.stale_after:
                rec.active = False

    def observe_rreq(self, pkt: Packet, first_seen: bool, now: SimTime) -> None:
        """Account a received RREQ (called before any suppression decision)"""
        if first_seen:
            self.network_alarm_update(now)
        self.overheard(pkt, now)

    def overheard(self, pkt: Packet, now: SimTime) -> None:
        """
        Per-neighbor origin count for a decoded RREQ

        Also called for frames the input queue discarded: monitoring reads
        the header at the radio, routing never sees them.
        """
        if pkt.kind is not PacketKind.RREQ:
            return
        if pkt.sender == pkt.origin and pkt.sender != self.node_id:
            rec = self._record(pkt.sender, now)
            rec.observed_rreq_this_interval += 1
            rec.observed_since_hello += 1
            rec.observed_total += 1
            rec.last_seen = now
            rec.active = True

    def network_alarm_update(self, now: SimTime, observed: bool = True) -> AlarmState:
        return self.alarm.update(now, observed)

    def measure_interval(self, now: SimTime) -> Dict[NodeId, int]:
        """
        Close the current interval: C_t per active neighbor, EWMAs updated

        C_t is the overheard origin count; Hello counter deltas are checked
        against the same overheard counts as each Hello arrives.
        """
        self.interval_index += 1
        alpha_low = self.cfg.alpha_low
        alpha_high = self.cfg.alpha_high
        counts: Dict[NodeId, int] = {}
        for nid, rec in self.neighbors.items():
            c_t = rec.observed_rreq_this_interval
            rec.observed_rreq_this_interval = 0
            if not rec.active:
                continue
            rec.ewma.update(c_t, alpha_low, alpha_high, self.interval_index)
            counts[nid] = c_t
        return counts

    # ------------------------------------------------------------------
    # Measurement cycle
    # ------------------------------------------------------------------

    def start(self, first_at: SimTime) -> None:
        self.scheduler.at(first_at, EventKind.TIMER_FIRE, self._tick,
                          node=self.node_id, tag="measure")

    def _tick(self, ev: Event) -> None:
        self.on_measurement(self.scheduler.now)
        self.scheduler.after(self.cfg.measurement_interval, EventKind.TIMER_FIRE, self._tick,
                             node=self.node_id, tag="measure")

    def on_measurement(self, now: SimTime) -> List[DetentionEntry]:
        """Revise, measure, then (only while alarmed) classify and detain"""
        self.revise(now)
        self.refresh_activity(now)
        self.network_alarm_update(now, observed=False)
        counts = self.measure_interval(now)
        if not self.enabled or self.alarm.mode is AlarmMode.QUIET:
            return []
        detained = []
        for nid in sorted(counts):
            if nid in self.detention:
                continue
            if classify_neighbor(self.neighbors[nid], self.cfg) is Verdict.ATTACKER:
                entry = self.detain(nid, now)
                if entry is not None:
                    detained.append(entry)
        return detained

    # ------------------------------------------------------------------
    # Detention lifecycle
    # ------------------------------------------------------------------

    def is_detained(self, node: NodeId) -> bool:
        return node in self.detention

    def _log(self, now: SimTime, suspect: NodeId, action: DetectionAction) -> None:
        if self.detect_log is None:
            return
        rec = self.neighbors.get(suspect)
        d_low = rec.ewma.d_low if rec is not None else 0.0
        d_high = rec.ewma.d_high if rec is not None else 0.0
        self.detect_log.write(now, self.node_id, suspect, f"{d_low:.3f}", f"{d_high:.3f}", action.value)

    def detain(self, suspect: NodeId, now: SimTime) -> Optional[DetentionEntry]:
        """Detain for 4 x RTT and announce it; no-op while already detained"""
        if suspect == self.node_id or suspect in self.detention:
            return None
        self.offenses[suspect] += 1
        theta = 4.0 * self.rtt.estimate
        entry = DetentionEntry(suspect, now, now + theta, self.offenses[suspect], "local")
        self.detention[suspect] = entry
        logger.debug(f"node {self.node_id}: detained {suspect} until {entry.expiry:.3f} "
                     f"(offense {entry.offense_count})")
        self._log(now, suspect, DetectionAction.DETAIN)
        if self.on_detain is not None:
            self.on_detain(self.node_id, suspect, now)
        self.broadcast_isolation(suspect, entry.expiry)
        return entry

    def broadcast_isolation(self, suspect: NodeId, expiry: SimTime) -> Packet:
        """One-hop ISOLATE carrying the suspect and the detention expiry"""
        pkt = Packet(
            kind=PacketKind.ISOLATE,
            origin=self.node_id,
            sender=self.node_id,
            dest=BROADCAST,
            suspect=suspect,
            expiry=expiry,
        )
        self._send(pkt, None)
        return pkt

    def handle_isolate(self, pkt: Packet, now: SimTime) -> Optional[DetentionEntry]:
        """Adopt a neighbor's detention; never re-broadcast"""
        suspect = pkt.suspect
        if not self.enabled or suspect is None or pkt.expiry is None:
            return None
        if suspect == self.node_id or pkt.sender == suspect or self.is_detained(pkt.sender):
            return None
        if suspect in self.detention or pkt.expiry <= now:
            return None
        if self.cfg.require_local_confirmation:
            rec = self.neighbors.get(suspect)
            if rec is None or not rec.ewma.initialized or rec.ewma.d_high <= self.cfg.apt_threshold:
                return None
        self.offenses[suspect] += 1
        entry = DetentionEntry(suspect, now, pkt.expiry, self.offenses[suspect], "isolate")
        self.detention[suspect] = entry
        self._log(now, suspect, DetectionAction.ISOLATE_RX)
        return entry

    def revise(self, now: SimTime) -> Set[NodeId]:
        """Release every entry whose expiry has passed (inclusive)"""
        released = {s for s, entry in self.detention.items() if entry.expiry <= now}
        for suspect in sorted(released):
            del self.detention[suspect]
            self._log(now, suspect, DetectionAction.RELEASE)
            rec = self.neighbors.get(suspect)
            if rec is not None:
                rec.ewma.reset()
        return released
