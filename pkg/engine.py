"""
Discrete-event engine
Deterministic scheduler, seeded random substreams, random-waypoint mobility,
unit-disk radio with per-transmission loss, a carrier-sensing medium and
per-node input processing queues
"""
from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Tuple

import numpy as np

from model import (
    CONTROL_KINDS, NodeId, Packet, PacketKind, Position, ScenarioConfig, SimTime
)
from utils.logging_utils import TabLogWriter, get_logger

logger = get_logger(__name__)

# Tolerance when comparing channel-busy instants
_EPS = 1e-12


class SchedulingInPast(Exception):
    """An event was scheduled before the current simulation time"""


class EventKind(str, Enum):
    PACKET_ARRIVAL = "PacketArrival"
    TIMER_FIRE = "TimerFire"
    MOBILITY_UPDATE = "MobilityUpdate"
    APP_SEND = "AppSend"


@dataclass
class Event:
    time: SimTime
    kind: EventKind
    callback: Callable[["Event"], None]
    node: NodeId = -1
    tag: str = ""
    packet: Optional[Packet] = None
    receivers: Tuple[NodeId, ...] = ()
    seq: int = -1
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


# Trace kind of a frame leaving a node's interface (not a scheduled event)
TRANSMIT = "Transmit"


def describe_packet(pkt: Packet) -> str:
    detail = f"{pkt.kind.value} origin={pkt.origin} dest={pkt.dest} hops={pkt.hop_count}"
    if pkt.kind is PacketKind.RREQ:
        detail += f" rreq_id={pkt.rreq_id}"
    elif pkt.kind is PacketKind.DATA:
        detail += f" payload={pkt.payload_id}"
    elif pkt.kind is PacketKind.ISOLATE:
        detail += f" suspect={pkt.suspect}"
    return detail


def format_trace_fields(ev: Event) -> Tuple:
    """(time, kind, node, detail) for the event trace"""
    if ev.packet is not None:
        detail = describe_packet(ev.packet)
        if ev.kind is EventKind.PACKET_ARRIVAL:
            detail += " rx=" + ",".join(str(r) for r in ev.receivers)
    else:
        detail = ev.tag
    return ev.time, ev.kind.value, ev.node, detail


class Scheduler:
    """Single-threaded event loop ordered by (time, insertion seq)"""

    def __init__(self, trace: Optional[TabLogWriter] = None):
        self.now: SimTime = 0.0
        self._queue: List[Tuple[float, int, Event]] = []
        self._seq = itertools.count()
        self.processed = 0
        self.trace = trace

    def __len__(self) -> int:
        return len(self._queue)

    def schedule(self, ev: Event) -> Event:
        if ev.time < self.now:
            raise SchedulingInPast(f"event at t={ev.time} scheduled at now={self.now}")
        ev.seq = next(self._seq)
        heapq.heappush(self._queue, (ev.time, ev.seq, ev))
        return ev

    def at(self, time: SimTime, kind: EventKind, callback: Callable[[Event], None], **kwargs) -> Event:
        return self.schedule(Event(time=time, kind=kind, callback=callback, **kwargs))

    def after(self, delay: float, kind: EventKind, callback: Callable[[Event], None], **kwargs) -> Event:
        return self.at(self.now + delay, kind, callback, **kwargs)

    def run_until(self, t_end: SimTime) -> int:
        """Process every event with time <= t_end; returns the number processed"""
        count = 0
        queue = self._queue
        trace = self.trace
        while queue and queue[0][0] <= t_end:
            time, _, ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.now = time
            if trace is not None:
                trace.write(*format_trace_fields(ev))
            ev.callback(ev)
            count += 1
        if t_end > self.now:
            self.now = t_end
        self.processed += count
        return count


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------

class RngStreams:
    """One independent numpy Generator per concern, all derived from one seed"""

    CONCERNS = ("placement", "mobility", "loss", "traffic", "attacker", "jitter")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(seed).spawn(len(self.CONCERNS))
        for name, child in zip(self.CONCERNS, children):
            setattr(self, name, np.random.default_rng(child))

    placement: np.random.Generator
    mobility: np.random.Generator
    loss: np.random.Generator
    traffic: np.random.Generator
    attacker: np.random.Generator
    jitter: np.random.Generator


# ---------------------------------------------------------------------------
# Mobility
# ---------------------------------------------------------------------------

class RandomWaypoint:
    """
    Random waypoint mobility with lazy evaluation

    Each node travels from `start` (leaving at `depart`) to `target`
    (arriving at `arrive`), pauses until `resume`, then draws a new uniform
    waypoint and a uniform speed in [v_min, v_max]. Queries must be
    monotone in time; legs are advanced only when a query passes `resume`.
    """

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator, initial: np.ndarray):
        self.width = cfg.field_width
        self.height = cfg.field_height
        self.v_min = cfg.v_min
        self.v_max = cfg.v_max
        self.pause = cfg.pause_time
        self.rng = rng
        n = initial.shape[0]
        self.start = np.array(initial, dtype=float)
        self.target = self.start.copy()
        self.depart = np.zeros(n)
        self.arrive = np.zeros(n)
        self.resume = np.zeros(n)
        self.speed = np.zeros(n)
        self._cache_t: Optional[float] = None
        self._cache: Optional[np.ndarray] = None
        # bumped whenever a leg is forced
        self.version = 0
        if cfg.is_static:
            self.arrive[:] = np.inf
            self.resume[:] = np.inf
        else:
            for node in range(n):
                self._new_leg(node, 0.0)

    def _new_leg(self, node: int, t: float) -> None:
        self.start[node] = self.target[node]
        waypoint = (self.rng.uniform(0.0, self.width), self.rng.uniform(0.0, self.height))
        speed = self.rng.uniform(self.v_min, self.v_max)
        self.target[node] = waypoint
        self.speed[node] = speed
        self.depart[node] = t
        travel = float(np.hypot(*(self.target[node] - self.start[node]))) / speed
        self.arrive[node] = t + travel
        self.resume[node] = t + travel + self.pause

    def set_leg(self, node: int, start: Position, waypoint: Position, speed: float, t: float) -> None:
        """Force a leg; a zero speed pins the node in place"""
        self.start[node] = (start.x, start.y)
        self.target[node] = (waypoint.x, waypoint.y)
        self.speed[node] = speed
        self.depart[node] = t
        if speed <= 0:
            self.target[node] = self.start[node]
            self.arrive[node] = np.inf
            self.resume[node] = np.inf
        else:
            travel = float(np.hypot(waypoint.x - start.x, waypoint.y - start.y)) / speed
            self.arrive[node] = t + travel
            self.resume[node] = t + travel + self.pause
        self._cache_t = None
        self.version += 1

    def _advance(self, t: float) -> None:
        due = np.nonzero(self.resume <= t)[0]
        while due.size:
            for node in due:
                self._new_leg(int(node), float(self.resume[node]))
            due = np.nonzero(self.resume <= t)[0]

    def positions_at(self, t: float) -> np.ndarray:
        """(N, 2) array of positions at time t"""
        if self._cache_t == t and self._cache is not None:
            return self._cache
        self._advance(t)
        span = self.arrive - self.depart
        with np.errstate(divide='ignore', invalid='ignore'):
            frac = np.where(span > 0, (t - self.depart) / span, 1.0)
        frac = np.clip(np.nan_to_num(frac, nan=0.0, posinf=0.0), 0.0, 1.0)
        pos = self.start + frac[:, None] * (self.target - self.start)
        np.clip(pos[:, 0], 0.0, self.width, out=pos[:, 0])
        np.clip(pos[:, 1], 0.0, self.height, out=pos[:, 1])
        self._cache_t = t
        self._cache = pos
        return pos

    def position_at(self, node: NodeId, t: float) -> Position:
        x, y = self.positions_at(t)[node]
        return Position(float(x), float(y))


# ---------------------------------------------------------------------------
# Radio
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transmission:
    receivers: Tuple[NodeId, ...]   # nodes that decoded the frame
    audible: Tuple[NodeId, ...]     # every node in range (channel occupied)
    airtime: float
    attempts: int = 1
    audible_idx: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


class Radio:
    """
    Unit-disk propagation with independent per-receiver loss

    Neighbor sets are sampled once per topology quantum (`topology_refresh`
    seconds) at the first transmission inside it; with a zero quantum they are
    recomputed for every distinct transmission time.
    """

    def __init__(self, cfg: ScenarioConfig, mobility: RandomWaypoint, rng: np.random.Generator):
        self.range = cfg.radio_range
        self.success = cfg.link_success_prob
        self.bandwidth = cfg.bandwidth
        self.payload_bytes = cfg.data_payload_bytes
        self.mac_retries = cfg.mac_retries
        self.refresh = cfg.topology_refresh
        self.mobility = mobility
        self.rng = rng
        self._epoch: Optional[Tuple[float, int]] = None
        self._adjacent: Optional[np.ndarray] = None
        self._rows: Dict[NodeId, Tuple[np.ndarray, Tuple[NodeId, ...]]] = {}
        self.refreshes = 0

    def _sync(self, t: float) -> None:
        epoch = (math.floor(t / self.refresh) if self.refresh > 0 else t, self.mobility.version)
        if epoch == self._epoch:
            return
        pos = self.mobility.positions_at(t)
        diff = pos[:, None, :] - pos[None, :, :]
        adjacent = np.hypot(diff[..., 0], diff[..., 1]) <= self.range
        np.fill_diagonal(adjacent, False)
        self._adjacent = adjacent
        self._rows = {}
        self._epoch = epoch
        self.refreshes += 1

    def _row(self, node: NodeId, t: float) -> Tuple[np.ndarray, Tuple[NodeId, ...]]:
        self._sync(t)
        row = self._rows.get(node)
        if row is None:
            idx = np.flatnonzero(self._adjacent[node])
            row = (idx, tuple(int(n) for n in idx))
            self._rows[node] = row
        return row

    def in_range(self, node: NodeId, t: float) -> np.ndarray:
        return self._row(node, t)[0]

    def adjacency(self, t: float) -> np.ndarray:
        """Symmetric boolean neighbor matrix in force at time t"""
        self._sync(t)
        return self._adjacent

    def airtime(self, pkt: Packet) -> float:
        return pkt.size_bits(self.payload_bytes) / self.bandwidth

    def transmit(self, sender: NodeId, pkt: Packet, t: float,
                 next_hop: Optional[NodeId] = None) -> Transmission:
        """
        Physical transmission at time t

        Broadcast: every in-range node decodes independently with the link
        success probability. Unicast: only `next_hop` is a candidate; the frame
        is retried up to mac_retries times while it fails.
        """
        audible, audible_t = self._row(sender, t)
        duration = self.airtime(pkt)
        if next_hop is None:
            if self.success >= 1.0:
                receivers = audible_t
            else:
                draws = self.rng.random(audible.size)
                receivers = tuple(int(n) for n in audible[draws < self.success])
            return Transmission(receivers, audible_t, duration, audible_idx=audible)

        if next_hop not in audible_t:
            attempts = self.mac_retries + 1
            return Transmission((), audible_t, duration * attempts, attempts, audible)
        attempts = 0
        delivered = False
        while attempts <= self.mac_retries and not delivered:
            attempts += 1
            delivered = self.success >= 1.0 or self.rng.random() < self.success
        receivers = (next_hop,) if delivered else ()
        return Transmission(receivers, audible_t, duration * attempts, attempts, audible)


# ---------------------------------------------------------------------------
# Medium: interface queues and carrier-sense deferral
# ---------------------------------------------------------------------------

@dataclass
class _Interface:
    control: Deque[Tuple[Packet, Optional[NodeId]]] = field(default_factory=deque)
    bulk: Deque[Tuple[Packet, Optional[NodeId]]] = field(default_factory=deque)
    transmitting: bool = False
    free_at: float = 0.0

    def pop(self) -> Optional[Tuple[Packet, Optional[NodeId]]]:
        if self.control:
            return self.control.popleft()
        if self.bulk:
            return self.bulk.popleft()
        return None

    def __len__(self) -> int:
        return len(self.control) + len(self.bulk)


class Medium:
    """
    Shared channel with per-node two-band FIFO interface queues

    A frame occupies the channel for its airtime at the sender and at every
    node in range. With carrier sense on, a node starts a frame only when its
    local channel is idle. Deliveries of one frame share one PacketArrival
    event after airtime + propagation delay.
    """

    def __init__(
        self,
        cfg: ScenarioConfig,
        scheduler: Scheduler,
        radio: Radio,
        on_arrival: Callable[[Event], None],
        on_transmit: Callable[[NodeId, Packet, Transmission], None],
        on_link_failure: Callable[[NodeId, Packet, NodeId], None],
        on_queue_drop: Callable[[NodeId, Packet], None],
    ):
        self.scheduler = scheduler
        self.radio = radio
        self.capacity = cfg.ifq_capacity
        self.carrier_sense = cfg.carrier_sense
        self.propagation_delay = cfg.propagation_delay
        self.busy_until = np.zeros(cfg.node_count)
        self._ifaces = [_Interface() for _ in range(cfg.node_count)]
        self._on_arrival = on_arrival
        self._on_transmit = on_transmit
        self._on_link_failure = on_link_failure
        self._on_queue_drop = on_queue_drop

    def queue_length(self, node: NodeId) -> int:
        return len(self._ifaces[node])

    def send(self, sender: NodeId, pkt: Packet, next_hop: Optional[NodeId] = None) -> bool:
        """Queue a frame; False when the band is full and the frame is dropped"""
        iface = self._ifaces[sender]
        band = iface.control if pkt.kind in CONTROL_KINDS else iface.bulk
        if len(band) >= self.capacity:
            self._on_queue_drop(sender, pkt)
            return False
        band.append((pkt, next_hop))
        if not iface.transmitting:
            iface.transmitting = True
            self._schedule_service(sender, self.scheduler.now)
        return True

    def _schedule_service(self, node: NodeId, t: float) -> None:
        self.scheduler.at(t, EventKind.TIMER_FIRE, self._service, node=node, tag="tx")

    def _service(self, ev: Event) -> None:
        node = ev.node
        now = self.scheduler.now
        iface = self._ifaces[node]
        ready = iface.free_at
        if self.carrier_sense:
            ready = max(ready, float(self.busy_until[node]))
        if ready > now + _EPS:
            self._schedule_service(node, ready)
            return
        item = iface.pop()
        if item is None:
            iface.transmitting = False
            return
        pkt, next_hop = item
        tx = self.radio.transmit(node, pkt, now, next_hop)
        end = now + tx.airtime
        iface.free_at = end
        if tx.audible:
            idx = tx.audible_idx
            if idx is None:
                idx = np.fromiter(tx.audible, dtype=np.intp, count=len(tx.audible))
            self.busy_until[idx] = np.maximum(self.busy_until[idx], end)
        self.busy_until[node] = max(self.busy_until[node], end)
        if self.scheduler.trace is not None:
            self.scheduler.trace.write(now, TRANSMIT, node, describe_packet(pkt))
        self._on_transmit(node, pkt, tx)
        if tx.receivers:
            self.scheduler.at(end + self.propagation_delay, EventKind.PACKET_ARRIVAL,
                              self._on_arrival, node=node, packet=pkt, receivers=tx.receivers)
        if next_hop is not None and not tx.receivers:
            self._on_link_failure(node, pkt, next_hop)
        if len(iface):
            self._schedule_service(node, end)
        else:
            iface.transmitting = False


# ---------------------------------------------------------------------------
# Receiver input queues
# ---------------------------------------------------------------------------

class InputQueues:
    """
    Per-node frame processing budget

    Every decoded frame costs `frame_processing_time` of the receiver's
    processor. Work is tracked as a fluid backlog per node; a frame that finds
    `input_queue_capacity` frames of work already waiting is discarded. The
    handling of an admitted frame is not delayed.
    """

    def __init__(self, cfg: ScenarioConfig):
        self.service = cfg.frame_processing_time
        self.limit = cfg.input_queue_capacity * cfg.frame_processing_time
        self.free_at = np.zeros(cfg.node_count)
        self.dropped = 0

    def backlog(self, node: NodeId, now: SimTime) -> float:
        """Seconds of queued processing work at a node"""
        return max(0.0, float(self.free_at[node]) - now)

    def admit(self, receivers: Tuple[NodeId, ...], now: SimTime) -> Tuple[Tuple[NodeId, ...], Tuple[NodeId, ...]]:
        """Split receivers into (admitted, dropped), charging the admitted ones"""
        if self.service <= 0 or not receivers:
            return receivers, ()
        idx = np.fromiter(receivers, dtype=np.intp, count=len(receivers))
        start = np.maximum(self.free_at[idx], now)
        ok = start - now < self.limit - _EPS
        self.free_at[idx[ok]] = start[ok] + self.service
        if ok.all():
            return receivers, ()
        dropped = tuple(idx[~ok].tolist())
        self.dropped += len(dropped)
        return tuple(idx[ok].tolist()), dropped
