"""
AODV-style reactive routing
Route discovery (RREQ/RREP), DATA forwarding and the Hello beacon extended
with cumulative RREQ sent/received counters
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Deque, Dict, Iterator, List, Optional, Protocol, Tuple

from engine import Event, EventKind, Scheduler
from model import (
    BROADCAST, DropReason, NodeId, Packet, PacketKind, ScenarioConfig, SimTime
)
from utils.logging_utils import get_logger

if TYPE_CHECKING:
    from defense import LsfaDefense

logger = get_logger(__name__)


class DataSink(Protocol):
    """Where DATA outcomes are accounted"""

    def delivered(self, pkt: Packet, now: SimTime) -> None: ...

    def dropped(self, pkt: Packet, reason: DropReason, now: SimTime) -> None: ...


# ---------------------------------------------------------------------------
# Routing state
# ---------------------------------------------------------------------------

@dataclass
class RouteEntry:
    dest: NodeId
    next_hop: NodeId
    hop_count: int
    dest_seq: int
    expiry: SimTime

    def usable(self, now: SimTime) -> bool:
        return self.expiry > now


class RouteTable:
    """Destination → RouteEntry with sequence-number freshness rules"""

    def __init__(self, owner: NodeId):
        self.owner = owner
        self._routes: Dict[NodeId, RouteEntry] = {}

    def __len__(self) -> int:
        return len(self._routes)

    def __iter__(self) -> Iterator[RouteEntry]:
        return iter(self._routes.values())

    def lookup(self, dest: NodeId, now: SimTime) -> Optional[RouteEntry]:
        route = self._routes.get(dest)
        if route is not None and route.usable(now):
            return route
        return None

    def known_seq(self, dest: NodeId) -> int:
        route = self._routes.get(dest)
        return route.dest_seq if route is not None else 0

    def update(self, dest: NodeId, next_hop: NodeId, hop_count: int, dest_seq: int,
               expiry: SimTime, now: SimTime) -> bool:
        """Install or replace a route; True when the entry changed"""
        if dest == self.owner:
            return False
        current = self._routes.get(dest)
        if (
            current is None
            or not current.usable(now)
            or dest_seq > current.dest_seq
            or (dest_seq == current.dest_seq and hop_count < current.hop_count)
        ):
            self._routes[dest] = RouteEntry(dest, next_hop, hop_count, dest_seq, expiry)
            return True
        if dest_seq == current.dest_seq and next_hop == current.next_hop:
            current.expiry = max(current.expiry, expiry)
        return False

    def invalidate(self, dest: NodeId, now: SimTime) -> None:
        route = self._routes.get(dest)
        if route is not None:
            route.expiry = min(route.expiry, now)

    def invalidate_via(self, next_hop: NodeId, now: SimTime) -> List[NodeId]:
        broken = [r.dest for r in self._routes.values() if r.next_hop == next_hop and r.usable(now)]
        for dest in broken:
            self._routes[dest].expiry = now
        return broken


@dataclass
class RreqCounters:
    sent: int = 0
    received: int = 0

    def snapshot(self) -> Tuple[int, int]:
        return self.sent, self.received


class SeenRreqCache:
    """(origin, rreq_id) pairs already handled, each with an expiry"""

    _PURGE_EVERY = 512

    def __init__(self, lifetime: float):
        self.lifetime = lifetime
        self._seen: Dict[Tuple[NodeId, int], SimTime] = {}
        self._inserts = 0

    def __len__(self) -> int:
        return len(self._seen)

    def __contains__(self, key: Tuple[NodeId, int]) -> bool:
        return key in self._seen

    def check_and_add(self, key: Tuple[NodeId, int], now: SimTime) -> bool:
        """True when the pair was not seen (or its entry expired); records it"""
        expiry = self._seen.get(key)
        fresh = expiry is None or expiry <= now
        if fresh:
            self._seen[key] = now + self.lifetime
            self._inserts += 1
            if self._inserts % self._PURGE_EVERY == 0:
                self._purge(now)
        return fresh

    def _purge(self, now: SimTime) -> None:
        stale = [k for k, exp in self._seen.items() if exp <= now]
        for k in stale:
            del self._seen[k]


@dataclass
class PendingDiscovery:
    dest: int
    retries_left: int
    rreq_id: int = 0
    sent_at: SimTime = 0.0
    timer: Optional[Event] = None
    buffer: Deque[Packet] = field(default_factory=deque)


# ---------------------------------------------------------------------------
# Agent
# ---------------------------------------------------------------------------

class AodvAgent:
    """Per-node AODV routing agent"""

    def __init__(
        self,
        node_id: NodeId,
        cfg: ScenarioConfig,
        scheduler: Scheduler,
        send: Callable[[Packet, Optional[NodeId]], bool],
        defense: "LsfaDefense",
        sink: DataSink,
    ):
        self.node_id = node_id
        self.cfg = cfg
        self.scheduler = scheduler
        self._send = send
        self.defense = defense
        self.sink = sink
        self.routes = RouteTable(node_id)
        self.counters = RreqCounters()
        self.seen = SeenRreqCache(cfg.route_lifetime)
        self.pending: Dict[int, PendingDiscovery] = {}
        self.seq = 0
        self.rreq_id = 0
        self.max_hops = cfg.node_count
        self.hellos_sent = 0
        self.rreps_sent = 0
        self.discovery_failures = 0
        self.rreq_dropped_detained = 0
        # Forged reports replace this (see attacker.FloodingAttacker)
        self.counter_report: Callable[[], Tuple[int, int]] = self.counters.snapshot

    @property
    def now(self) -> SimTime:
        return self.scheduler.now

    def send(self, pkt: Packet, next_hop: Optional[NodeId] = None) -> bool:
        return self._send(pkt, next_hop)

    # ------------------------------------------------------------------
    # Transmission feedback from the medium
    # ------------------------------------------------------------------

    def on_transmitted(self, pkt: Packet) -> None:
        if pkt.kind is PacketKind.RREQ:
            self.counters.sent += 1

    def on_link_failure(self, pkt: Packet, next_hop: NodeId) -> None:
        broken = self.routes.invalidate_via(next_hop, self.now)
        if broken:
            logger.debug(f"node {self.node_id}: link to {next_hop} failed, {len(broken)} routes invalidated")
        if pkt.kind is PacketKind.DATA:
            self.sink.dropped(pkt, DropReason.LOST, self.now)

    def on_queue_drop(self, pkt: Packet) -> None:
        if pkt.kind is PacketKind.DATA:
            self.sink.dropped(pkt, DropReason.QUEUE, self.now)

    # ------------------------------------------------------------------
    # Route discovery
    # ------------------------------------------------------------------

    def _build_rreq(self, dest: int) -> Packet:
        self.seq += 1
        self.rreq_id += 1
        self.seen.check_and_add((self.node_id, self.rreq_id), self.now)
        return Packet(
            kind=PacketKind.RREQ,
            origin=self.node_id,
            sender=self.node_id,
            dest=dest,
            seq=self.seq,
            rreq_id=self.rreq_id,
            hop_count=0,
            dest_seq=self.routes.known_seq(dest),
        )

    def initiate_route_discovery(self, dest: int) -> PendingDiscovery:
        """Broadcast an RREQ for dest unless a discovery is already under way"""
        pending = self.pending.get(dest)
        if pending is not None:
            return pending
        pending = PendingDiscovery(dest=dest, retries_left=self.cfg.discovery_retries)
        self.pending[dest] = pending
        self._send_discovery_rreq(pending)
        return pending

    def _send_discovery_rreq(self, pending: PendingDiscovery) -> None:
        pkt = self._build_rreq(pending.dest)
        pending.rreq_id = pkt.rreq_id
        pending.sent_at = self.now
        pending.timer = self.scheduler.after(
            self.cfg.discovery_timeout, EventKind.TIMER_FIRE,
            lambda ev, d=pending.dest: self._discovery_timeout(d, ev),
            node=self.node_id, tag=f"discovery:{pending.dest}",
        )
        self.send(pkt)

    def originate_fake_rreq(self, dest: int) -> Packet:
        """Flood an RREQ with no discovery state behind it"""
        pkt = self._build_rreq(dest)
        self.send(pkt)
        return pkt

    def _discovery_timeout(self, dest: int, ev: Event) -> None:
        pending = self.pending.get(dest)
        if pending is None or pending.timer is not ev:
            return
        if pending.retries_left > 0:
            pending.retries_left -= 1
            self._send_discovery_rreq(pending)
            return
        del self.pending[dest]
        self.discovery_failures += 1
        logger.debug(f"node {self.node_id}: discovery for {dest} failed, "
                     f"dropping {len(pending.buffer)} buffered packets")
        for pkt in pending.buffer:
            self.sink.dropped(pkt, DropReason.NO_ROUTE, self.now)

    def _buffer(self, pkt: Packet) -> None:
        pending = self.initiate_route_discovery(pkt.dest)
        if len(pending.buffer) >= self.cfg.buffer_capacity:
            self.sink.dropped(pending.buffer.popleft(), DropReason.BUFFER, self.now)
        pending.buffer.append(pkt)

    def handle_rreq(self, pkt: Packet) -> None:
        now = self.now
        # Counted before any suppression decision
        self.counters.received += 1
        first = self.seen.check_and_add((pkt.origin, pkt.rreq_id), now)
        self.defense.observe_rreq(pkt, first, now)
        if self.defense.is_detained(pkt.sender) or self.defense.is_detained(pkt.origin):
            self.rreq_dropped_detained += 1
            return
        if not first or pkt.origin == self.node_id:
            return

        self.routes.update(pkt.origin, pkt.sender, pkt.hop_count + 1, pkt.seq,
                           now + self.cfg.route_lifetime, now)

        if pkt.dest == self.node_id:
            if pkt.dest_seq > self.seq:
                self.seq = pkt.dest_seq
            self._send_rrep(origin=self.node_id, requester=pkt.origin, dest_seq=self.seq,
                            hop_count=0, rreq_id=pkt.rreq_id, next_hop=pkt.sender)
            return

        route = self.routes.lookup(pkt.dest, now)
        if route is not None and route.dest_seq >= pkt.dest_seq and route.next_hop != pkt.sender:
            self._send_rrep(origin=pkt.dest, requester=pkt.origin, dest_seq=route.dest_seq,
                            hop_count=route.hop_count, rreq_id=pkt.rreq_id, next_hop=pkt.sender)
            return

        if pkt.hop_count + 1 >= self.max_hops:
            return
        self.send(pkt.forwarded(self.node_id))

    def _send_rrep(self, origin: NodeId, requester: NodeId, dest_seq: int, hop_count: int,
                   rreq_id: int, next_hop: NodeId) -> None:
        rrep = Packet(
            kind=PacketKind.RREP,
            origin=origin,
            sender=self.node_id,
            dest=requester,
            seq=dest_seq,
            rreq_id=rreq_id,
            hop_count=hop_count,
        )
        self.rreps_sent += 1
        self.send(rrep, next_hop)

    def handle_rrep(self, pkt: Packet) -> None:
        now = self.now
        if self.defense.is_detained(pkt.sender):
            return
        self.routes.update(pkt.origin, pkt.sender, pkt.hop_count + 1, pkt.seq,
                           now + self.cfg.route_lifetime, now)
        if pkt.dest == self.node_id:
            self._discovery_complete(pkt)
            return
        back = self.routes.lookup(pkt.dest, now)
        if back is None:
            return
        self.send(pkt.forwarded(self.node_id), back.next_hop)

    def _discovery_complete(self, pkt: Packet) -> None:
        pending = self.pending.pop(pkt.origin, None)
        if pending is None:
            return
        if pending.timer is not None:
            pending.timer.cancel()
        if pkt.rreq_id == pending.rreq_id:
            self.defense.rtt.add_sample(self.now - pending.sent_at)
        for data in pending.buffer:
            self.forward_data(data)

    # ------------------------------------------------------------------
    # Hello beacons
    # ------------------------------------------------------------------

    def start_hello(self, first_at: SimTime) -> None:
        self.scheduler.at(first_at, EventKind.TIMER_FIRE, self._hello_timer,
                          node=self.node_id, tag="hello")

    def _hello_timer(self, ev: Event) -> None:
        self.emit_hello()
        self.scheduler.after(self.cfg.hello_interval, EventKind.TIMER_FIRE, self._hello_timer,
                             node=self.node_id, tag="hello")

    def emit_hello(self) -> Packet:
        sent, received = self.counter_report()
        hello = Packet(
            kind=PacketKind.HELLO,
            origin=self.node_id,
            sender=self.node_id,
            dest=BROADCAST,
            seq=self.seq,
            hello_counters=(sent, received),
        )
        self.hellos_sent += 1
        self.defense.refresh_activity(self.now)
        self.send(hello)
        return hello

    def handle_hello(self, pkt: Packet) -> None:
        now = self.now
        self.defense.record_hello(pkt.origin, pkt.hello_counters or (0, 0), now)
        self.routes.update(pkt.origin, pkt.origin, 1, pkt.seq,
                           now + 2 * self.cfg.hello_interval, now)

    # ------------------------------------------------------------------
    # DATA
    # ------------------------------------------------------------------

    def receive_data(self, pkt: Packet) -> None:
        """DATA frame arriving from a neighbor"""
        if self.defense.is_detained(pkt.sender):
            self.sink.dropped(pkt, DropReason.DETAINED, self.now)
            return
        if pkt.dest == self.node_id:
            self.sink.delivered(pkt, self.now)
            return
        self.forward_data(pkt)

    def forward_data(self, pkt: Packet) -> None:
        """Route a DATA packet toward its destination (own or transit traffic)"""
        now = self.now
        if pkt.ttl <= 0:
            self.sink.dropped(pkt, DropReason.TTL, now)
            return
        route = self.routes.lookup(pkt.dest, now)
        if route is None:
            self._buffer(pkt)
            return
        if self.defense.is_detained(route.next_hop):
            self.routes.invalidate(pkt.dest, now)
            self.sink.dropped(pkt, DropReason.DETAINED, now)
            return
        route.expiry = max(route.expiry, now + self.cfg.route_lifetime)
        self.send(pkt.forwarded(self.node_id), route.next_hop)
