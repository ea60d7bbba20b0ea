"""
One simulated network
Wires the scheduler, mobility, radio and medium to per-node routing agents,
defenses and attackers, drives the CBR traffic and produces a RunReport.
"""
from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass
from functools import partial
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from aodv import AodvAgent
from attacker import FloodingAttacker, select_attackers
from defense import LsfaDefense
from engine import (
    Event, EventKind, InputQueues, Medium, Radio, RandomWaypoint, RngStreams, Scheduler, Transmission
)
from metrics import FlowStats, RunReport, confusion, detected_set
from model import (
    DropReason, NodeId, Packet, PacketKind, ScenarioConfig, SimTime, config_digest, is_invalid_address
)
from utils.logging_utils import TabLogWriter, get_logger

logger = get_logger(__name__)

# CBR flows start uniformly inside this window (seconds)
FLOW_START_WINDOW = (1.0, 5.0)


@dataclass(frozen=True)
class Flow:
    flow_id: int
    src: NodeId
    dst: NodeId
    start: SimTime
    stop: SimTime


class DataLedger:
    """
    Fate of every DATA packet

    Each originated payload is resolved exactly once, as delivered or as a
    drop with a reason; whatever is unresolved at the end is in flight.
    """

    def __init__(self, flows: Sequence[Flow]):
        self.flows = list(flows)
        self.sent = [0] * len(flows)
        self.received = [0] * len(flows)
        self.drops: Counter = Counter()
        self._open: Dict[int, int] = {}
        self._next_id = 0
        self.double_resolutions = 0

    @property
    def in_flight(self) -> int:
        return len(self._open)

    @property
    def originated(self) -> int:
        return sum(self.sent)

    @property
    def delivered_total(self) -> int:
        return sum(self.received)

    def originate(self, flow_id: int) -> int:
        payload_id = self._next_id
        self._next_id += 1
        self._open[payload_id] = flow_id
        self.sent[flow_id] += 1
        return payload_id

    def _resolve(self, pkt: Packet) -> Optional[int]:
        flow_id = self._open.pop(pkt.payload_id, None)
        if flow_id is None:
            self.double_resolutions += 1
            logger.warning(f"DATA payload {pkt.payload_id} resolved twice")
        return flow_id

    def delivered(self, pkt: Packet, now: SimTime) -> None:
        flow_id = self._resolve(pkt)
        if flow_id is not None:
            self.received[flow_id] += 1

    def dropped(self, pkt: Packet, reason: DropReason, now: SimTime) -> None:
        if self._resolve(pkt) is not None:
            self.drops[reason] += 1

    def flow_stats(self) -> Tuple[FlowStats, ...]:
        return tuple(
            FlowStats(f.flow_id, f.src, f.dst, self.sent[f.flow_id], self.received[f.flow_id])
            for f in self.flows
        )


class Node:
    """One node: routing agent + defense, optionally an attacker"""

    def __init__(self, node_id: NodeId, agent: AodvAgent, defense: LsfaDefense,
                 attacker: Optional[FloodingAttacker] = None):
        self.node_id = node_id
        self.agent = agent
        self.defense = defense
        self.attacker = attacker

    @property
    def is_attacker(self) -> bool:
        return self.attacker is not None

    def receive(self, pkt: Packet, now: SimTime) -> None:
        self.defense.touch(pkt.sender, now)
        kind = pkt.kind
        if kind is PacketKind.RREQ:
            self.agent.handle_rreq(pkt)
        elif kind is PacketKind.DATA:
            self.agent.receive_data(pkt)
        elif kind is PacketKind.HELLO:
            self.agent.handle_hello(pkt)
        elif kind is PacketKind.RREP:
            self.agent.handle_rrep(pkt)
        elif kind is PacketKind.ISOLATE:
            self.defense.handle_isolate(pkt, now)

    def drop_input(self, pkt: Packet, now: SimTime) -> None:
        """A decoded frame the input queue had no room for"""
        self.defense.overheard(pkt, now)
        if pkt.kind is PacketKind.DATA:
            self.agent.on_queue_drop(pkt)


def connected_components(positions: np.ndarray, radio_range: float) -> np.ndarray:
    """Component label per node of the unit-disk graph"""
    n = positions.shape[0]
    diff = positions[:, None, :] - positions[None, :, :]
    adjacent = np.hypot(diff[..., 0], diff[..., 1]) <= radio_range
    labels = np.full(n, -1, dtype=int)
    current = 0
    for root in range(n):
        if labels[root] >= 0:
            continue
        labels[root] = current
        stack = [root]
        while stack:
            node = stack.pop()
            for nb in np.nonzero(adjacent[node] & (labels < 0))[0]:
                labels[nb] = current
                stack.append(int(nb))
        current += 1
    return labels


def select_flows(cfg: ScenarioConfig, benign: Sequence[NodeId], positions: np.ndarray,
                 rng: np.random.Generator) -> List[Flow]:
    """
    CBR flows among benign nodes

    Pairs connected at t = 0 are preferred; only when there are none does the
    draw fall back to arbitrary benign pairs.
    """
    benign = sorted(benign)
    if cfg.cbr_flow_count == 0 or len(benign) < 2:
        return []
    labels = connected_components(positions, cfg.radio_range)
    pairs = [(a, b) for a in benign for b in benign if a != b and labels[a] == labels[b]]
    if not pairs:
        pairs = [(a, b) for a in benign for b in benign if a != b]
    count = cfg.cbr_flow_count
    picks = rng.choice(len(pairs), size=count, replace=count > len(pairs))
    lo, hi = FLOW_START_WINDOW
    stop = cfg.sim_duration - cfg.cbr_stop_margin
    flows = []
    for flow_id, idx in enumerate(picks):
        src, dst = pairs[int(idx)]
        flows.append(Flow(flow_id, src, dst, float(rng.uniform(lo, hi)), stop))
    return flows


class Network:
    """Everything one run needs, built from a config and a seed"""

    def __init__(
        self,
        cfg: ScenarioConfig,
        seed: Optional[int] = None,
        attackers: Optional[Iterable[NodeId]] = None,
        positions: Optional[np.ndarray] = None,
        flows: Optional[Sequence[Flow]] = None,
        trace: Optional[TabLogWriter] = None,
        detect_log: Optional[TabLogWriter] = None,
    ):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.rng = RngStreams(self.seed)
        n = cfg.node_count

        if positions is None:
            positions = np.column_stack([
                self.rng.placement.uniform(0.0, cfg.field_width, n),
                self.rng.placement.uniform(0.0, cfg.field_height, n),
            ])
        self.initial_positions = np.asarray(positions, dtype=float)
        self.scheduler = Scheduler(trace)
        self.mobility = RandomWaypoint(cfg, self.rng.mobility, self.initial_positions)
        self.radio = Radio(cfg, self.mobility, self.rng.loss)
        self.medium = Medium(cfg, self.scheduler, self.radio, self._on_arrival, self._on_transmit,
                             self._on_link_failure, self._on_queue_drop)
        self.inputs = InputQueues(cfg)

        if attackers is None:
            self.attackers: FrozenSet[NodeId] = select_attackers(cfg, self.rng.attacker)
        else:
            self.attackers = frozenset(attackers)
        benign = [i for i in range(n) if i not in self.attackers]
        if flows is None:
            flows = select_flows(cfg, benign, self.initial_positions, self.rng.traffic)
        self.flows = list(flows)
        self.ledger = DataLedger(self.flows)

        self.tx_counts: Counter = Counter()
        self.rrep_to_invalid = 0
        self.first_detention: Dict[NodeId, SimTime] = {}

        self.nodes: List[Node] = []
        for node_id in range(n):
            send = partial(self.medium.send, node_id)
            is_attacker = node_id in self.attackers
            defense = LsfaDefense(node_id, cfg, self.scheduler, send,
                                  enabled=cfg.defense_enabled and not is_attacker,
                                  detect_log=detect_log, on_detain=self._on_detain)
            agent = AodvAgent(node_id, cfg, self.scheduler, send, defense, self.ledger)
            attacker = None
            if is_attacker:
                attacker = FloodingAttacker(node_id, cfg, self.scheduler, agent, self.rng.attacker)
            self.nodes.append(Node(node_id, agent, defense, attacker))
        self._started = False

    # ------------------------------------------------------------------
    # Medium callbacks
    # ------------------------------------------------------------------

    def _on_arrival(self, ev: Event) -> None:
        now = self.scheduler.now
        pkt = ev.packet
        admitted, dropped = self.inputs.admit(ev.receivers, now)
        # only origin RREQs and DATA need per-node bookkeeping when discarded
        if dropped and (pkt.kind is PacketKind.DATA or (pkt.kind is PacketKind.RREQ and pkt.origin == pkt.sender)):
            for receiver in dropped:
                self.nodes[receiver].drop_input(pkt, now)
        for receiver in admitted:
            self.nodes[receiver].receive(pkt, now)

    def _on_transmit(self, node: NodeId, pkt: Packet, tx: Transmission) -> None:
        self.tx_counts[pkt.kind.value] += 1
        if pkt.kind is PacketKind.RREP and is_invalid_address(pkt.origin, self.cfg.node_count):
            self.rrep_to_invalid += 1
        self.nodes[node].agent.on_transmitted(pkt)

    def _on_link_failure(self, node: NodeId, pkt: Packet, next_hop: NodeId) -> None:
        self.nodes[node].agent.on_link_failure(pkt, next_hop)

    def _on_queue_drop(self, node: NodeId, pkt: Packet) -> None:
        self.nodes[node].agent.on_queue_drop(pkt)

    def _on_detain(self, observer: NodeId, suspect: NodeId, now: SimTime) -> None:
        if observer not in self.attackers and suspect not in self.first_detention:
            self.first_detention[suspect] = now

    # ------------------------------------------------------------------
    # Traffic
    # ------------------------------------------------------------------

    def _app_send(self, flow: Flow, ev: Event) -> None:
        now = self.scheduler.now
        payload_id = self.ledger.originate(flow.flow_id)
        pkt = Packet(
            kind=PacketKind.DATA,
            origin=flow.src,
            sender=flow.src,
            dest=flow.dst,
            payload_id=payload_id,
            flow_id=flow.flow_id,
            ttl=self.cfg.node_count,
            created_at=now,
        )
        self.nodes[flow.src].agent.forward_data(pkt)
        next_at = now + 1.0 / self.cfg.cbr_rate
        if next_at < flow.stop:
            self.scheduler.at(next_at, EventKind.APP_SEND, partial(self._app_send, flow),
                              node=flow.src, tag=f"cbr:{flow.flow_id}")

    def start(self) -> None:
        """Schedule beacons, measurement ticks, traffic and floods"""
        if self._started:
            return
        self._started = True
        cfg = self.cfg
        jitter = self.rng.jitter
        for node in self.nodes:
            node.agent.start_hello(float(jitter.uniform(0.0, cfg.hello_interval)))
            node.defense.start(float(jitter.uniform(0.0, cfg.measurement_interval)))
        for flow in self.flows:
            if flow.start < flow.stop:
                self.scheduler.at(flow.start, EventKind.APP_SEND, partial(self._app_send, flow),
                                  node=flow.src, tag=f"cbr:{flow.flow_id}")
        for node in self.nodes:
            if node.attacker is not None:
                node.attacker.start()

    def run(self, until: Optional[SimTime] = None) -> RunReport:
        t_end = self.cfg.sim_duration if until is None else until
        self.start()
        started = time.perf_counter()
        self.scheduler.run_until(t_end)
        wall = time.perf_counter() - started
        logger.debug(f"seed {self.seed}: {self.scheduler.processed} events in {wall:.2f}s")
        return self.report(wall)

    # ------------------------------------------------------------------
    # Report
    # ------------------------------------------------------------------

    @property
    def first_flood(self) -> Dict[NodeId, SimTime]:
        return {
            node.node_id: node.attacker.first_flood_at
            for node in self.nodes
            if node.attacker is not None and node.attacker.first_flood_at is not None
        }

    def report(self, wall_time: float = 0.0) -> RunReport:
        cfg = self.cfg
        detected = detected_set(self.first_detention)
        cm = confusion(self.attackers, detected, range(cfg.node_count))
        return RunReport(
            config_digest=config_digest(cfg),
            seed=self.seed,
            node_count=cfg.node_count,
            attacker_ratio=cfg.attacker_ratio,
            defense_enabled=cfg.defense_enabled,
            ground_truth=tuple(sorted(self.attackers)),
            detected=tuple(sorted(detected)),
            confusion=cm,
            flows=self.ledger.flow_stats(),
            drops={reason.value: self.ledger.drops[reason] for reason in DropReason},
            in_flight=self.ledger.in_flight,
            first_flood=self.first_flood,
            first_detention=dict(self.first_detention),
            rrep_to_invalid=self.rrep_to_invalid,
            tx_counts=dict(self.tx_counts),
            input_drops=self.inputs.dropped,
            counter_mismatches=sum(
                rec.counter_mismatches for node in self.nodes for rec in node.defense.neighbors.values()
            ),
            events_processed=self.scheduler.processed,
            wall_time=wall_time,
        )


def simulate(cfg: ScenarioConfig, seed: Optional[int] = None, **kwargs) -> RunReport:
    """Build a Network and run it to cfg.sim_duration"""
    return Network(cfg, seed=seed, **kwargs).run()
