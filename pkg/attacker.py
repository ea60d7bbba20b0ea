"""
RREQ flooding attacker
Attackers join the network like any other node and additionally broadcast
fake route requests toward unroutable addresses at a high rate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, FrozenSet, Optional

import numpy as np

from engine import Event, EventKind, Scheduler
from model import NodeId, ScenarioConfig, SimTime, invalid_address
from utils.logging_utils import get_logger

if TYPE_CHECKING:
    from aodv import AodvAgent

logger = get_logger(__name__)

# Largest offset k of a fake destination node_count + k
MAX_FAKE_OFFSET = 1024

_EPS = 1e-9


@dataclass(frozen=True)
class AttackerProfile:
    rreq_rate: float = 20.0
    start_time: SimTime = 10.0
    duty_cycle: float = 1.0
    duty_period: float = 10.0
    lying_counters: bool = False

    def __post_init__(self):
        if self.rreq_rate <= 0:
            raise ValueError("rreq_rate must be > 0")
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise ValueError("duty_cycle out of [0, 1]")
        if self.duty_period <= 0:
            raise ValueError("duty_period must be > 0")

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "AttackerProfile":
        return cls(
            rreq_rate=cfg.attacker_rreq_rate,
            start_time=cfg.attacker_start,
            duty_cycle=cfg.attacker_duty_cycle,
            duty_period=cfg.attacker_duty_period,
            lying_counters=cfg.lying_counters,
        )

    @property
    def active_span(self) -> float:
        """Seconds of flooding at the start of every duty period"""
        return self.duty_cycle * self.duty_period


def select_attackers(cfg: ScenarioConfig, rng: np.random.Generator) -> FrozenSet[NodeId]:
    """Uniformly sample round(node_count * attacker_ratio) distinct nodes"""
    count = cfg.attacker_count
    if count == 0:
        return frozenset()
    chosen = rng.choice(cfg.node_count, size=count, replace=False)
    return frozenset(int(n) for n in chosen)


class FloodingAttacker:
    """
    Drives one attacker node

    Ticks fall at window_start + i / rreq_rate for every i with
    i / rreq_rate < duty_cycle * duty_period, windows repeating every
    duty_period from start_time. Each tick originates one fake RREQ through
    the node's own routing agent, so the sent counter stays honest unless
    lying counters are enabled.
    """

    def __init__(self, node_id: NodeId, cfg: ScenarioConfig, scheduler: Scheduler,
                 agent: "AodvAgent", rng: np.random.Generator,
                 profile: Optional[AttackerProfile] = None):
        self.node_id = node_id
        self.node_count = cfg.node_count
        self.scheduler = scheduler
        self.agent = agent
        self.rng = rng
        self.profile = profile or AttackerProfile.from_config(cfg)
        self.fake_sent = 0
        self.first_flood_at: Optional[SimTime] = None
        self._window = 0
        self._index = 0
        if self.profile.lying_counters:
            agent.counter_report = self._forged_report

    def _forged_report(self):
        return 0, self.agent.counters.received

    def start(self) -> None:
        if self.profile.active_span <= 0:
            logger.debug(f"attacker {self.node_id}: duty cycle 0, staying benign")
            return
        self._schedule(self._next_time())

    def is_active(self, t: SimTime) -> bool:
        p = self.profile
        if p.active_span <= 0 or t < p.start_time - _EPS:
            return False
        phase = (t - p.start_time) % p.duty_period
        return phase < p.active_span - _EPS or p.duty_cycle >= 1.0

    def _next_time(self) -> SimTime:
        p = self.profile
        offset = self._index / p.rreq_rate
        if offset >= p.active_span - _EPS:
            self._window += 1
            self._index = 0
            offset = 0.0
        return p.start_time + self._window * p.duty_period + offset

    def _schedule(self, t: SimTime) -> None:
        self.scheduler.at(t, EventKind.TIMER_FIRE, self.tick, node=self.node_id, tag="flood")

    def tick(self, ev: Optional[Event] = None) -> None:
        """Originate one fake RREQ and schedule the next one"""
        now = self.scheduler.now
        k = int(self.rng.integers(1, MAX_FAKE_OFFSET + 1))
        self.agent.originate_fake_rreq(invalid_address(self.node_count, k))
        self.fake_sent += 1
        if self.first_flood_at is None:
            self.first_flood_at = now
        self._index += 1
        self._schedule(self._next_time())
