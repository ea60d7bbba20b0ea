"""
Evaluation metrics
Node-level confusion matrix (attacker = positive class), FPR / FNR / DR,
packet delivery ratio and sweep aggregation into CSV rows
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from model import NodeId

METRICS: Tuple[str, ...] = ("fpr", "fnr", "dr", "pdr")
CSV_HEADER = "ratio,metric,mean,stddev,n_seeds"


class UndefinedMetric(ArithmeticError):
    """Rate whose denominator is zero (e.g. DR without attackers)"""


class NoTraffic(ValueError):
    """A run originated no DATA packets"""


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(ground_truth: Iterable[NodeId], detected: Iterable[NodeId],
              all_nodes: Iterable[NodeId]) -> ConfusionMatrix:
    nodes = frozenset(all_nodes)
    truth = frozenset(ground_truth)
    found = frozenset(detected)
    if not found <= nodes:
        raise ValueError(f"detected nodes outside the population: {sorted(found - nodes)}")
    if not truth <= nodes:
        raise ValueError(f"attackers outside the population: {sorted(truth - nodes)}")
    tp = len(found & truth)
    fp = len(found - truth)
    fn = len(truth - found)
    return ConfusionMatrix(tp=tp, fp=fp, tn=len(nodes) - tp - fp - fn, fn=fn)


def _percent(num: int, den: int, name: str) -> float:
    if den == 0:
        raise UndefinedMetric(f"{name} undefined: zero denominator")
    return num / den * 100.0


def fpr(cm: ConfusionMatrix) -> float:
    """Benign nodes wrongly detained, fp / (fp + tn)"""
    return _percent(cm.fp, cm.fp + cm.tn, "FPR")


def fnr(cm: ConfusionMatrix) -> float:
    """Attackers never detained, fn / (fn + tp)"""
    return _percent(cm.fn, cm.fn + cm.tp, "FNR")


def dr(cm: ConfusionMatrix) -> float:
    """Attackers detained, tp / (tp + fn)"""
    return _percent(cm.tp, cm.tp + cm.fn, "DR")


def defined(rate: Callable[[ConfusionMatrix], float], cm: ConfusionMatrix) -> Optional[float]:
    """Rate value, or None when not applicable"""
    try:
        return rate(cm)
    except UndefinedMetric:
        return None


# ---------------------------------------------------------------------------
# Run report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowStats:
    flow_id: int
    src: NodeId
    dst: NodeId
    sent: int = 0
    received: int = 0


@dataclass(frozen=True)
class RunReport:
    """Outcome of one simulation run"""
    config_digest: str
    seed: int
    node_count: int
    attacker_ratio: float
    defense_enabled: bool
    ground_truth: Tuple[NodeId, ...]
    detected: Tuple[NodeId, ...]
    confusion: ConfusionMatrix
    flows: Tuple[FlowStats, ...] = ()
    drops: Mapping[str, int] = field(default_factory=dict)
    in_flight: int = 0
    first_flood: Mapping[NodeId, float] = field(default_factory=dict)
    first_detention: Mapping[NodeId, float] = field(default_factory=dict)
    rrep_to_invalid: int = 0
    tx_counts: Mapping[str, int] = field(default_factory=dict)
    input_drops: int = 0
    counter_mismatches: int = 0
    events_processed: int = 0
    wall_time: float = field(default=0.0, compare=False)

    @property
    def fpr(self) -> Optional[float]:
        return defined(fpr, self.confusion)

    @property
    def fnr(self) -> Optional[float]:
        return defined(fnr, self.confusion)

    @property
    def dr(self) -> Optional[float]:
        return defined(dr, self.confusion)

    @property
    def packets_sent(self) -> int:
        return sum(f.sent for f in self.flows)

    @property
    def packets_received(self) -> int:
        return sum(f.received for f in self.flows)

    @property
    def pdr(self) -> Optional[float]:
        return self.packets_received / self.packets_sent * 100.0 if self.packets_sent else None

    def detection_latency(self) -> Dict[NodeId, Optional[float]]:
        """Seconds from each attacker's first flood to its first detention"""
        latency: Dict[NodeId, Optional[float]] = {}
        for node in self.ground_truth:
            flood = self.first_flood.get(node)
            caught = self.first_detention.get(node)
            latency[node] = None if flood is None or caught is None else caught - flood
        return latency

    def metric(self, name: str) -> Optional[float]:
        if name not in METRICS:
            raise KeyError(f"unknown metric {name!r}")
        return getattr(self, name)

    def to_dict(self) -> dict:
        """Serializable form; wall time left out so reports are reproducible"""
        return {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "node_count": self.node_count,
            "attacker_ratio": self.attacker_ratio,
            "defense_enabled": self.defense_enabled,
            "ground_truth": list(self.ground_truth),
            "detected": list(self.detected),
            "confusion": {"tp": self.confusion.tp, "fp": self.confusion.fp,
                          "tn": self.confusion.tn, "fn": self.confusion.fn},
            "fpr": self.fpr,
            "fnr": self.fnr,
            "dr": self.dr,
            "pdr": self.pdr,
            "packets_sent": self.packets_sent,
            "packets_received": self.packets_received,
            "flows": [
                {"flow_id": f.flow_id, "src": f.src, "dst": f.dst, "sent": f.sent, "received": f.received}
                for f in self.flows
            ],
            "drops": dict(sorted(self.drops.items())),
            "in_flight": self.in_flight,
            "first_flood": {str(k): v for k, v in sorted(self.first_flood.items())},
            "first_detention": {str(k): v for k, v in sorted(self.first_detention.items())},
            "rrep_to_invalid": self.rrep_to_invalid,
            "tx_counts": dict(sorted(self.tx_counts.items())),
            "input_drops": self.input_drops,
            "counter_mismatches": self.counter_mismatches,
            "events_processed": self.events_processed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def pdr(reports: Sequence[RunReport]) -> float:
    """Mean over runs of (sum A_i / sum Z_i) * 100"""
    if not reports:
        raise ValueError("pdr needs at least one run")
    ratios = []
    for report in reports:
        if report.packets_sent == 0:
            raise NoTraffic(f"run with seed {report.seed} originated no DATA packets")
        ratios.append(report.packets_received / report.packets_sent)
    return float(np.mean(ratios)) * 100.0


# ---------------------------------------------------------------------------
# Sweep aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    ratio: float
    metric: str
    mean: Optional[float]
    stddev: Optional[float]
    n_seeds: int

    def to_csv(self) -> str:
        return ",".join([
            f"{self.ratio:.3f}",
            self.metric,
            _fmt(self.mean),
            _fmt(self.stddev),
            str(self.n_seeds),
        ])


def _fmt(value: Optional[float]) -> str:
    return "NA" if value is None else f"{value:.3f}"


def aggregate_sweep(reports_by_ratio: Mapping[float, Sequence[RunReport]],
                    metrics: Sequence[str] = METRICS) -> List[SweepRow]:
    """
    Mean and sample standard deviation of each metric per ratio

    Rows are ordered by ratio, then by metric order. Undefined values are
    skipped; `n_seeds` counts the defined ones only.
    """
    rows: List[SweepRow] = []
    for ratio in sorted(reports_by_ratio):
        reports = reports_by_ratio[ratio]
        for name in metrics:
            values = np.array([v for v in (r.metric(name) for r in reports) if v is not None], dtype=float)
            if values.size == 0:
                rows.append(SweepRow(ratio, name, None, None, 0))
                continue
            std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
            rows.append(SweepRow(ratio, name, float(np.mean(values)), std, int(values.size)))
    return rows


def format_csv(rows: Iterable[SweepRow]) -> str:
    lines = [CSV_HEADER]
    lines.extend(row.to_csv() for row in rows)
    return "\n".join(lines) + "\n"


def rows_by_metric(rows: Iterable[SweepRow]) -> Dict[str, List[SweepRow]]:
    grouped: Dict[str, List[SweepRow]] = {}
    for row in rows:
        grouped.setdefault(row.metric, []).append(row)
    return grouped


def detected_set(first_detention: Mapping[NodeId, float]) -> FrozenSet[NodeId]:
    return frozenset(first_detention)
