"""
Shared fixtures: small static lossless networks built from explicit positions
"""
import numpy as np
import pytest

from model import ScenarioConfig
from network import Network


def static_config(node_count: int, **overrides) -> ScenarioConfig:
    settings = dict(
        node_count=node_count,
        attacker_ratio=0.0,
        v_min=0.0,
        v_max=0.0,
        pause_time=0.0,
        link_success_prob=1.0,
        cbr_flow_count=0,
        sim_duration=50.0,
        frame_processing_time=0.0,
    )
    settings.update(overrides)
    return ScenarioConfig(**settings)


@pytest.fixture
def make_network():
    """Factory: Network(positions, attackers=(), flows=(), **config overrides)"""

    def _make(positions, attackers=(), flows=(), seed=7, **overrides):
        pos = np.asarray(positions, dtype=float)
        cfg = static_config(pos.shape[0], **overrides)
        return Network(cfg, seed=seed, attackers=attackers, positions=pos, flows=list(flows))

    return _make


@pytest.fixture
def line_positions():
    """Nodes 250 m apart on a line; with the default 300 m range only neighbors hear each other"""

    def _line(n: int, spacing: float = 250.0):
        return [[100.0 + i * spacing, 100.0] for i in range(n)]

    return _line


@pytest.fixture
def star_positions():
    """Node 0 at the center, the others on a 50 m circle (all mutually in range)"""

    def _star(n: int, radius: float = 50.0):
        pts = [[500.0, 500.0]]
        for k in range(1, n):
            angle = 2 * np.pi * k / (n - 1)
            pts.append([500.0 + radius * np.cos(angle), 500.0 + radius * np.sin(angle)])
        return pts

    return _star
