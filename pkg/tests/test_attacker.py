import numpy as np
import pytest

from attacker import AttackerProfile, select_attackers
from model import ScenarioConfig


def test_no_attackers_at_ratio_zero():
    assert select_attackers(ScenarioConfig(attacker_ratio=0.0), np.random.default_rng(1)) == frozenset()


def test_thirty_percent_of_a_hundred():
    chosen = select_attackers(ScenarioConfig(node_count=100, attacker_ratio=0.30), np.random.default_rng(1))
    assert len(chosen) == 30
    assert all(0 <= n < 100 for n in chosen)


def test_selection_is_deterministic():
    cfg = ScenarioConfig(node_count=100, attacker_ratio=0.20)
    first = select_attackers(cfg, np.random.default_rng(5))
    second = select_attackers(cfg, np.random.default_rng(5))
    assert first == second


def test_profile_rejects_bad_values():
    with pytest.raises(ValueError):
        AttackerProfile(rreq_rate=0.0)
    with pytest.raises(ValueError):
        AttackerProfile(duty_cycle=1.5)


def test_rate_over_ten_seconds(make_network):
    net = make_network([[100.0, 100.0], [200.0, 100.0]], attackers=[0],
                       attacker_start=0.0, attacker_rreq_rate=20.0)
    flooder = net.nodes[0].attacker
    flooder.start()
    net.scheduler.run_until(9.99)
    assert flooder.fake_sent == 200
    assert flooder.first_flood_at == 0.0


def test_zero_duty_cycle_is_benign(make_network):
    net = make_network([[100.0, 100.0], [200.0, 100.0]], attackers=[0],
                       attacker_start=0.0, attacker_duty_cycle=0.0)
    flooder = net.nodes[0].attacker
    flooder.start()
    net.scheduler.run_until(20.0)
    assert flooder.fake_sent == 0
    assert net.tx_counts.get("RREQ", 0) == 0


def test_half_duty_cycle(make_network):
    net = make_network([[100.0, 100.0], [200.0, 100.0]], attackers=[0],
                       attacker_start=0.0, attacker_duty_cycle=0.5, attacker_duty_period=10.0)
    flooder = net.nodes[0].attacker
    flooder.start()
    net.scheduler.run_until(19.99)
    assert flooder.fake_sent == 200
    assert flooder.is_active(12.0)
    assert not flooder.is_active(16.0)


def test_every_neighbor_observes_the_flood(make_network, star_positions):
    net = make_network(star_positions(10), attackers=[0], attacker_start=0.0,
                       defense_enabled=False)
    flooder = net.nodes[0].attacker
    flooder.start()
    net.scheduler.run_until(4.999)
    assert flooder.fake_sent == 100
    for node in net.nodes[1:]:
        assert node.defense.neighbors[0].observed_total == 100
        assert node.agent.counters.received >= 100
    assert net.rrep_to_invalid == 0


def test_lying_counters_are_caught(make_network):
    net = make_network([[100.0, 100.0], [200.0, 100.0]], attackers=[0], attacker_start=0.0,
                       lying_counters=True)
    flooder = net.nodes[0].attacker
    flooder.start()
    net.scheduler.run_until(1.0)
    hello = net.nodes[0].agent.emit_hello()
    assert hello.hello_counters[0] == 0
    assert net.nodes[0].agent.counters.sent > 0
    record = net.nodes[1].defense.record_hello(0, hello.hello_counters, net.scheduler.now)
    assert record.forged


@pytest.mark.parametrize("lying,caught", [(False, False), (True, True)])
def test_forged_hello_counters_show_up_in_the_report(make_network, line_positions, lying, caught):
    net = make_network(line_positions(3), attackers=[0], attacker_start=1.0, sim_duration=8.0, lying_counters=lying)
    report = net.run()
    assert (report.counter_mismatches > 0) is caught
    assert (0 in net.nodes[1].defense.forged_neighbors) is caught
    assert net.nodes[2].defense.forged_neighbors == []
