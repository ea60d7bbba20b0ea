import io

import numpy as np
import pytest

from defense import (
    AlarmMode, AlphaOutOfRange, EwmaState, LsfaDefense, NeighborRecord, NetworkAlarm, RttEstimator,
    Verdict, classify_neighbor, ewma_update
)
from engine import Scheduler
from model import BROADCAST, Packet, PacketKind, ScenarioConfig
from utils.logging_utils import TabLogWriter

ALPHAS = [round(0.1 * k, 1) for k in range(1, 11)]


def _run(seq, alpha):
    d = None
    out = []
    for c in seq:
        d = ewma_update(d, c, alpha)
        out.append(d)
    return out


def _closed_form(seq, alpha):
    t = len(seq)
    total = (1 - alpha) ** (t - 1) * seq[0]
    for i in range(2, t + 1):
        total += alpha * (1 - alpha) ** (t - i) * seq[i - 1]
    return total


# ---------------------------------------------------------------------------
# EWMA
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.1, 0.3, 1.0])
def test_first_observation_is_taken_as_is(alpha):
    assert ewma_update(None, 7, alpha) == 7


def test_alpha_one_keeps_only_the_latest():
    assert _run([3, 9], 1.0)[-1] == 9


def test_half_alpha():
    assert _run([4, 8], 0.5)[-1] == pytest.approx(6.0)


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.2])
def test_alpha_out_of_range(alpha):
    with pytest.raises(AlphaOutOfRange):
        ewma_update(1.0, 2, alpha)


def test_recursion_matches_closed_form():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        seq = rng.integers(0, 101, size=rng.integers(1, 21)).tolist()
        alpha = float(rng.choice(ALPHAS))
        assert abs(_run(seq, alpha)[-1] - _closed_form(seq, alpha)) <= 1e-9


def test_average_stays_within_observed_range():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        seq = rng.integers(0, 101, size=rng.integers(1, 21)).tolist()
        alpha = float(rng.choice(ALPHAS))
        for d in _run(seq, alpha):
            assert min(seq) - 1e-9 <= d <= max(seq) + 1e-9


def test_larger_inputs_never_give_a_smaller_average():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        seq = rng.integers(0, 101, size=rng.integers(1, 21))
        bigger = seq + rng.integers(0, 10, size=seq.size)
        alpha = float(rng.choice(ALPHAS))
        for d, d_big in zip(_run(seq.tolist(), alpha), _run(bigger.tolist(), alpha)):
            assert d <= d_big + 1e-9


def test_ewma_state_initializes_both_averages():
    state = EwmaState()
    assert not state.initialized
    assert state.update(12, 0.3, 0.7) == (12, 12)
    d_low, d_high = state.update(2, 0.3, 0.7)
    assert d_low == pytest.approx(9.0)
    assert d_high == pytest.approx(5.0)
    state.reset()
    assert not state.initialized


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def _record(seq, cfg):
    rec = NeighborRecord(neighbor=1)
    for c in seq:
        rec.ewma.update(c, cfg.alpha_low, cfg.alpha_high)
    return rec


def test_zero_activity_is_normal():
    cfg = ScenarioConfig()
    assert classify_neighbor(_record([0], cfg), cfg) is Verdict.NORMAL
    assert classify_neighbor(NeighborRecord(neighbor=1), cfg) is Verdict.NORMAL


def test_sustained_flood_is_convicted():
    cfg = ScenarioConfig()
    rec = _record([0] + [20] * 5, cfg)
    assert rec.ewma.d_low == pytest.approx(20 * (1 - 0.7 ** 5))
    assert classify_neighbor(rec, cfg) is Verdict.ATTACKER


def test_single_burst_decays_back_to_normal():
    cfg = ScenarioConfig()
    assert classify_neighbor(_record([20], cfg), cfg) is Verdict.ATTACKER
    rec = _record([20, 0, 0, 0, 0], cfg)
    assert rec.ewma.d_low < cfg.apt_threshold
    assert classify_neighbor(rec, cfg) is Verdict.NORMAL


def test_both_time_scales_must_agree():
    cfg = ScenarioConfig()
    # slow average still above the threshold, fast one already below
    rec = _record([20, 0, 0], cfg)
    assert rec.ewma.d_low > cfg.apt_threshold > rec.ewma.d_high
    assert classify_neighbor(rec, cfg) is Verdict.NORMAL


# ---------------------------------------------------------------------------
# Network alarm
# ---------------------------------------------------------------------------

def test_alarm_quiet_without_traffic():
    alarm = NetworkAlarm(threshold=20, window=10.0)
    assert alarm.update(5.0, observed=False).mode is AlarmMode.QUIET


def test_alarm_raised_by_a_flood_and_cleared_after_a_quiet_window():
    alarm = NetworkAlarm(threshold=20, window=10.0)
    for k in range(200):
        state = alarm.update(k * 0.05)
    assert state.mode is AlarmMode.ALARMED
    assert state.window_rreq_count > 20
    assert alarm.update(20.0, observed=False).mode is AlarmMode.ALARMED
    assert alarm.update(25.0, observed=False).mode is AlarmMode.ALARMED
    assert alarm.update(30.0, observed=False).mode is AlarmMode.QUIET
    assert alarm.raised == 1


# ---------------------------------------------------------------------------
# Detention lifecycle
# ---------------------------------------------------------------------------

def _defense(cfg=None, log=None):
    sent = []
    defense = LsfaDefense(0, cfg or ScenarioConfig(), Scheduler(),
                          send=lambda pkt, nh: sent.append(pkt) or True, detect_log=log)
    return defense, sent


def _from(neighbor, k):
    return Packet(kind=PacketKind.RREQ, origin=neighbor, sender=neighbor, dest=500, rreq_id=k)


def test_rtt_estimator():
    rtt = RttEstimator(default_rtt=0.5)
    assert rtt.estimate == 0.5
    rtt.add_sample(0.2)
    rtt.add_sample(0.4)
    assert rtt.estimate == pytest.approx(0.3)


def test_detention_lasts_four_round_trips():
    defense, sent = _defense()
    entry = defense.detain(7, 3.0)
    assert entry.expiry == pytest.approx(5.0)
    assert entry.offense_count == 1
    assert defense.is_detained(7)
    isolate = sent[-1]
    assert isolate.kind is PacketKind.ISOLATE
    assert (isolate.suspect, isolate.expiry, isolate.dest) == (7, entry.expiry, BROADCAST)


def test_detention_uses_measured_rtt():
    defense, _ = _defense()
    defense.rtt.add_sample(0.2)
    defense.rtt.add_sample(0.4)
    assert defense.detain(3, 10.0).expiry == pytest.approx(11.2)


def test_detaining_twice_is_a_no_op():
    defense, sent = _defense()
    defense.detain(7, 3.0)
    assert defense.detain(7, 3.5) is None
    assert len(sent) == 1


def test_revise_is_inclusive_and_counts_offenses():
    defense, _ = _defense()
    assert defense.revise(0.0) == set()
    defense.detain(7, 8.0)
    assert defense.revise(9.9) == set()
    assert defense.revise(10.0) == {7}
    assert not defense.is_detained(7)
    assert defense.detain(7, 11.0).offense_count == 2


def test_release_resets_the_suspect_statistics():
    defense, _ = _defense()
    defense.record_hello(7, (0, 0), 0.0)
    for k in range(20):
        defense.observe_rreq(_from(7, k), False, 0.5)
    defense.measure_interval(1.0)
    assert defense.neighbors[7].ewma.initialized
    defense.detain(7, 1.0)
    defense.revise(3.0)
    assert not defense.neighbors[7].ewma.initialized


def test_measure_interval_counts_originated_rreqs():
    defense, _ = _defense()
    defense.record_hello(5, (0, 0), 0.0)
    defense.record_hello(6, (0, 0), 0.0)
    for k in range(20):
        defense.observe_rreq(_from(5, k), True, 0.5)
    # relayed requests are not charged to the relay
    defense.observe_rreq(Packet(kind=PacketKind.RREQ, origin=9, sender=6, dest=500, rreq_id=1), True, 0.6)
    counts = defense.measure_interval(1.0)
    assert counts == {5: 20, 6: 0}
    first = defense.neighbors[5].ewma.d_low
    assert defense.measure_interval(2.0)[5] == 0
    assert defense.neighbors[5].ewma.d_low < first


def test_quiet_alarm_means_no_detention():
    defense, sent = _defense()
    defense.record_hello(5, (0, 0), 0.0)
    for k in range(20):
        defense.observe_rreq(_from(5, k), False, 0.5)
    assert defense.on_measurement(1.0) == []
    assert defense.neighbors[5].ewma.d_low == 20
    assert not defense.detention

    for k in range(20, 45):
        defense.observe_rreq(_from(5, k), True, 1.5)
    detained = defense.on_measurement(2.0)
    assert [e.suspect for e in detained] == [5]
    assert detained[0].expiry == pytest.approx(4.0)
    assert sent[-1].kind is PacketKind.ISOLATE


def test_disabled_defense_only_observes():
    defense, sent = _defense(ScenarioConfig(net_alarm_threshold=0))
    defense.enabled = False
    defense.record_hello(5, (0, 0), 0.0)
    for k in range(30):
        defense.observe_rreq(_from(5, k), True, 0.5)
    assert defense.on_measurement(1.0) == []
    assert defense.neighbors[5].observed_total == 30
    assert sent == []


# ---------------------------------------------------------------------------
# ISOLATE
# ---------------------------------------------------------------------------

def _isolate(sender, suspect, expiry):
    return Packet(kind=PacketKind.ISOLATE, origin=sender, sender=sender, dest=BROADCAST,
                  suspect=suspect, expiry=expiry)


def test_isolate_is_adopted_and_logged():
    buf = io.StringIO()
    defense, sent = _defense(log=TabLogWriter(stream=buf, float_digits=3))
    entry = defense.handle_isolate(_isolate(4, 9, 6.0), 2.0)
    assert entry.expiry == 6.0
    assert entry.source == "isolate"
    assert defense.is_detained(9)
    assert sent == []
    fields = buf.getvalue().strip().split("\t")
    assert fields[0] == "2.000"
    assert fields[1:3] == ["0", "9"]
    assert fields[-1] == "ISOLATE_RX"


@pytest.mark.parametrize("pkt", [
    _isolate(4, 0, 6.0),    # names the receiver
    _isolate(9, 9, 6.0),    # sent by the suspect itself
    _isolate(4, 9, 1.0),    # already expired
])
def test_isolate_ignored(pkt):
    defense, _ = _defense()
    assert defense.handle_isolate(pkt, 2.0) is None
    assert not defense.detention


def test_isolate_from_a_detained_sender_is_ignored():
    defense, _ = _defense()
    defense.detain(4, 0.0)
    assert defense.handle_isolate(_isolate(4, 9, 6.0), 1.0) is None
    assert not defense.is_detained(9)


def test_local_confirmation_requires_own_evidence():
    defense, _ = _defense(ScenarioConfig(require_local_confirmation=True))
    assert defense.handle_isolate(_isolate(4, 9, 6.0), 2.0) is None
    defense.record_hello(9, (0, 0), 0.0)
    for k in range(20):
        defense.observe_rreq(_from(9, k), False, 2.5)
    defense.measure_interval(3.0)
    assert defense.handle_isolate(_isolate(4, 9, 6.0), 3.0) is not None


def test_forged_counters_are_flagged():
    defense, _ = _defense()
    for k in range(4):
        defense.observe_rreq(_from(5, k), True, 0.5)
    assert not defense.record_hello(5, (4, 0), 1.0).forged
    defense.observe_rreq(_from(5, 10), True, 1.5)
    assert defense.record_hello(5, (4, 0), 2.0).forged


def test_hello_delta_is_checked_against_overheard_requests():
    buf = io.StringIO()
    defense, _ = _defense(log=TabLogWriter(stream=buf, float_digits=3))
    defense.record_hello(5, (10, 0), 0.0)
    for k in range(3):
        defense.observe_rreq(_from(5, k), True, 0.4)
    record = defense.record_hello(5, (14, 2), 1.0)
    assert record.prev_counters == (10, 0)
    assert record.last_counters == (14, 2)
    assert record.counter_mismatches == 0
    for k in range(3, 9):
        defense.observe_rreq(_from(5, k), True, 1.4)
    record = defense.record_hello(5, (16, 2), 2.0)
    assert record.counter_mismatches == 1
    assert defense.forged_neighbors == [5]
    assert buf.getvalue().splitlines()[-1].split("\t")[5] == "COUNTER_MISMATCH"


def test_relayed_requests_do_not_count_against_a_hello():
    defense, _ = _defense()
    defense.record_hello(5, (0, 0), 0.0)
    for k in range(4):
        defense.observe_rreq(Packet(kind=PacketKind.RREQ, origin=9, sender=5, dest=500, rreq_id=k), True, 0.5)
    assert defense.record_hello(5, (0, 4), 1.0).counter_mismatches == 0
    assert defense.forged_neighbors == []


def test_discarded_frames_still_feed_the_origin_count():
    defense, _ = _defense()
    defense.overheard(_from(5, 1), 0.5)
    defense.overheard(Packet(kind=PacketKind.RREQ, origin=9, sender=5, dest=500, rreq_id=1), 0.5)
    defense.overheard(Packet(kind=PacketKind.HELLO, origin=5, sender=5, dest=BROADCAST), 0.5)
    assert defense.neighbors[5].observed_rreq_this_interval == 1
    assert defense.alarm.update(0.5, observed=False).window_rreq_count == 0


# ---------------------------------------------------------------------------
# In a network
# ---------------------------------------------------------------------------

def test_isolation_reaches_every_neighbor(make_network, star_positions):
    net = make_network(star_positions(7))
    net.nodes[0].defense.detain(6, 0.0)
    net.scheduler.run_until(0.5)
    for node in net.nodes[1:6]:
        assert node.defense.is_detained(6)
    assert not net.nodes[6].defense.is_detained(6)


def test_forced_quiet_network_never_detains(make_network, star_positions):
    net = make_network(star_positions(6), attackers=[0], attacker_start=0.0,
                       net_alarm_threshold=10 ** 6, sim_duration=10.0)
    report = net.run()
    assert report.detected == ()
    assert all(not node.defense.detention for node in net.nodes)


def test_released_flooder_is_detained_again(make_network):
    buf = io.StringIO()
    net = make_network([[100.0, 100.0], [200.0, 100.0]], attackers=[0], attacker_start=0.0,
                       sim_duration=20.0)
    for node in net.nodes:
        node.defense.detect_log = TabLogWriter(stream=buf, float_digits=3)
    report = net.run()
    assert report.detected == (0,)
    records = [line.split("\t") for line in buf.getvalue().splitlines()]
    events = [(float(r[0]), r[5]) for r in records if r[1] == "1" and r[2] == "0"]
    releases = [t for t, action in events if action == "RELEASE"]
    assert releases
    t_release = releases[0]
    assert any(action == "DETAIN" and t_release <= t <= t_release + 5.0 for t, action in events)
