from __future__ import annotations

import math

import numpy as np
import pytest

from daa_alloc.actors import (
    DaaModel,
    LatencyChannel,
    LatencyConfig,
    PilotModel,
    daa_resolve,
    pilot_choose,
    pilot_respond,
    truncated_normal,
)
from daa_alloc.agent import AgentConfig, Axis, Direction, Source, safety_metrics
from daa_alloc.geometry import AircraftState

CFG = AgentConfig()
OWN = AircraftState(0, 0, 0, 55, 0)
DAA = DaaModel()
PILOT = PilotModel()


def test_menu_shape():
    menu = DAA.candidates(0.0)
    assert len(menu) == 14
    offsets = sorted(round(math.degrees((c.target_heading + math.pi) % (2 * math.pi) - math.pi))
                     for c in menu if c.axis is Axis.HORIZONTAL)
    assert offsets == sorted([s * o for o in (15, 30, 45, 60, 90) for s in (-1, 1)])
    assert sorted(c.target_vz for c in menu if c.axis is Axis.VERTICAL) == [-5, -2.5, 2.5, 5]
    left = next(c for c in menu if c.direction is Direction.LEFT)
    assert left.target_heading == pytest.approx(math.radians(15))  # left is counter-clockwise


def test_daa_far_diverging_takes_smallest_offset():
    intr = AircraftState(-8000, 0, 0, 60, math.pi)
    cmd = daa_resolve(OWN, intr, DAA, CFG)
    assert cmd.source is Source.DAA
    assert cmd == DAA.candidates()[0].as_source(Source.DAA)


@pytest.mark.parametrize("bearing_deg", [-90, -60, -30, 0, 30, 60, 90])
def test_daa_picks_first_safe_candidate(bearing_deg):
    b = math.radians(bearing_deg)
    intr = AircraftState(3000 * math.cos(b), 3000 * math.sin(b), 0, 120, b + math.pi)
    cmd = daa_resolve(OWN, intr, DAA, CFG)
    cands = DAA.candidates()
    scoring = AgentConfig(sm_horizon_s=DAA.resolution_horizon_s)
    sm = safety_metrics(cands, OWN, intr, scoring)
    safe = [c for c, m in zip(cands, sm) if m > 0]
    expect = safe[0] if safe else cands[int(np.argmax(sm))]
    assert cmd == expect.as_source(Source.DAA)


def test_daa_deterministic_head_on():
    intr = AircraftState(3000, 0, 0, 100, math.pi)
    assert daa_resolve(OWN, intr, DAA, CFG) == daa_resolve(OWN, intr, DAA, CFG)


def test_pilot_prefers_right_turn():
    intr = AircraftState(3000, 0, 0, 100, math.pi)
    cmd = pilot_choose(OWN, intr, PILOT, DAA, CFG)
    assert cmd.source is Source.PILOT
    assert cmd.axis is Axis.HORIZONTAL and cmd.direction is Direction.RIGHT


def test_pilot_order_differs_from_daa_order():
    order = PILOT.order(DAA.candidates())
    dirs = [c.direction for c in order]
    assert dirs[:5] == [Direction.RIGHT] * 5
    assert dirs[10:12] == [Direction.UP] * 2


def test_pilot_respond_deterministic():
    intr = AircraftState(3000, 200, 0, 100, math.pi)
    a = pilot_respond(OWN, intr, 12.0, PILOT, np.random.default_rng(5), DAA, CFG)
    b = pilot_respond(OWN, intr, 12.0, PILOT, np.random.default_rng(5), DAA, CFG)
    assert a == b
    assert a[1] >= 12.0 + PILOT.reaction_min_s


def test_pilot_no_safe_candidate_issues_max_metric():
    intr = AircraftState(80, 0, 0, 100, math.pi)
    cands = PILOT.order(DAA.candidates())
    sm = safety_metrics(cands, OWN, intr, AgentConfig(sm_horizon_s=PILOT.scoring_horizon_s))
    assert np.all(sm <= 0)
    cmd = pilot_choose(OWN, intr, PILOT, DAA, CFG)
    assert cmd == cands[int(np.argmax(sm))].as_source(Source.PILOT)


def test_reaction_delay_floor():
    rng = np.random.default_rng(0)
    d = [PILOT.reaction_delay(rng) for _ in range(2000)]
    assert min(d) >= 0.5
    assert np.mean(d) == pytest.approx(3.0, abs=0.1)


def test_truncated_normal_edge_cases():
    rng = np.random.default_rng(0)
    assert truncated_normal(rng, 5, 0, 0.2, 10) == 5
    assert truncated_normal(rng, 50, 0, 0.2, 10) == 10
    with pytest.raises(ValueError):
        truncated_normal(rng, 0, 1, 2, 1)


# ---------------------------------------------------------------------------
# Latency channel


def test_constant_channel_delivery_time():
    ch = LatencyChannel(LatencyConfig("constant", constant_s=4.0), np.random.default_rng(0))
    assert ch.send("m", 10.0) == 14.0
    for t in (10.0, 11.0, 13.0):
        assert ch.poll(t) == []
    assert ch.poll(14.0) == ["m"]
    assert len(ch) == 0


def test_gaussian_samples_bounds_and_mean():
    cfg = LatencyConfig("gaussian")
    rng = np.random.default_rng(123)
    x = np.array([cfg.sample(rng) for _ in range(10000)])
    assert x.min() >= 0.2 and x.max() <= 10.0
    assert abs(x.mean() - 5.0) <= 0.2


def test_fifo_clamp():
    ch = LatencyChannel(LatencyConfig(), np.random.default_rng(0))
    a = ch.send("first", 0.0, delay=9.0)
    b = ch.send("second", 0.1, delay=1.0)
    assert b >= a
    assert ch.poll(5.0) == []
    assert ch.poll(9.0) == ["first", "second"]


def test_channel_never_early_and_ordered():
    ch = LatencyChannel(LatencyConfig("gaussian"), np.random.default_rng(9))
    sent = {}
    got = []
    for k in range(300):
        t = k * 0.5
        sent[k] = (t, ch.send(k, t))
        for m in ch.poll(t):
            got.append(m)
            assert t + 1e-9 >= sent[m][1]
            assert sent[m][1] - sent[m][0] >= 0.2 - 1e-12
    got += ch.poll(1e6)
    assert got == list(range(300))


def test_channel_rejects_time_reversal():
    ch = LatencyChannel(LatencyConfig(), np.random.default_rng(0))
    ch.send("x", 5.0)
    with pytest.raises(ValueError):
        ch.poll(4.0)
    with pytest.raises(ValueError):
        ch.send("y", 4.0)


def test_latency_config_validation():
    with pytest.raises(ValueError):
        LatencyConfig("uniform")
    with pytest.raises(ValueError):
        LatencyConfig(min_s=5, max_s=1)
