from __future__ import annotations

import math

import numpy as np
import pytest

from daa_alloc.agent import Mode, Source
from daa_alloc.encounters import EncounterSpec, build_trajectories, generate_specs
from daa_alloc.geometry import FT, AircraftState, OwnshipCommand, project_ownship
from daa_alloc.metrics import (
    UnpairedBatchError,
    batch_report,
    dumps_report,
    involvement_stats,
    likelihood_category,
    lowc_rate_per_hour,
    merge_reports,
    p_lowc,
    p_nmac,
    penetration_integral,
    pi_factors,
    recompute_flags,
    report_tables,
    trajectory_deviation,
    write_tables,
)
from daa_alloc.sim import (
    DAA_OVERRIDE,
    GROUPS,
    EncounterLog,
    SimConfig,
    SimConfigError,
    run_batch,
    run_encounter,
)


def _spec(**kw) -> EncounterSpec:
    base = dict(seed=11, intruder_speed=100.0, intruder_vz=0.0, ia=180.0, hma=0.0, hmd_target=0.0,
                vmd_target=0.0, turn_rate=0.0, advance_rate=0.8)
    base.update(kw)
    return EncounterSpec(**base)


def _synthetic(n: int, lowc=(), nmac=(), **cols) -> EncounterLog:
    trace = {"t": np.arange(n, dtype=float),
             "lowc": np.isin(np.arange(n), lowc), "nmac": np.isin(np.arange(n), nmac)}
    trace.update({k: np.asarray(v, dtype=float) for k, v in cols.items()})
    return EncounterLog(_spec(), "B-2", build_trajectories(_spec()), trace, {})


# ---------------------------------------------------------------------------
# Group presets and configuration


def test_group_presets():
    assert set(GROUPS) == {"B-1", "B-2", "IC-1", "ID-1", "ID-2"}
    assert GROUPS["B-1"].latency.mode == "constant" and GROUPS["B-1"].latency.constant_s == 4.0
    assert GROUPS["B-2"].latency.mode == "gaussian" and GROUPS["B-2"].setup == "baseline"
    assert GROUPS["IC-1"].wait_source == "constant" and GROUPS["IC-1"].constant_wait_s == 5.0
    assert GROUPS["IC-1"].latency.constant_s == 5.0
    assert GROUPS["ID-1"].wait_source == "map" and GROUPS["ID-1"].latency.constant_s == 4.0
    assert GROUPS["ID-2"].latency == GROUPS["B-2"].latency


def test_config_errors():
    with pytest.raises(SimConfigError):
        SimConfig(group="X-9")
    with pytest.raises(SimConfigError):
        SimConfig(total_time=10.5)
    with pytest.raises(SimConfigError):
        run_encounter(_spec(), SimConfig(group="ID-1"), None)
    with pytest.raises(SimConfigError):
        run_batch([_spec()], ["ID-2"], SimConfig(), None)


def test_config_dict_round_trip():
    cfg = SimConfig(group="IC-1", seed=3)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# Closed-loop runs


def test_benign_encounter_flies_straight():
    spec = _spec(hmd_target=2750.0, vmd_target=915.0, ia=90.0)
    for g in ("B-2", "IC-1"):
        log = run_encounter(spec, SimConfig(group=g))
        tr = log.trace
        assert log.n_records == 241
        assert not tr["lowc"].any()
        assert set(tr["mode"]) == {"Cruise"}
        assert np.allclose(tr["own_y"], 0.0) and np.allclose(tr["own_h"], 0.0)
        assert np.allclose(tr["own_x"], 55.0 * tr["t"])
        assert trajectory_deviation(log) == (0.0, 0.0)


def test_run_is_deterministic(default_map):
    spec = generate_specs(1, 4242)[0]
    a = run_encounter(spec, SimConfig(group="ID-2", seed=5), default_map)
    b = run_encounter(spec, SimConfig(group="ID-2", seed=5), default_map)
    for k in a.trace:
        assert np.array_equal(a.trace[k], b.trace[k], equal_nan=a.trace[k].dtype.kind == "f"), k


def test_batch_independent_of_worker_count(default_map):
    specs = generate_specs(6, 300)
    cfg = SimConfig(seed=2)
    one = run_batch(specs, ["B-2", "ID-2"], cfg, default_map, threads=1)
    two = run_batch(specs, ["B-2", "ID-2"], cfg, default_map, threads=2, chunk=2)
    assert dumps_report(batch_report(one, cfg, specs)) == dumps_report(batch_report(two, cfg, specs))
    for g in one:
        for x, y in zip(one[g], two[g]):
            assert x.summary == y.summary


def test_head_on_integrated_run(default_map):
    log = run_encounter(_spec(), SimConfig(group="ID-2", seed=1), default_map)
    tr = log.trace
    assert (tr["mode"] == Mode.WAIT.value).any()
    received = tr["pilot_received"]
    assert received.any()
    assert set(tr["source"][received]) <= {Source.PILOT.value, Source.BLENDED.value}
    assert not (tr["mode"] == DAA_OVERRIDE).any()


def test_head_on_baseline_hands_to_daa():
    log = run_encounter(_spec(), SimConfig(group="B-2", seed=1))
    assert (log.trace["mode"] == Mode.ALLOCATE_DAA.value).any()
    assert log.summary["no_wait"] > 0 and log.summary["wait"] == 0


def test_constant_wait_budget_is_five_seconds():
    log = run_encounter(_spec(), SimConfig(group="IC-1", seed=1))
    modes = list(log.trace["mode"])
    runs, cur = [], 0
    for m in modes:
        if m == Mode.WAIT.value:
            cur += 1
        elif cur:
            runs.append(cur)
            cur = 0
    assert runs and max(runs) <= 5


@pytest.fixture(scope="module")
def batch(default_map):
    specs = generate_specs(30, 777)
    cfg = SimConfig(seed=9)
    groups = list(GROUPS)
    return specs, cfg, run_batch(specs, groups, cfg, default_map)


def test_flags_match_recomputation(batch):
    _, _, logs = batch
    for g, gl in logs.items():
        for log in gl:
            lowc, nmac = recompute_flags(log)
            assert np.array_equal(lowc, log.trace["lowc"])
            assert np.array_equal(nmac, log.trace["nmac"])
            # predicate nesting: every NMAC step is also a LoWC step
            assert not (log.trace["nmac"] & ~log.trace["lowc"]).any()


def test_paired_intruder_paths(batch):
    _, _, logs = batch
    ref = logs["B-2"]
    for g, gl in logs.items():
        for a, b in zip(ref, gl):
            assert np.array_equal(a.trace["intr_x"], b.trace["intr_x"])
            assert np.array_equal(a.trace["intr_h"], b.trace["intr_h"])


def test_integrated_groups_never_override_pilot(batch):
    _, _, logs = batch
    for g in ("IC-1", "ID-1", "ID-2"):
        for log in logs[g]:
            tr = log.trace
            assert not (tr["pilot_received"] & (tr["source"] == Source.DAA.value)).any()
            assert not (tr["mode"] == DAA_OVERRIDE).any()


def test_report_consistency(batch, tmp_path):
    specs, cfg, logs = batch
    rep = batch_report(logs, cfg, specs)
    for g, r in rep["groups"].items():
        assert r["n_encounters"] == len(specs)
        assert r["steps"] == len(specs) * 241
        assert r["exec_pilot"] + r["exec_blended"] + r["exec_daa_override"] <= r["steps"]
        assert r["receptions"] >= r["exec_pilot"]
        assert r["p_nmac"] <= r["p_lowc"]
        assert r["wait"] + r["no_wait"] <= r["steps"]
    for g in ("IC-1", "ID-1", "ID-2"):
        assert rep["groups"][g]["exec_daa_override"] == 0
    assert rep["involvement"]["B-2"]["reception_increment_pct"] == 0.0
    paths = write_tables(rep, tmp_path)
    assert len(paths) == 5
    rows = report_tables(rep)
    assert [r[0] for r in rows["wait.csv"][1:]] == ["B-1", "B-2", "IC-1", "ID-1", "ID-2"]


def test_merge_requires_same_encounter_set(batch):
    specs, cfg, logs = batch
    a = batch_report({"B-2": logs["B-2"]}, cfg, specs)
    b = batch_report({"ID-2": logs["ID-2"]}, cfg, specs)
    merged = merge_reports([a, b])
    assert set(merged["groups"]) == {"B-2", "ID-2"} and "ID-2" in merged["involvement"]
    other = batch_report({"ID-2": logs["ID-2"][:5]}, cfg, specs[:5])
    with pytest.raises(UnpairedBatchError):
        merge_reports([a, other])


# ---------------------------------------------------------------------------
# Metrics on synthetic logs


def test_p_lowc_counts():
    assert p_lowc([_synthetic(100, lowc=[3, 4])]) == pytest.approx(0.02)
    assert p_lowc([_synthetic(100)]) == 0.0
    assert p_nmac([_synthetic(240, lowc=[7], nmac=[7])]) == pytest.approx(1 / 240)
    assert p_lowc([_synthetic(50, lowc=[1]), _synthetic(50, lowc=[2])]) == pytest.approx(0.02)
    with pytest.raises(ValueError):
        p_lowc([])


@pytest.mark.parametrize("rate,cat", [
    (2.22e-7, "Remote"), (0.0, "Extremely Improbable"), (1e-4, "Probable"), (1e-3, "Frequent"),
    (1e-5, "Probable"), (5e-9, "Extremely Remote"), (9.9e-10, "Extremely Improbable"),
])
def test_likelihood_bands(rate, cat):
    assert likelihood_category(rate) == cat


def test_rate_per_hour():
    rate, cat = lowc_rate_per_hour(1e-4, 10.0)
    assert rate == pytest.approx(1e-5) and cat == "Probable"
    with pytest.raises(ValueError):
        lowc_rate_per_hour(0.1, 0.0)


def test_pi_factors():
    assert float(pi_factors(0.0, 0.0, 0.0)) == 1.0
    assert float(pi_factors(4000 * FT, 0.0, 0.0)) == pytest.approx(0.0, abs=1e-12)
    assert float(pi_factors(2000 * FT, 0.0, 17.5)) == pytest.approx(0.25)
    # clamped: a factor outside its band never goes negative
    assert float(pi_factors(0.0, 900 * FT, 0.0)) == 0.0
    assert float(pi_factors(0.0, 0.0, 70.0)) == 0.0


def test_penetration_integral():
    log = _synthetic(4, lowc=[1, 2], hmd_m=[0, 0, 2000 * FT, 0], vmd_m=[0, 0, 0, 0], tau_s=[0, 0, 0, 0])
    assert penetration_integral(log) == pytest.approx(1.5)
    assert penetration_integral(_synthetic(4, hmd_m=[0] * 4, vmd_m=[0] * 4, tau_s=[0] * 4)) == 0.0


def test_trajectory_deviation_closed_form():
    own = AircraftState(0, 0, 0, 55, 0)
    # turn to west at the 5 deg/s limit (18 steps), hold for 10 s, then turn back north
    out = project_ownship(own, OwnshipCommand(55, math.pi / 2, 0), 28)
    last = AircraftState(*(float(a[-1]) for a in out))
    back = project_ownship(last, OwnshipCommand(55, 0.0, 0), 20)
    x = np.concatenate([[0.0], out[0], back[0]])
    y = np.concatenate([[0.0], out[1], back[1]])
    n = len(x)
    log = _synthetic(n, own_x=x, own_y=y, own_h=np.zeros(n))
    a = math.radians(5)
    turn = math.sin(18 * a / 2) * math.sin(19 * a / 2) / math.sin(a / 2)  # sum of sin(5i deg), i=1..18
    # the return turn keeps drifting west: headings 85..0 deg add sum of sin(5j deg), j=0..17
    h, v = trajectory_deviation(log)
    assert h == pytest.approx(55 * (turn + 10 + turn - 1), abs=1e-6)
    assert v == 0.0


def test_involvement_arithmetic():
    groups = {"B-2": {"no_wait": 100, "receptions": 200}, "ID-2": {"no_wait": 20, "receptions": 232},
              "X": {"no_wait": 150, "receptions": 150}}
    inv = involvement_stats(groups)
    assert inv["ID-2"]["no_wait_reduction_pct"] == pytest.approx(80.0)
    assert inv["ID-2"]["reception_increment_pct"] == pytest.approx(16.0)
    assert inv["X"]["no_wait_reduction_pct"] == pytest.approx(-50.0)
    assert inv["B-2"]["no_wait_reduction_pct"] == 0.0
    assert math.copysign(1, inv["B-2"]["no_wait_reduction_pct"]) == 1.0
    with pytest.raises(KeyError):
        involvement_stats(groups, reference="B-1")
