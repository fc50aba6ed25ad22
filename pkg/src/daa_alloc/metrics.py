"""Risk and involvement metrics, batch reports and the comparison tables."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agent import Mode
from .geometry import FT, SeparationThresholds
from .sim import DAA_OVERRIDE, EncounterLog, SimConfig, step_geometry

LIKELIHOOD_BANDS = (
    (1e-3, "Frequent"),
    (1e-5, "Probable"),
    (1e-7, "Remote"),
    (1e-9, "Extremely Remote"),
)
BLEND_KINDS = ("exact", "axis", "safe_fallback", "max_sm_fallback")


class UnpairedBatchError(ValueError):
    pass


def _tracks(log: EncounterLog):
    tr = log.trace
    own = tuple(tr[f"own_{c}"] for c in ("x", "y", "h", "v", "psi", "vz"))
    intr = tuple(tr[f"intr_{c}"] for c in ("x", "y", "h", "v", "psi", "vz"))
    return own, intr


def recompute_flags(log: EncounterLog, th: SeparationThresholds | None = None) -> tuple[np.ndarray, np.ndarray]:
    """LoWC and NMAC flags rebuilt from the logged states alone."""
    th = th or SeparationThresholds()
    miss, tau, _, r, adh = step_geometry(*_tracks(log), th)
    lowc = (adh <= th.dh_star) & (miss <= th.hmd_star) & (tau >= 0) & (tau <= th.tau_mod_star)
    nmac = (r / FT <= th.nmac_r) & (adh / FT <= th.nmac_h)
    return lowc, nmac


def p_lowc(logs: Sequence[EncounterLog]) -> float:
    if not logs:
        raise ValueError("no logs")
    return sum(int(l.trace["lowc"].sum()) for l in logs) / sum(l.n_records for l in logs)


def p_nmac(logs: Sequence[EncounterLog]) -> float:
    if not logs:
        raise ValueError("no logs")
    return sum(int(l.trace["nmac"].sum()) for l in logs) / sum(l.n_records for l in logs)


def likelihood_category(rate: float) -> str:
    for lo, name in LIKELIHOOD_BANDS:
        if rate >= lo:
            return name
    return "Extremely Improbable"


def lowc_rate_per_hour(p: float, hours: float) -> tuple[float, str]:
    if hours <= 0:
        raise ValueError("hours must be positive")
    rate = p / hours
    return rate, likelihood_category(rate)


def pi_factors(hmd_m, vmd_m, tau_s):
    """Per-step penetration severity; distances converted to feet, factors clamped to [0, 1]."""
    h = np.clip((4000.0 - np.asarray(hmd_m) / FT) / 4000.0, 0.0, 1.0)
    v = np.clip((450.0 - np.asarray(vmd_m) / FT) / 450.0, 0.0, 1.0)
    t = np.clip((35.0 - np.asarray(tau_s)) / 35.0, 0.0, 1.0)
    return np.minimum(h, v) * t


def penetration_integral(log: EncounterLog, dt: float = 1.0) -> float:
    tr = log.trace
    m = tr["lowc"]
    if not m.any():
        return 0.0
    return float(np.sum(pi_factors(tr["hmd_m"][m], tr["vmd_m"][m], tr["tau_s"][m])) * dt)


def trajectory_deviation(log: EncounterLog, plan=None) -> tuple[float, float]:
    """Largest cross-track and vertical distance from the straight nominal track."""
    plan = plan or log.plan
    o = plan.own0
    tr = log.trace
    c, s = math.cos(plan.nominal_heading), math.sin(plan.nominal_heading)
    cross = np.abs(-s * (tr["own_x"] - o.x) + c * (tr["own_y"] - o.y))
    vert = np.abs(tr["own_h"] - o.h)
    return float(cross.max()), float(vert.max())


def summarize_log(log: EncounterLog, cfg: SimConfig) -> dict:
    tr = log.trace
    modes = tr["mode"]
    kinds = tr["blend_kind"]
    hdev, vdev = trajectory_deviation(log)
    return {
        "seed": log.spec.seed,
        "steps": log.n_records,
        "wait": int(np.sum(modes == Mode.WAIT.value)),
        "no_wait": int(np.sum(modes == Mode.ALLOCATE_DAA.value)),
        "receptions": int(tr["pilot_received"].sum()),
        "messages_delivered": log.counters["messages_delivered"],
        "messages_dropped": log.counters["messages_dropped"],
        "exec_daa_override": int(np.sum(modes == DAA_OVERRIDE)),
        "exec_pilot": int(np.sum(modes == Mode.EXECUTE_PILOT.value)),
        "exec_blended": int(np.sum(modes == Mode.EXECUTE_BLENDED.value)),
        "blend": {k: int(np.sum(kinds == k)) for k in BLEND_KINDS},
        "lowc_steps": int(tr["lowc"].sum()),
        "nmac_steps": int(tr["nmac"].sum()),
        "pi": penetration_integral(log, cfg.dt),
        "deviation_h_m": hdev,
        "deviation_v_m": vdev,
    }


def group_report(logs: Sequence[EncounterLog], cfg: SimConfig) -> dict:
    if not logs:
        raise ValueError("no logs")
    sums = [l.summary for l in logs]
    tot = lambda k: int(sum(s[k] for s in sums))  # noqa: E731
    steps = tot("steps")
    hours = len(logs) * cfg.total_time / 3600.0
    pl, pn = p_lowc(logs), p_nmac(logs)
    rate, cat = lowc_rate_per_hour(pl, hours)
    lowc_pi = [s["pi"] for s in sums if s["lowc_steps"] > 0]
    blend = {k: int(sum(s["blend"][k] for s in sums)) for k in BLEND_KINDS}
    n_blend = sum(blend.values())
    return {
        "group": logs[0].group,
        "n_encounters": len(logs),
        "steps": steps,
        "sim_hours": hours,
        "wait": tot("wait"),
        "no_wait": tot("no_wait"),
        "receptions": tot("receptions"),
        "messages_delivered": tot("messages_delivered"),
        "messages_dropped": tot("messages_dropped"),
        "exec_daa_override": tot("exec_daa_override"),
        "exec_pilot": tot("exec_pilot"),
        "exec_blended": tot("exec_blended"),
        "blend": blend,
        "blend_exact_frac": blend["exact"] / n_blend if n_blend else None,
        "blend_axis_only_frac": blend["axis"] / n_blend if n_blend else None,
        "lowc_encounters": len(lowc_pi),
        "lowc_steps": tot("lowc_steps"),
        "nmac_steps": tot("nmac_steps"),
        "p_lowc": pl,
        "p_nmac": pn,
        "lowc_per_flight_hour": rate,
        "likelihood": cat,
        "pi_mean": float(np.mean(lowc_pi)) if lowc_pi else 0.0,
        "pi_max": float(max(lowc_pi)) if lowc_pi else 0.0,
        "deviation_h_mean_m": float(np.mean([s["deviation_h_m"] for s in sums])),
        "deviation_v_mean_m": float(np.mean([s["deviation_v_m"] for s in sums])),
    }


def _pct(x: float, ref: float, sign: float) -> float | None:
    return None if ref == 0 else sign * (x - ref) / ref * 100.0 + 0.0  # no negative zero


def involvement_stats(groups: dict, reference: str = "B-2") -> dict:
    """No-wait reduction and reception increment of every group relative to ``reference``."""
    if reference not in groups:
        raise KeyError(f"reference group {reference} missing")
    ref = groups[reference]
    return {
        g: {
            "no_wait_reduction_pct": _pct(r["no_wait"], ref["no_wait"], -1.0),
            "reception_increment_pct": _pct(r["receptions"], ref["receptions"], 1.0),
        }
        for g, r in groups.items()
    }


def encounter_set_hash(specs) -> str:
    h = hashlib.sha256()
    for s in specs:
        h.update((",".join(map(str, s.as_row())) + "\n").encode())
    return h.hexdigest()


def batch_report(logs_by_group: dict, cfg: SimConfig, specs, reference: str = "B-2") -> dict:
    groups = {g: group_report(logs, cfg) for g, logs in logs_by_group.items()}
    rep = {
        "encounter_set_hash": encounter_set_hash(specs),
        "n_encounters": len(specs),
        "groups": groups,
        "footnote": "Likelihood categories follow the per-flight-hour bands; the rate is the per-step "
                    "LoWC probability divided by simulated flight hours.",
    }
    if reference in groups:
        rep["reference"] = reference
        rep["involvement"] = involvement_stats(groups, reference)
    return rep


def merge_reports(reports: Iterable[dict], reference: str = "B-2") -> dict:
    reports = list(reports)
    if not reports:
        raise ValueError("no reports")
    hashes = {r["encounter_set_hash"] for r in reports}
    if len(hashes) != 1:
        raise UnpairedBatchError("reports come from different encounter sets")
    groups = {}
    for r in reports:
        groups.update(r["groups"])
    if reference not in groups:
        raise KeyError(f"reference group {reference} missing")
    return {**reports[0], "groups": groups, "reference": reference,
            "involvement": involvement_stats(groups, reference)}


# ---------------------------------------------------------------------------
# Output


def _clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def dumps_report(rep: dict) -> str:
    return json.dumps(_clean(rep), indent=2, sort_keys=True) + "\n"


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def report_tables(rep: dict) -> dict[str, list[list]]:
    groups = rep["groups"]
    inv = rep.get("involvement", {})
    ref = rep.get("reference", "")
    order = sorted(groups, key=lambda g: ["B-1", "B-2", "IC-1", "ID-1", "ID-2"].index(g)
                   if g in ("B-1", "B-2", "IC-1", "ID-1", "ID-2") else 99)
    t5 = [["group", "wait", "no_wait", f"no_wait_reduction_pct_vs_{ref}"]]
    t6 = [["group", "pilot_command_receptions", f"reception_increment_pct_vs_{ref}"]]
    t7 = [["group", "daa_override", "pilot", "blended"]]
    t8 = [["group", "lowc_encounters", "p_lowc", "p_nmac", "lowc_per_flight_hour", "likelihood"]]
    t9 = [["group", "pi_mean", "pi_max", "deviation_h_mean_m", "deviation_v_mean_m"]]
    for g in order:
        r = groups[g]
        i = inv.get(g, {})
        t5.append([g, r["wait"], r["no_wait"], i.get("no_wait_reduction_pct")])
        t6.append([g, r["receptions"], i.get("reception_increment_pct")])
        t7.append([g, r["exec_daa_override"], r["exec_pilot"], r["exec_blended"]])
        t8.append([g, r["lowc_encounters"], r["p_lowc"], r["p_nmac"], r["lowc_per_flight_hour"], r["likelihood"]])
        t9.append([g, r["pi_mean"], r["pi_max"], r["deviation_h_mean_m"], r["deviation_v_mean_m"]])
    return {"wait.csv": t5, "receptions.csv": t6, "executions.csv": t7,
            "risk.csv": t8, "severity.csv": t9}


def write_tables(rep: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for name, rows in report_tables(rep).items():
        p = out_dir / name
        with open(p, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(rows[0])
            for row in rows[1:]:
                w.writerow([_fmt(x) for x in row])
        paths.append(p)
    return paths


def write_trace(log: EncounterLog, path) -> None:
    from .sim import TRACE_COLUMNS

    tr = log.trace
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for i in range(log.n_records):
            w.writerow([_fmt(tr[c][i].item()) if hasattr(tr[c][i], "item") else _fmt(tr[c][i])
                        for c in TRACE_COLUMNS])
