"""Encounter sampling and nominal trajectory construction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .actors import truncated_normal
from .geometry import AircraftState, advance

OWN_SPEED = 55.0
DEFAULT_T = 240.0
SANITY_RADIUS_M = 100_000.0
MAX_START_ALT_M = 3000.0

CSV_HEADER = ["seed", "speed_mps", "vz_mps", "ia_deg", "hma_deg", "hmd_m", "vmd_m", "turn_dps", "advance_rate"]

# (min, max) of each sampled quantity
BOUNDS = {
    "intruder_speed": (70.0, 400.0),
    "intruder_vz": (-10.0, 10.0),
    "ia": (0.0, 180.0),
    "hma": (-110.0, 110.0),
    "hmd_target": (0.0, 2750.0),
    "vmd_target": (-915.0, 915.0),
    "turn_rate": (-5.0, 5.0),
    "advance_rate": (0.0, 0.8),
}


class EncounterSchemaError(ValueError):
    pass


class InfeasibleGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class EncounterSpec:
    seed: int
    intruder_speed: float
    intruder_vz: float
    ia: float
    hma: float
    hmd_target: float
    vmd_target: float
    turn_rate: float
    advance_rate: float

    def in_bounds(self) -> bool:
        return all(lo <= getattr(self, k) <= hi for k, (lo, hi) in BOUNDS.items())

    def as_row(self) -> list:
        return [self.seed, *(repr(float(getattr(self, f.name))) for f in fields(self)[1:])]


def sample_spec(seed: int) -> EncounterSpec:
    rng = np.random.default_rng(seed)
    speed = truncated_normal(rng, 100.0, 30.0, *BOUNDS["intruder_speed"])
    vz = truncated_normal(rng, 0.0, 10.0, *BOUNDS["intruder_vz"])
    ia = 180.0 if rng.random() < 0.3 else float(rng.uniform(0.0, 180.0))
    hma = truncated_normal(rng, 0.0, 110.0, *BOUNDS["hma"])
    hmd = float(rng.uniform(*BOUNDS["hmd_target"]))
    vmd = float(rng.uniform(*BOUNDS["vmd_target"]))
    turn = float(rng.uniform(*BOUNDS["turn_rate"]))
    adv = float(np.clip(rng.normal(0.5, 0.5), *BOUNDS["advance_rate"]))
    return EncounterSpec(int(seed), speed, vz, ia, hma, hmd, vmd, turn, adv)


def generate_specs(count: int, base_seed: int) -> list[EncounterSpec]:
    if count < 0:
        raise ValueError("count must be non-negative")
    return [sample_spec(base_seed + i) for i in range(count)]


@dataclass(frozen=True)
class TrajectoryPlan:
    own0: AircraftState
    intr0: AircraftState
    turn_start: float
    turn_rate: float  # rad/s, applied from turn_start until the end
    total_time: float

    @property
    def nominal_heading(self) -> float:
        return self.own0.heading


def build_trajectories(spec: EncounterSpec, total_time: float = DEFAULT_T) -> TrajectoryPlan:
    """Place the intruder so that its straight-line path meets the sampled miss geometry at T/2.

    The horizontal miss vector is perpendicular to the relative velocity, on
    its right for hma >= 0 (so a head-on intruder passes on the ownship's
    left, counter-clockwise from its axis) and on its left otherwise. The intruder
    altitude passes ``vmd_target`` (relative to the ownship) at the CPA time.
    """
    if total_time <= 0:
        raise ValueError("total time must be positive")
    tc = total_time / 2.0
    ia = math.radians(spec.ia)
    vix, viy = spec.intruder_speed * math.cos(ia), spec.intruder_speed * math.sin(ia)
    wx, wy = vix - OWN_SPEED, viy
    w = math.hypot(wx, wy)
    nx, ny = (wy / w, -wx / w) if w > 0 else (0.0, 1.0)
    side = 1.0 if spec.hma >= 0 else -1.0
    cx = OWN_SPEED * tc + side * spec.hmd_target * nx
    cy = side * spec.hmd_target * ny
    x0, y0 = cx - vix * tc, cy - viy * tc
    if math.hypot(x0, y0) > SANITY_RADIUS_M:
        raise InfeasibleGeometryError(f"intruder start {math.hypot(x0, y0):.0f} m exceeds sanity radius")
    vz = spec.intruder_vz
    h0 = spec.vmd_target - vz * tc
    if abs(h0) > MAX_START_ALT_M:
        h0 = math.copysign(MAX_START_ALT_M, h0)
        vz = (spec.vmd_target - h0) / tc
    own0 = AircraftState(0.0, 0.0, 0.0, OWN_SPEED, 0.0)
    intr0 = AircraftState(x0, y0, h0, spec.intruder_speed, ia, vz)
    return TrajectoryPlan(own0, intr0, spec.advance_rate * total_time, math.radians(spec.turn_rate), total_time)


def intruder_track(plan: TrajectoryPlan, dt: float = 1.0) -> list[AircraftState]:
    """Open-loop intruder states at t = 0, dt, ..., T (the intruder never reacts)."""
    k = int(round(plan.total_time / dt))
    out = [plan.intr0]
    s = plan.intr0
    for i in range(k):
        rate = plan.turn_rate if i * dt >= plan.turn_start - 1e-9 else 0.0
        if s.turn_rate != rate:
            s = AircraftState(s.x, s.y, s.h, s.v, s.heading, s.vz, rate)
            out[-1] = s
        s = advance(s, None, dt)
        out.append(s)
    return out


def write_csv(specs, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in specs:
            w.writerow(s.as_row())


def read_csv(path) -> list[EncounterSpec]:
    with open(Path(path), newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != CSV_HEADER:
        raise EncounterSchemaError(f"expected header {','.join(CSV_HEADER)}")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise EncounterSchemaError(f"line {n}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            out.append(EncounterSpec(int(row[0]), *(float(v) for v in row[1:])))
        except ValueError as e:
            raise EncounterSchemaError(f"line {n}: {e}") from None
    return out
