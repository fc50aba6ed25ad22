"""Relative-frame kinematics and separation predicates.

Frame convention: x points north, y points west, h is altitude (all meters).
Headings are measured from north, counter-clockwise positive, so a velocity
of speed ``v`` and heading ``psi`` is ``(v cos psi, v sin psi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

TWO_PI = 2.0 * math.pi
FT = 0.3048  # meters per foot


def wrap_2pi(a: float) -> float:
    a = math.fmod(a, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    # fmod of a tiny negative can round up to exactly 2*pi
    return 0.0 if a >= TWO_PI else a


def wrap_pi(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = wrap_2pi(a)
    return a - TWO_PI if a > math.pi else a


@dataclass(frozen=True)
class AircraftState:
    x: float
    y: float
    h: float
    v: float
    heading: float
    vz: float = 0.0
    turn_rate: float = 0.0

    def __post_init__(self):
        if self.v < 0:
            raise ValueError(f"negative airspeed {self.v}")
        object.__setattr__(self, "heading", wrap_2pi(self.heading))

    @property
    def vx(self) -> float:
        return self.v * math.cos(self.heading)

    @property
    def vy(self) -> float:
        return self.v * math.sin(self.heading)


class Tag(str, Enum):
    NORMAL = "Normal"
    OUT = "Out"
    LOWC = "LoWC"


@dataclass(frozen=True)
class RelativeState:
    dx: float = 0.0
    dy: float = 0.0
    dh: float = 0.0
    vi: float = 0.0
    vh: float = 0.0
    theta_i: float = 0.0
    tag: Tag = Tag.NORMAL

    def __post_init__(self):
        if self.tag is Tag.NORMAL:
            object.__setattr__(self, "theta_i", wrap_2pi(self.theta_i))


OUT_STATE = RelativeState(tag=Tag.OUT)
LOWC_STATE = RelativeState(tag=Tag.LOWC)


class OwnshipCommand(NamedTuple):
    """Ownship speed/heading/vertical-rate, the ``u_a`` input of the MDP kinematics."""

    v: float
    heading: float
    vz: float = 0.0


class IntruderDelta(NamedTuple):
    dv: float = 0.0  # m/s^2
    dtheta: float = 0.0  # rad/s
    dvh: float = 0.0  # m/s^2


@dataclass(frozen=True)
class StepLimits:
    vi_min: float = 70.0
    vi_max: float = 300.0
    vh_min: float = -5.0
    vh_max: float = 5.0


@dataclass(frozen=True)
class SeparationThresholds:
    hmd_star: float = 1220.0
    dh_star: float = 122.0
    tau_mod_star: float = 35.0
    nmac_r: float = 500.0  # ft
    nmac_h: float = 120.0  # ft
    dmod: float = 1220.0

    def __post_init__(self):
        for name in ("hmd_star", "dh_star", "tau_mod_star", "nmac_r", "nmac_h", "dmod"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class Performance:
    """Ownship maneuver limits used when flying a commanded course."""

    max_turn_rate: float = math.radians(5.0)
    max_vert_accel: float = 2.0
    max_speed_accel: float = 2.0


def relative_velocity(s: RelativeState, own_cmd) -> tuple[float, float]:
    th = wrap_pi(s.theta_i)
    ho = wrap_pi(own_cmd.heading)
    vrx = s.vi * math.cos(th) - own_cmd.v * math.cos(ho)
    vry = s.vi * math.sin(th) - own_cmd.v * math.sin(ho)
    return vrx, vry


def relative_state(own: AircraftState, intr: AircraftState) -> RelativeState:
    return RelativeState(
        dx=intr.x - own.x,
        dy=intr.y - own.y,
        dh=intr.h - own.h,
        vi=intr.v,
        vh=intr.vz - own.vz,
        theta_i=intr.heading,
    )


def to_ownship_frame(s: RelativeState, own_heading: float) -> RelativeState:
    """Rotate a world-frame relative state so the ownship heading becomes 0."""
    c, sn = math.cos(own_heading), math.sin(own_heading)
    return replace(
        s,
        dx=c * s.dx + sn * s.dy,
        dy=-sn * s.dx + c * s.dy,
        theta_i=s.theta_i - own_heading,
    )


def step_relative(
    s: RelativeState,
    ownship_cmd: OwnshipCommand,
    intruder_delta: IntruderDelta,
    dt: float,
    limits: Optional[StepLimits] = None,
) -> RelativeState:
    if s.tag is not Tag.NORMAL:
        raise ValueError(f"cannot step a {s.tag.value} state")
    if dt <= 0:
        raise ValueError("dt must be positive")
    lim = limits or StepLimits()
    vrx, vry = relative_velocity(s, ownship_cmd)
    # a delta cannot push a rate past its bound; a state already outside stays put
    vi = min(max(s.vi + intruder_delta.dv * dt, min(lim.vi_min, s.vi)), max(lim.vi_max, s.vi))
    vh = min(max(s.vh + intruder_delta.dvh * dt, min(lim.vh_min, s.vh)), max(lim.vh_max, s.vh))
    return RelativeState(
        dx=s.dx + vrx * dt,
        dy=s.dy + vry * dt,
        dh=s.dh + s.vh * dt,
        vi=vi,
        vh=vh,
        theta_i=s.theta_i + intruder_delta.dtheta * dt,
    )


def cpa(px: float, py: float, wx: float, wy: float) -> tuple[float, float]:
    """Return (t_cpa, horizontal miss distance), with t_cpa clamped to >= 0."""
    ww = wx * wx + wy * wy
    t = 0.0 if ww == 0.0 else max(0.0, -(px * wx + py * wy) / ww)
    return t, math.hypot(px + wx * t, py + wy * t)


def hmd(s: RelativeState, own_cmd) -> float:
    vrx, vry = relative_velocity(s, own_cmd)
    return cpa(s.dx, s.dy, vrx, vry)[1]


def tau_mod(rng: float, range_rate: float, dmod: float) -> float:
    if rng < 0:
        raise ValueError("range must be non-negative")
    if rng <= dmod:
        return 0.0
    if range_rate < 0:
        return (dmod * dmod - rng * rng) / (rng * range_rate)
    return math.inf


def range_and_rate(s: RelativeState, own_cmd) -> tuple[float, float]:
    vrx, vry = relative_velocity(s, own_cmd)
    r = math.hypot(s.dx, s.dy)
    rr = 0.0 if r == 0.0 else (s.dx * vrx + s.dy * vry) / r
    return r, rr


def lowc_metrics(s: RelativeState, own_cmd, th: SeparationThresholds) -> tuple[float, float, float]:
    """(|dh|, HMD, tau_mod) for a normal state."""
    r, rr = range_and_rate(s, own_cmd)
    return abs(s.dh), hmd(s, own_cmd), tau_mod(r, rr, th.dmod)


def is_lowc(s: RelativeState, own_cmd, th: SeparationThresholds | None = None) -> bool:
    if s.tag is Tag.LOWC:
        return True
    if s.tag is Tag.OUT:
        return False
    th = th or SeparationThresholds()
    adh, miss, tau = lowc_metrics(s, own_cmd, th)
    return adh <= th.dh_star and miss <= th.hmd_star and 0.0 <= tau <= th.tau_mod_star


def is_nmac(r_ft: float, h_ft: float, th: SeparationThresholds | None = None) -> bool:
    th = th or SeparationThresholds()
    return r_ft <= th.nmac_r and h_ft <= th.nmac_h


def own_command(own: AircraftState) -> OwnshipCommand:
    return OwnshipCommand(own.v, own.heading, own.vz)


def lowc_between(own: AircraftState, intr: AircraftState, th: SeparationThresholds | None = None) -> bool:
    return is_lowc(relative_state(own, intr), own_command(own), th)


def nmac_between(own: AircraftState, intr: AircraftState, th: SeparationThresholds | None = None) -> bool:
    r = math.hypot(intr.x - own.x, intr.y - own.y) / FT
    h = abs(intr.h - own.h) / FT
    return is_nmac(r, h, th)


# ---------------------------------------------------------------------------
# Trajectory projection. One implementation serves the simulator step, ProjL
# and the safety metric so that projections and dynamics never disagree.


def _approach(cur, target, max_step):
    """Move ``cur`` toward ``target`` by at most ``max_step`` (array-friendly)."""
    return cur + np.clip(target - cur, -max_step, max_step)


def project_ownship(own: AircraftState, cmd: OwnshipCommand, n: int,
                    perf: Performance | None = None, dt: float = 1.0):
    """Fly ``cmd`` for ``n`` steps; returns arrays (x, y, h, v, heading, vz), each (..., n).

    ``cmd`` fields may be arrays of shape (k,) to project k commands at once.
    Heading turns the short way round at the turn-rate limit; speed and
    vertical rate slew at their acceleration limits. Positions use the
    post-update velocity of each step.
    """
    perf = perf or Performance()
    i = np.arange(1, n + 1, dtype=float) * dt
    tgt_h = np.asarray(cmd.heading, dtype=float)[..., None]
    tgt_vz = np.asarray(cmd.vz, dtype=float)[..., None]
    tgt_v = np.asarray(cmd.v, dtype=float)[..., None]
    dpsi = np.mod(tgt_h - own.heading + math.pi, TWO_PI) - math.pi
    heading = own.heading + np.clip(dpsi, -perf.max_turn_rate * i, perf.max_turn_rate * i)
    vz = _approach(own.vz, tgt_vz, perf.max_vert_accel * i)
    v = _approach(own.v, tgt_v, perf.max_speed_accel * i)
    x = own.x + np.cumsum(v * np.cos(heading), axis=-1) * dt
    y = own.y + np.cumsum(v * np.sin(heading), axis=-1) * dt
    h = own.h + np.cumsum(vz, axis=-1) * dt
    shape = np.broadcast_shapes(x.shape, h.shape)
    return tuple(np.broadcast_to(a, shape) for a in (x, y, h, np.broadcast_to(v, shape), heading, vz))


def project_intruder(intr: AircraftState, n: int, dt: float = 1.0):
    """Constant speed, vertical rate and turn rate; arrays (x, y, h, v, heading, vz)."""
    i = np.arange(1, n + 1, dtype=float) * dt
    heading = intr.heading + intr.turn_rate * i
    x = intr.x + np.cumsum(intr.v * np.cos(heading)) * dt
    y = intr.y + np.cumsum(intr.v * np.sin(heading)) * dt
    h = intr.h + intr.vz * i
    v = np.full(n, intr.v)
    vz = np.full(n, intr.vz)
    return x, y, h, v, heading, vz


def separation_margins(own_tr, intr_tr, th: SeparationThresholds):
    """Normalized margins (hmd/hmd* - 1, |dh|/dh* - 1, tau/tau* - 1) along projections.

    All three are <= 0 exactly when the LoWC conditions hold concurrently.
    """
    ox, oy, oh, ov, opsi, ovz = own_tr
    ix, iy, ih, iv, ipsi, ivz = intr_tr
    px, py = ix - ox, iy - oy
    wx = iv * np.cos(ipsi) - ov * np.cos(opsi)
    wy = iv * np.sin(ipsi) - ov * np.sin(opsi)
    ww = wx * wx + wy * wy
    pw = px * wx + py * wy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ww > 0, np.maximum(0.0, -pw / np.where(ww > 0, ww, 1.0)), 0.0)
        miss = np.hypot(px + wx * t, py + wy * t)
        r = np.hypot(px, py)
        rr = np.where(r > 0, pw / np.where(r > 0, r, 1.0), 0.0)
        tau = np.where(
            r <= th.dmod, 0.0,
            np.where(rr < 0, (th.dmod ** 2 - r * r) / (r * np.where(rr < 0, rr, -1.0)), np.inf),
        )
    m_h = miss / th.hmd_star - 1.0
    m_v = np.abs(ih - oh) / th.dh_star - 1.0
    m_t = tau / th.tau_mod_star - 1.0  # tau is never negative here
    return m_h, m_v, m_t


def lowc_mask(own_tr, intr_tr, th: SeparationThresholds):
    m_h, m_v, m_t = separation_margins(own_tr, intr_tr, th)
    return (m_h <= 0) & (m_v <= 0) & (m_t <= 0)


def lowc_reachable(own: AircraftState, intr: AircraftState, horizon_n: int, th: SeparationThresholds,
                   own_vz_max: float = 0.0, own_v_max: float = 0.0, dt: float = 1.0) -> bool:
    """Conservative test: False only if no LoWC can occur within the horizon.

    Uses speed bounds alone. LoWC needs |dh| <= dh* and tau_mod <= tau*,
    and tau_mod <= tau* requires range <= tau* * closing speed + DMOD.
    """
    span = horizon_n * dt
    vz_rel = abs(intr.vz) + max(abs(own.vz), own_vz_max)
    if abs(intr.h - own.h) - vz_rel * span > th.dh_star:
        return False
    v_close = intr.v + max(own.v, own_v_max)
    rng = math.hypot(intr.x - own.x, intr.y - own.y)
    return rng - v_close * span <= th.tau_mod_star * v_close + th.dmod


def proj_lowc(own: AircraftState, intr: AircraftState, own_cmd: OwnshipCommand, horizon_n: int,
              th: SeparationThresholds | None = None, perf: Performance | None = None) -> Optional[int]:
    """First step i in 1..horizon_n at which a loss of well clear is projected, else None."""
    if horizon_n < 1:
        raise ValueError("horizon must be at least one step")
    th = th or SeparationThresholds()
    if not lowc_reachable(own, intr, horizon_n, th, abs(np.max(np.abs(own_cmd.vz))), np.max(own_cmd.v)):
        return None
    mask = lowc_mask(project_ownship(own, own_cmd, horizon_n, perf), project_intruder(intr, horizon_n), th)
    hits = np.flatnonzero(mask)
    return int(hits[0]) + 1 if hits.size else None


def advance(ac: AircraftState, cmd: OwnshipCommand | None = None, dt: float = 1.0,
            perf: Performance | None = None) -> AircraftState:
    """Advance one aircraft one step. ``cmd=None`` means constant turn rate (intruder)."""
    if cmd is None:
        x, y, h, v, psi, vz = (float(a[-1]) for a in project_intruder(ac, 1, dt))
        return AircraftState(x, y, h, v, psi, vz, ac.turn_rate)
    x, y, h, v, psi, vz = (float(np.ravel(a)[-1]) for a in project_ownship(ac, cmd, 1, perf, dt))
    return AircraftState(x, y, h, v, psi, vz, wrap_pi(psi - ac.heading) / dt)
