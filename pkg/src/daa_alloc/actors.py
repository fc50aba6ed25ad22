"""DAA resolution model, remote-pilot model and latency channels."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np

from .agent import AgentConfig, Axis, Direction, ManeuverCommand, Source, safety_metrics
from .geometry import AircraftState, Performance, SeparationThresholds, wrap_2pi


def truncated_normal(rng: np.random.Generator, mean: float, sd: float,
                     lo: float = -math.inf, hi: float = math.inf, max_tries: int = 10000) -> float:
    """Rejection sample from a normal truncated to [lo, hi]."""
    if lo > hi:
        raise ValueError("empty truncation interval")
    if sd <= 0:
        return float(min(max(mean, lo), hi))
    for _ in range(max_tries):
        x = rng.normal(mean, sd)
        if lo <= x <= hi:
            return float(x)
    return float(min(max(mean, lo), hi))


# ---------------------------------------------------------------------------
# DAA


@dataclass(frozen=True)
class DaaModel:
    """Discrete resolution menu searched least-deviating first.

    Horizontal candidates are absolute headings at ``nominal +/- offset``
    (Left is counter-clockwise); vertical candidates hold the current heading
    and command a vertical rate.
    """

    heading_offsets_deg: tuple[float, ...] = (15.0, 30.0, 45.0, 60.0, 90.0)
    vz_options: tuple[float, ...] = (2.5, 5.0)
    prefer_right: bool = True
    resolution_horizon_s: Optional[int] = 40  # None: the onboard safety-metric horizon

    def candidates(self, nominal_heading: float = 0.0) -> list[ManeuverCommand]:
        horiz = []
        lr = (Direction.RIGHT, Direction.LEFT) if self.prefer_right else (Direction.LEFT, Direction.RIGHT)
        for off in sorted(self.heading_offsets_deg):
            for d in lr:
                sign = 1.0 if d is Direction.LEFT else -1.0
                horiz.append(ManeuverCommand(Axis.HORIZONTAL, d,
                                             target_heading=wrap_2pi(nominal_heading + sign * math.radians(off)),
                                             source=Source.DAA))
        vert = []
        for vz in sorted(self.vz_options):
            vert.append(ManeuverCommand(Axis.VERTICAL, Direction.UP, target_vz=vz, source=Source.DAA))
            vert.append(ManeuverCommand(Axis.VERTICAL, Direction.DOWN, target_vz=-vz, source=Source.DAA))
        return horiz + vert


def first_safe(cands: Sequence[ManeuverCommand], sm: np.ndarray) -> ManeuverCommand:
    """First candidate with positive safety metric, else the max-metric one."""
    for c, m in zip(cands, sm):
        if m > 0:
            return c
    return cands[int(np.argmax(sm))]


def daa_resolve(own: AircraftState, intr: AircraftState, model: DaaModel, cfg: AgentConfig,
                nominal_heading: float = 0.0, th: SeparationThresholds | None = None,
                perf: Performance | None = None) -> ManeuverCommand:
    cands = model.candidates(nominal_heading)
    if model.resolution_horizon_s is not None:
        cfg = replace(cfg, sm_horizon_s=model.resolution_horizon_s)
    return first_safe(cands, safety_metrics(cands, own, intr, cfg, th, perf)).as_source(Source.DAA)


# ---------------------------------------------------------------------------
# Pilot


@dataclass(frozen=True)
class PilotModel:
    reaction_mean_s: float = 3.0
    reaction_sd_s: float = 1.0
    reaction_min_s: float = 0.5
    scoring_horizon_s: Optional[int] = 40  # None: the onboard safety-metric horizon
    axis_order: tuple[str, ...] = ("Horizontal", "Vertical")
    direction_order: tuple[str, ...] = ("Right", "Left", "Up", "Down")

    def reaction_delay(self, rng: np.random.Generator) -> float:
        return truncated_normal(rng, self.reaction_mean_s, self.reaction_sd_s, lo=self.reaction_min_s)

    def order(self, cands: Sequence[ManeuverCommand]) -> list[ManeuverCommand]:
        """Pilot preference: axis, then direction, then smallest maneuver."""

        def size(c: ManeuverCommand) -> float:
            return abs(c.target_vz) if c.axis is Axis.VERTICAL else 0.0

        idx = {c: i for i, c in enumerate(cands)}
        return sorted(cands, key=lambda c: (self.axis_order.index(c.axis.value),
                                            self.direction_order.index(c.direction.value),
                                            size(c), idx[c]))


def pilot_choose(own_view: AircraftState, intr_view: AircraftState, model: PilotModel, daa: DaaModel,
                 cfg: AgentConfig, nominal_heading: float = 0.0, th: SeparationThresholds | None = None,
                 perf: Performance | None = None) -> ManeuverCommand:
    """The pilot's preferred safe maneuver on its picture (max-metric if none is safe)."""
    cands = model.order(daa.candidates(nominal_heading))
    if model.scoring_horizon_s is not None:
        cfg = replace(cfg, sm_horizon_s=model.scoring_horizon_s)
    return first_safe(cands, safety_metrics(cands, own_view, intr_view, cfg, th, perf)).as_source(Source.PILOT)


def pilot_respond(own_view: AircraftState, intr_view: AircraftState, t_now: float, model: PilotModel,
                  rng: np.random.Generator, daa: DaaModel, cfg: AgentConfig,
                  nominal_heading: float = 0.0, th: SeparationThresholds | None = None,
                  perf: Performance | None = None) -> tuple[ManeuverCommand, float]:
    """Pilot's maneuver choice on a (delayed) picture and the time it is issued."""
    cmd = pilot_choose(own_view, intr_view, model, daa, cfg, nominal_heading, th, perf)
    return cmd, t_now + model.reaction_delay(rng)


# ---------------------------------------------------------------------------
# Latency


@dataclass(frozen=True)
class LatencyConfig:
    mode: str = "constant"  # "constant" | "gaussian"
    constant_s: float = 4.0
    mean_s: float = 5.0
    sd_s: float = 3.0
    min_s: float = 0.2
    max_s: float = 10.0

    def __post_init__(self):
        if self.mode not in ("constant", "gaussian"):
            raise ValueError(f"unknown latency mode {self.mode!r}")
        if self.constant_s < 0 or self.min_s < 0 or self.min_s > self.max_s:
            raise ValueError("invalid latency bounds")

    def sample(self, rng: np.random.Generator) -> float:
        if self.mode == "constant":
            return self.constant_s
        return truncated_normal(rng, self.mean_s, self.sd_s, self.min_s, self.max_s)


@dataclass
class LatencyChannel:
    """One-way FIFO link; a message never overtakes an earlier one."""

    config: LatencyConfig
    rng: np.random.Generator
    queue: deque = field(default_factory=deque)
    last_deliver_at: float = -math.inf
    last_time: float = -math.inf
    sent: int = 0

    def _clock(self, t_now: float) -> None:
        if t_now < self.last_time:
            raise ValueError("channel time went backwards")
        self.last_time = t_now

    def send(self, payload: Any, t_now: float, delay: Optional[float] = None) -> float:
        self._clock(t_now)
        d = self.config.sample(self.rng) if delay is None else float(delay)
        if d < 0:
            raise ValueError("negative delay")
        at = max(t_now + d, self.last_deliver_at)
        self.last_deliver_at = at
        self.queue.append((at, payload))
        self.sent += 1
        return at

    def poll(self, t_now: float) -> list:
        self._clock(t_now)
        out = []
        while self.queue and self.queue[0][0] <= t_now + 1e-9:
            out.append(self.queue.popleft()[1])
        return out

    def __len__(self) -> int:
        return len(self.queue)
