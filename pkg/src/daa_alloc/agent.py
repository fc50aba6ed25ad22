"""Control-allocation agent: wait/no-wait decision, safety metric, allocation and blending."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .geometry import (
    AircraftState,
    OwnshipCommand,
    Performance,
    RelativeState,
    SeparationThresholds,
    lowc_reachable,
    project_intruder,
    project_ownship,
    proj_lowc,
    separation_margins,
)
from .waitmap import WaitMap, lookup


class Axis(str, Enum):
    HORIZONTAL = "Horizontal"
    VERTICAL = "Vertical"
    NONE = "None"


class Direction(str, Enum):
    LEFT = "Left"
    RIGHT = "Right"
    UP = "Up"
    DOWN = "Down"
    NONE = "None"


class Source(str, Enum):
    PILOT = "Pilot"
    DAA = "DAA"
    BLENDED = "Blended"
    MAINTAIN = "MaintainCourse"


class Mode(str, Enum):
    WAIT = "Wait"
    ALLOCATE_DAA = "AllocateDAA"
    EXECUTE_PILOT = "ExecutePilot"
    EXECUTE_BLENDED = "ExecuteBlended"


class NoIntentError(ValueError):
    pass


_AXIS_DIRS = {
    Axis.HORIZONTAL: {Direction.LEFT, Direction.RIGHT},
    Axis.VERTICAL: {Direction.UP, Direction.DOWN},
    Axis.NONE: {Direction.NONE},
}


@dataclass(frozen=True)
class ManeuverCommand:
    axis: Axis = Axis.NONE
    direction: Direction = Direction.NONE
    target_heading: Optional[float] = None
    target_vz: Optional[float] = None
    target_speed: Optional[float] = None
    source: Source = Source.MAINTAIN

    def __post_init__(self):
        if self.direction not in _AXIS_DIRS[self.axis]:
            raise ValueError(f"direction {self.direction.value} inconsistent with axis {self.axis.value}")
        if self.axis is Axis.HORIZONTAL and self.target_heading is None:
            raise ValueError("horizontal maneuver needs a target heading")
        if self.axis is Axis.VERTICAL and self.target_vz is None:
            raise ValueError("vertical maneuver needs a target vertical rate")

    def course(self, own: AircraftState) -> OwnshipCommand:
        """Resolve unset targets by holding the ownship's current values."""
        return OwnshipCommand(
            own.v if self.target_speed is None else self.target_speed,
            own.heading if self.target_heading is None else self.target_heading,
            own.vz if self.target_vz is None else self.target_vz,
        )

    def as_source(self, source: Source) -> "ManeuverCommand":
        return replace(self, source=source)

    def label(self) -> str:
        if self.axis is Axis.HORIZONTAL:
            return f"{self.direction.value}@{math.degrees(self.target_heading):.1f}deg"
        if self.axis is Axis.VERTICAL:
            return f"{self.direction.value}@{self.target_vz:+.1f}mps"
        return "Hold"


@dataclass(frozen=True)
class PilotIntent:
    ax: Axis
    d: Direction

    def __post_init__(self):
        if self.ax is Axis.NONE or self.d not in _AXIS_DIRS[self.ax]:
            raise ValueError(f"inconsistent intent ({self.ax.value}, {self.d.value})")


@dataclass(frozen=True)
class AgentConfig:
    wait_threshold_s: float = 4.0
    projection_horizon_s: int = 10
    sm_horizon_s: Optional[int] = None  # defaults to projection_horizon_s

    @property
    def sm_horizon(self) -> int:
        return int(self.sm_horizon_s if self.sm_horizon_s is not None else self.projection_horizon_s)


@dataclass(frozen=True)
class AgentDecision:
    mode: Mode
    command: ManeuverCommand
    wait_remaining_s: Optional[float] = None
    blend_kind: Optional[str] = None

    def __post_init__(self):
        if self.mode is Mode.WAIT and self.command.source is not Source.MAINTAIN:
            raise ValueError("a Wait decision must maintain course")


HOLD = ManeuverCommand()


def eq17_wait(wait_seconds: float, projected_lowc: Optional[int], threshold: float) -> bool:
    """Wait iff the map grants at least ``threshold`` seconds and no LoWC is projected."""
    return wait_seconds >= threshold and projected_lowc is None


def wait_decision(wmap: WaitMap, s: RelativeState, own: AircraftState, intr: AircraftState,
                  cfg: AgentConfig, own_cmd: OwnshipCommand | None = None,
                  th: SeparationThresholds | None = None, perf: Performance | None = None) -> bool:
    """True for Wait, False for No Wait. ``s`` must be in the map's ownship frame."""
    _, wait_s = lookup(wmap, s)
    course = own_cmd or OwnshipCommand(own.v, own.heading, own.vz)
    return eq17_wait(wait_s, proj_lowc(own, intr, course, cfg.projection_horizon_s, th, perf),
                     cfg.wait_threshold_s)


def safety_metrics(cmds: Sequence[ManeuverCommand], own: AircraftState, intr: AircraftState,
                   cfg: AgentConfig, th: SeparationThresholds | None = None,
                   perf: Performance | None = None) -> np.ndarray:
    """Signed safety margins for several commands at once.

    For each command the ownship flies it for ``sm_horizon`` steps against a
    constant-turn intruder projection. At every step the margin is the
    largest of the three normalized LoWC margins (HMD, vertical, tau_mod), so
    it is positive unless all three conditions hold together; the metric is
    the minimum over the horizon.
    """
    th = th or SeparationThresholds()
    n = cfg.sm_horizon
    courses = [c.course(own) for c in cmds]
    batch = OwnshipCommand(
        np.array([c.v for c in courses]), np.array([c.heading for c in courses]), np.array([c.vz for c in courses])
    )
    if not lowc_reachable(own, intr, n, th, float(np.max(np.abs(batch.vz))), float(np.max(batch.v))):
        return np.full(len(courses), np.inf)
    m_h, m_v, m_t = separation_margins(project_ownship(own, batch, n, perf), project_intruder(intr, n), th)
    return np.min(np.maximum(np.maximum(m_h, m_v), m_t), axis=-1)


def safety_metric(u: ManeuverCommand, own: AircraftState, intr: AircraftState, cfg: AgentConfig,
                  th: SeparationThresholds | None = None, perf: Performance | None = None) -> float:
    return float(safety_metrics([u], own, intr, cfg, th, perf)[0])


def extract_intent(u_p: ManeuverCommand) -> PilotIntent:
    if u_p.axis is Axis.NONE:
        raise NoIntentError("command carries no maneuver axis")
    return PilotIntent(u_p.axis, u_p.direction)


def blend_with_kind(intent: PilotIntent, own: AircraftState, intr: AircraftState,
                    daa_candidates: Sequence[ManeuverCommand], cfg: AgentConfig,
                    th: SeparationThresholds | None = None, perf: Performance | None = None,
                    sm: np.ndarray | None = None) -> tuple[ManeuverCommand, str]:
    """Pick a safe DAA candidate honoring the pilot's intent.

    Candidates must be ordered least-deviating first. Returns the command and
    how it was found: 'exact' (axis and direction), 'axis', 'safe_fallback'
    (any safe candidate) or 'max_sm_fallback' (nothing safe).
    """
    if not daa_candidates:
        raise ValueError("blending needs at least one candidate")
    if sm is None:
        sm = safety_metrics(daa_candidates, own, intr, cfg, th, perf)
    safe = [c for c, m in zip(daa_candidates, sm) if m > 0]
    for kind, match in (
        ("exact", lambda c: c.axis is intent.ax and c.direction is intent.d),
        ("axis", lambda c: c.axis is intent.ax),
        ("safe_fallback", lambda c: True),
    ):
        for c in safe:
            if match(c):
                return c.as_source(Source.BLENDED), kind
    best = daa_candidates[int(np.argmax(sm))]
    return best.as_source(Source.BLENDED), "max_sm_fallback"


def blend(intent: PilotIntent, own: AircraftState, intr: AircraftState,
          daa_candidates: Sequence[ManeuverCommand], cfg: AgentConfig,
          th: SeparationThresholds | None = None, perf: Performance | None = None) -> ManeuverCommand:
    return blend_with_kind(intent, own, intr, daa_candidates, cfg, th, perf)[0]


CommandOrThunk = Union[ManeuverCommand, Callable[[], ManeuverCommand], None]


def allocate(pilot_cmd_received: bool, u_p: Optional[ManeuverCommand], u_daa: CommandOrThunk,
             wmap: Optional[WaitMap], s: Optional[RelativeState], own: AircraftState,
             intr: AircraftState, cfg: AgentConfig, *,
             hold: ManeuverCommand = HOLD,
             daa_candidates: Sequence[ManeuverCommand] = (),
             wait_seconds: Optional[float] = None,
             th: SeparationThresholds | None = None,
             perf: Performance | None = None) -> AgentDecision:
    """Command allocation for one decision instant.

    Without a pilot command the agent waits (holding ``hold``, the course of
    the previous pilot command) or hands authority to the DAA. With one, the
    pilot command runs if its safety metric is positive, otherwise it is
    blended with the DAA candidates. ``wait_seconds`` overrides the map lookup
    (constant-wait configurations); ``u_daa`` may be a zero-argument callable
    so the DAA is only consulted when needed.
    """
    if not pilot_cmd_received:
        if wait_seconds is None:
            if wmap is None or s is None:
                raise ValueError("a wait map and relative state are needed without an explicit wait time")
            wait_seconds = lookup(wmap, s)[1]
        projected = proj_lowc(own, intr, hold.course(own), cfg.projection_horizon_s, th, perf)
        if eq17_wait(wait_seconds, projected, cfg.wait_threshold_s):
            return AgentDecision(Mode.WAIT, hold.as_source(Source.MAINTAIN), wait_seconds)
        daa = u_daa() if callable(u_daa) else u_daa
        if daa is None:
            raise ValueError("No Wait decision without a DAA command")
        return AgentDecision(Mode.ALLOCATE_DAA, daa.as_source(Source.DAA), wait_seconds)

    if u_p is None:
        raise ValueError("pilot command flagged as received but missing")
    if safety_metric(u_p, own, intr, cfg, th, perf) > 0:
        return AgentDecision(Mode.EXECUTE_PILOT, u_p.as_source(Source.PILOT))
    cmd, kind = blend_with_kind(extract_intent(u_p), own, intr, daa_candidates, cfg, th, perf)
    return AgentDecision(Mode.EXECUTE_BLENDED, cmd, blend_kind=kind)
