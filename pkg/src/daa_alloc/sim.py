"""Closed-loop fast-time simulation of one encounter under an experiment group."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .actors import DaaModel, LatencyChannel, LatencyConfig, PilotModel, daa_resolve, pilot_respond
from .agent import AgentConfig, ManeuverCommand, Mode, Source, allocate, safety_metric, safety_metrics
from .encounters import EncounterSpec, TrajectoryPlan, build_trajectories, intruder_track
from .geometry import (
    FT,
    AircraftState,
    Performance,
    SeparationThresholds,
    advance,
    lowc_between,
    nmac_between,
    proj_lowc,
    relative_state,
    to_ownship_frame,
)
from .waitmap import WaitMap

# Modes beyond the agent's four
DAA_OVERRIDE = "DAAOverride"
RESUME = "Resume"
CRUISE = "Cruise"
HOLD_PILOT = "HoldPilot"


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GroupPreset:
    name: str
    setup: str  # "baseline" | "integrated"
    latency: LatencyConfig
    wait_source: str  # "none" | "constant" | "map"
    constant_wait_s: float = 0.0


GAUSSIAN = LatencyConfig("gaussian", mean_s=5.0, sd_s=3.0, min_s=0.2, max_s=10.0)
GROUPS: dict[str, GroupPreset] = {
    "B-1": GroupPreset("B-1", "baseline", LatencyConfig("constant", constant_s=4.0), "none"),
    "B-2": GroupPreset("B-2", "baseline", GAUSSIAN, "none"),
    "IC-1": GroupPreset("IC-1", "integrated", LatencyConfig("constant", constant_s=5.0), "constant", 5.0),
    "ID-1": GroupPreset("ID-1", "integrated", LatencyConfig("constant", constant_s=4.0), "map"),
    "ID-2": GroupPreset("ID-2", "integrated", GAUSSIAN, "map"),
}


@dataclass(frozen=True)
class SimConfig:
    group: str = "ID-2"
    dt: float = 1.0
    total_time: float = 240.0
    alert_horizon_s: int = 40
    pilot_timeout_s: float = 10.0
    seed: int = 0  # mixed with each encounter seed for the channel and pilot streams
    baseline_lock: bool = False  # baseline DAA keeps authority, dropping pilot messages, until its course is clear
    agent: AgentConfig = field(default_factory=AgentConfig)
    daa: DaaModel = field(default_factory=DaaModel)
    pilot: PilotModel = field(default_factory=PilotModel)
    thresholds: SeparationThresholds = field(default_factory=SeparationThresholds)
    perf: Performance = field(default_factory=Performance)

    def __post_init__(self):
        if self.group not in GROUPS:
            raise SimConfigError(f"unknown group {self.group!r}")
        if self.dt <= 0 or self.total_time <= 0:
            raise SimConfigError("dt and total time must be positive")
        if abs(self.total_time / self.dt - round(self.total_time / self.dt)) > 1e-9:
            raise SimConfigError("total time must be a whole number of steps")
        if self.seed < 0:
            raise SimConfigError("seed must be non-negative")
        if self.alert_horizon_s < 1:
            raise SimConfigError("alert horizon must be at least one step")

    @property
    def preset(self) -> GroupPreset:
        return GROUPS[self.group]

    @property
    def steps(self) -> int:
        return int(round(self.total_time / self.dt))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        kw = {}
        for key, typ in (("agent", AgentConfig), ("daa", DaaModel), ("pilot", PilotModel),
                         ("thresholds", SeparationThresholds), ("perf", Performance)):
            if key in d:
                sub = {k: tuple(v) if isinstance(v, list) else v for k, v in d.pop(key).items()}
                kw[key] = typ(**sub)
        return cls(**d, **kw)


TRACE_FLOAT = ("t", "own_x", "own_y", "own_h", "own_v", "own_psi", "own_vz",
               "intr_x", "intr_y", "intr_h", "intr_v", "intr_psi", "intr_vz", "intr_turn",
               "dx", "dy", "dh", "wait_s", "r_ft", "h_ft", "hmd_m", "tau_s", "vmd_m")
TRACE_STR = ("mode", "source", "command", "pilot_cmd", "blend_kind")
TRACE_BOOL = ("lowc", "nmac", "pilot_received")
TRACE_COLUMNS = TRACE_FLOAT + TRACE_STR + TRACE_BOOL


@dataclass
class EncounterLog:
    spec: EncounterSpec
    group: str
    plan: TrajectoryPlan
    trace: dict
    counters: dict
    summary: dict = field(default_factory=dict)

    @property
    def n_records(self) -> int:
        return len(self.trace["t"])


def step_geometry(own_tr, intr_tr, th: SeparationThresholds):
    """Per-step (hmd, tau_mod, vmd, range, |dh|) from state arrays (x, y, h, v, psi, vz)."""
    ox, oy, oh, ov, opsi, ovz = own_tr
    ix, iy, ih, iv, ipsi, ivz = intr_tr
    px, py, pz = ix - ox, iy - oy, ih - oh
    wx = iv * np.cos(ipsi) - ov * np.cos(opsi)
    wy = iv * np.sin(ipsi) - ov * np.sin(opsi)
    ww = wx * wx + wy * wy
    pw = px * wx + py * wy
    safe_ww = np.where(ww > 0, ww, 1.0)
    t = np.where(ww > 0, np.maximum(0.0, -pw / safe_ww), 0.0)
    miss = np.hypot(px + wx * t, py + wy * t)
    r = np.hypot(px, py)
    rr = np.where(r > 0, pw / np.where(r > 0, r, 1.0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(r <= th.dmod, 0.0,
                       np.where(rr < 0, (th.dmod ** 2 - r * r) / (r * np.where(rr < 0, rr, -1.0)), np.inf))
    vmd = np.abs(pz + (ivz - ovz) * t)
    return miss, tau, vmd, r, np.abs(pz)


@dataclass
class _Pilot:
    """Remote pilot state: its delayed picture, the command it streams, and a pending decision."""

    view: Optional[tuple] = None
    command: Optional[ManeuverCommand] = None
    pending: Optional[tuple] = None


class _Runner:
    def __init__(self, spec: EncounterSpec, cfg: SimConfig, wmap: Optional[WaitMap]):
        self.spec, self.cfg, self.wmap = spec, cfg, wmap
        self.preset = cfg.preset
        if self.preset.wait_source == "map" and wmap is None:
            raise SimConfigError(f"group {cfg.group} needs a wait map")
        self.plan = build_trajectories(spec, cfg.total_time)
        self.nominal = ManeuverCommand(target_heading=self.plan.nominal_heading, target_vz=0.0)
        self.cands = cfg.daa.candidates(self.plan.nominal_heading)
        up, down, pilot = (np.random.default_rng(s) for s in np.random.SeedSequence([cfg.seed, spec.seed]).spawn(3))
        self.uplink = LatencyChannel(self.preset.latency, up)
        self.downlink = LatencyChannel(self.preset.latency, down)
        self.pilot_rng = pilot

    def threats(self, own, intr, current: ManeuverCommand):
        """Alert-horizon projections on the current course and on the resume (nominal) course."""
        cfg = self.cfg
        now = proj_lowc(own, intr, current.course(own), cfg.alert_horizon_s, cfg.thresholds, cfg.perf)
        resume_course = self.nominal.course(own)
        if current.course(own) == resume_course:
            return now, now
        return now, proj_lowc(own, intr, resume_course, cfg.alert_horizon_s, cfg.thresholds, cfg.perf)

    def daa(self, own, intr) -> ManeuverCommand:
        return daa_resolve(own, intr, self.cfg.daa, self.cfg.agent, self.plan.nominal_heading,
                           self.cfg.thresholds, self.cfg.perf)

    def pilot_step(self, p: _Pilot, t: float) -> None:
        cfg = self.cfg
        for view in self.uplink.poll(t):
            p.view = view
        if p.pending is not None and p.pending[1] <= t + 1e-9:
            p.command, p.pending = p.pending[0], None
        if p.view is None:
            return
        vo, vi = p.view
        held = p.command or self.nominal
        now, resume = self.threats(vo, vi, held)
        if now is None and resume is None:
            p.command = p.pending = None
            return
        needs = p.command is None or safety_metric(p.command, vo, vi, cfg.agent, cfg.thresholds, cfg.perf) <= 0
        if needs and p.pending is None:
            p.pending = pilot_respond(vo, vi, t, cfg.pilot, self.pilot_rng, cfg.daa, cfg.agent,
                                      self.plan.nominal_heading, cfg.thresholds, cfg.perf)
        if p.command is not None:
            self.downlink.send(p.command, t)

    def run(self) -> EncounterLog:
        cfg, preset = self.cfg, self.preset
        baseline = preset.setup == "baseline"
        intr_track = intruder_track(self.plan, cfg.dt)
        own = self.plan.own0
        current = self.nominal
        pilot = _Pilot()
        lock = False
        waited = 0.0
        last_rx = None
        cnt = dict(messages_delivered=0, messages_dropped=0)
        rows = {k: [] for k in TRACE_COLUMNS}

        for k in range(cfg.steps + 1):
            t = k * cfg.dt
            intr = intr_track[k]
            self.uplink.send((own, intr), t)
            self.pilot_step(pilot, t)

            fresh = None
            msgs = self.downlink.poll(t)
            if msgs:
                if lock:
                    cnt["messages_dropped"] += len(msgs)
                else:
                    cnt["messages_delivered"] += len(msgs)
                    fresh = msgs[-1]

            now, resume = self.threats(own, intr, current)
            active = now is not None or resume is not None
            if baseline and lock and now is None:
                lock = False
            wait_s = math.nan
            blend_kind = ""

            if fresh is not None:
                waited = 0.0
                last_rx = t
                if baseline:
                    if safety_metric(fresh, own, intr, cfg.agent, cfg.thresholds, cfg.perf) > 0:
                        current, mode = fresh.as_source(Source.PILOT), Mode.EXECUTE_PILOT.value
                    else:
                        current, mode, lock = self.daa(own, intr), DAA_OVERRIDE, cfg.baseline_lock
                else:
                    dec = allocate(True, fresh, None, self.wmap, None, own, intr, cfg.agent,
                                   daa_candidates=self.cands, th=cfg.thresholds, perf=cfg.perf)
                    current, mode, blend_kind = dec.command, dec.mode.value, dec.blend_kind or ""
            elif active:
                if baseline:
                    current, mode, lock = self.daa(own, intr), Mode.ALLOCATE_DAA.value, cfg.baseline_lock
                else:
                    s = None
                    ws = None
                    if preset.wait_source == "constant":
                        ws = preset.constant_wait_s if waited + cfg.dt <= preset.constant_wait_s + 1e-9 else 0.0
                    else:
                        s = to_ownship_frame(relative_state(own, intr), own.heading)
                    dec = allocate(False, None, lambda: self.daa(own, intr), self.wmap, s, own, intr,
                                   cfg.agent, hold=current, wait_seconds=ws, th=cfg.thresholds, perf=cfg.perf)
                    wait_s = float(dec.wait_remaining_s)
                    current, mode = dec.command, dec.mode.value
                    if dec.mode is Mode.WAIT:
                        waited += cfg.dt
            else:
                lock, waited = False, 0.0
                pilot_owned = current.source in (Source.PILOT, Source.BLENDED) or (
                    current.source is Source.MAINTAIN and current != self.nominal and last_rx is not None)
                if current == self.nominal:
                    mode = CRUISE
                elif pilot_owned and last_rx is not None and t - last_rx < cfg.pilot_timeout_s:
                    # the pilot still has authority; keep its course until its stream lapses
                    current, mode = current.as_source(Source.MAINTAIN), HOLD_PILOT
                else:
                    current, mode = self.nominal, RESUME

            rel = relative_state(own, intr)
            for name, val in (
                ("t", t), ("own_x", own.x), ("own_y", own.y), ("own_h", own.h), ("own_v", own.v),
                ("own_psi", own.heading), ("own_vz", own.vz),
                ("intr_x", intr.x), ("intr_y", intr.y), ("intr_h", intr.h), ("intr_v", intr.v),
                ("intr_psi", intr.heading), ("intr_vz", intr.vz), ("intr_turn", intr.turn_rate),
                ("dx", rel.dx), ("dy", rel.dy), ("dh", rel.dh), ("wait_s", wait_s),
                ("mode", mode), ("source", current.source.value), ("command", current.label()),
                ("pilot_cmd", fresh.label() if fresh is not None else ""), ("blend_kind", blend_kind),
                ("lowc", lowc_between(own, intr, cfg.thresholds)),
                ("nmac", nmac_between(own, intr, cfg.thresholds)),
                ("pilot_received", fresh is not None),
            ):
                rows[name].append(val)

            if k < cfg.steps:
                own = advance(own, current.course(own), cfg.dt, cfg.perf)

        trace = {k: np.asarray(v) for k, v in rows.items() if v}
        own_tr = tuple(trace[f"own_{c}"] for c in ("x", "y", "h", "v", "psi", "vz"))
        intr_tr = tuple(trace[f"intr_{c}"] for c in ("x", "y", "h", "v", "psi", "vz"))
        miss, tau, vmd, r, adh = step_geometry(own_tr, intr_tr, cfg.thresholds)
        trace.update(hmd_m=miss, tau_s=tau, vmd_m=vmd, r_ft=r / FT, h_ft=adh / FT)
        log = EncounterLog(self.spec, cfg.group, self.plan, trace, cnt)
        from .metrics import summarize_log  # local import: metrics imports this module

        log.summary = summarize_log(log, cfg)
        return log


def run_encounter(spec: EncounterSpec, cfg: SimConfig, wait_map: Optional[WaitMap] = None) -> EncounterLog:
    return _Runner(spec, cfg, wait_map).run()


# ---------------------------------------------------------------------------
# Batches

_WORKER: dict = {}


def _init_worker(cfg_dict: dict, wait_map: Optional[WaitMap]) -> None:
    _WORKER["cfg"] = SimConfig.from_dict(cfg_dict)
    _WORKER["map"] = wait_map


def _run_chunk(args) -> list:
    group, specs = args
    cfg = SimConfig.from_dict({**_WORKER["cfg"].to_dict(), "group": group})
    return [run_encounter(s, cfg, _WORKER["map"]) for s in specs]


def run_batch(specs: Sequence[EncounterSpec], groups: Sequence[str], cfg: SimConfig,
              wait_map: Optional[WaitMap] = None, threads: int = 1,
              chunk: int = 25) -> dict[str, list[EncounterLog]]:
    """Run every group over the same encounter specs.

    Results are ordered by spec, whatever the worker count, so aggregates
    do not depend on scheduling.
    """
    for g in groups:
        if g not in GROUPS:
            raise SimConfigError(f"unknown group {g!r}")
        if GROUPS[g].wait_source == "map" and wait_map is None:
            raise SimConfigError(f"group {g} needs a wait map")
    out: dict[str, list[EncounterLog]] = {}
    if threads <= 1:
        for g in groups:
            gcfg = SimConfig.from_dict({**cfg.to_dict(), "group": g})
            out[g] = [run_encounter(s, gcfg, wait_map) for s in specs]
        return out
    jobs = [(g, list(specs[i:i + chunk])) for g in groups for i in range(0, len(specs), chunk)]
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                             initargs=(cfg.to_dict(), wait_map)) as ex:
        results = list(ex.map(_run_chunk, jobs))
    for g in groups:
        out[g] = []
    for (g, _), logs in zip(jobs, results):
        out[g].extend(logs)
    return out
