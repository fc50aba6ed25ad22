"""Discounted wait/evade MDP over the discretized relative state space.

The solver builds a sparse transition kernel for the Wait action, runs
synchronous value iteration against the zero-reward terminal Evade action,
and then derives a per-cell expected wait time: the mean number of Wait
steps before reaching loss of well clear, conditioned on reaching it within
``wait_horizon_cap`` seconds.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .geometry import (
    TWO_PI,
    IntruderDelta,
    OwnshipCommand,
    RelativeState,
    SeparationThresholds,
    StepLimits,
    Tag,
    is_lowc,
    range_and_rate,
    hmd,
    separation_margins,
    step_relative,
)

FORMAT_VERSION = 1
WAIT, EVADE = 0, 1


class MapError(Exception):
    pass


class MapCorruptError(MapError):
    pass


class MapDimensionError(MapError):
    pass


class MapVersionError(MapError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, value=None, action=None, residual=None):
        super().__init__(msg)
        self.value = value
        self.action = action
        self.residual = residual


# ---------------------------------------------------------------------------
# Grid


@dataclass(frozen=True)
class Dim:
    lo: float
    hi: float
    bins: int
    circular: bool = False

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.bins

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.bins) + 0.5) * self.width

    def snap(self, x):
        """Index of the nearest bin center; clamps (or wraps, if circular)."""
        k = np.floor((np.asarray(x, dtype=float) - self.lo) / self.width).astype(np.int64)
        if self.circular:
            return np.mod(k, self.bins)
        return np.clip(k, 0, self.bins - 1)

    def interp(self, x):
        """Linear interpolation between the two neighbouring centers.

        Returns (lower index, upper index, weight of upper index). Values past
        the outer centers clamp onto them unless the dimension is circular.
        """
        u = (np.asarray(x, dtype=float) - self.lo) / self.width - 0.5
        if self.circular:
            f = np.floor(u)
            i0 = np.mod(f, self.bins).astype(np.int64)
            return i0, np.mod(i0 + 1, self.bins), u - f
        if self.bins == 1:
            zero = np.zeros(np.shape(u), dtype=np.int64)
            return zero, zero, np.zeros(np.shape(u))
        u = np.clip(u, 0.0, self.bins - 1)
        i0 = np.minimum(np.floor(u), self.bins - 2).astype(np.int64)
        return i0, i0 + 1, u - i0


DIM_NAMES = ("dx", "dy", "dh", "vi", "vh", "theta_i")


@dataclass(frozen=True)
class StateGrid:
    dx: Dim = Dim(-1500.0, 1500.0, 12)
    dy: Dim = Dim(-1500.0, 1500.0, 12)
    dh: Dim = Dim(-200.0, 200.0, 4)
    vi: Dim = Dim(70.0, 300.0, 5)
    vh: Dim = Dim(-5.0, 5.0, 5)
    theta_i: Dim = Dim(0.0, TWO_PI, 5, circular=True)

    @property
    def dims(self) -> tuple[Dim, ...]:
        return tuple(getattr(self, n) for n in DIM_NAMES)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(d.bins for d in self.dims)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def out_cell(self) -> int:
        return self.n_cells

    @property
    def lowc_cell(self) -> int:
        return self.n_cells + 1

    @property
    def total_cells(self) -> int:
        return self.n_cells + 2

    def cell_centers(self) -> tuple[np.ndarray, ...]:
        """Center coordinates of every cell, flattened in row-major dx-outermost order."""
        mesh = np.meshgrid(*(d.centers for d in self.dims), indexing="ij")
        return tuple(m.ravel() for m in mesh)

    def center_state(self, cell: int) -> RelativeState:
        idx = np.unravel_index(cell, self.shape)
        vals = [float(d.centers[i]) for d, i in zip(self.dims, idx)]
        return RelativeState(*vals)

    def snap(self, dx, dy, dh, vi, vh, theta_i):
        idx = [d.snap(v) for d, v in zip(self.dims, (dx, dy, dh, vi, vh, theta_i))]
        return np.ravel_multi_index(idx, self.shape)

    def snap_state(self, s: RelativeState) -> int:
        return int(self.snap(s.dx, s.dy, s.dh, s.vi, s.vh, s.theta_i))

    @property
    def limits(self) -> StepLimits:
        return StepLimits(self.vi.lo, self.vi.hi, self.vh.lo, self.vh.hi)

    def to_dict(self) -> dict:
        return {n: asdict(getattr(self, n)) for n in DIM_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "StateGrid":
        return cls(**{n: Dim(**d[n]) for n in DIM_NAMES})


# ---------------------------------------------------------------------------
# Intruder motion model and configuration


@dataclass(frozen=True)
class IntruderMotionModel:
    vertical_rows: tuple = ((-5.0, 0.15), (-3.0, 0.20), (0.0, 0.30), (3.0, 0.20), (5.0, 0.15))
    horizontal_speed_rows: tuple = ((-10.0, 0.10), (-5.0, 0.15), (-2.5, 0.15), (0.0, 0.20),
                                    (2.5, 0.15), (5.0, 0.15), (10.0, 0.10))
    turn_rows: tuple = ((-5.0, 0.20), (-2.5, 0.20), (0.0, 0.20), (2.5, 0.20), (5.0, 0.20))  # deg/s
    class_mix: float = 0.5  # weight of the horizontal maneuver class
    turn_bias: float = 0.0  # deg/s added to every turn row

    def validate(self):
        for name in ("vertical_rows", "horizontal_speed_rows", "turn_rows"):
            rows = getattr(self, name)
            if not rows:
                raise ValueError(f"{name} is empty")
            total = math.fsum(p for _, p in rows)
            if abs(total - 1.0) > 1e-9 or any(p < 0 for _, p in rows):
                raise ValueError(f"{name} probabilities sum to {total}, expected 1")
        if not 0.0 <= self.class_mix <= 1.0:
            raise ValueError("class_mix must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {k: [list(r) for r in v] if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "IntruderMotionModel":
        kw = dict(d)
        for k in ("vertical_rows", "horizontal_speed_rows", "turn_rows"):
            if k in kw:
                kw[k] = tuple(tuple(float(x) for x in r) for r in kw[k])
        return cls(**kw)


@dataclass(frozen=True)
class MdpConfig:
    gamma: float = 0.95
    c1: float = 1220.0
    c2: float = 122.0
    c3: float = 1.0
    dt: float = 1.0
    own_v: float = 55.0
    own_heading: float = 0.0
    own_vz: float = 0.0
    convergence_tol: float = 1e-6
    max_sweeps: int = 20000
    wait_horizon_cap: float = 60.0
    reward_floor: float = 1.0  # m, guards the HMD and d_h divisions
    # dimensions whose next state is spread over neighbouring centers; the
    # rest snap to the nearest center
    interpolate: tuple = ("dx", "dy", "dh", "theta_i")
    thresholds: SeparationThresholds = SeparationThresholds()

    def validate(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"discount gamma must satisfy 0 < gamma < 1, got {self.gamma}")
        if self.dt <= 0 or self.wait_horizon_cap < self.dt:
            raise ValueError("dt must be positive and no larger than wait_horizon_cap")
        unknown = set(self.interpolate) - set(DIM_NAMES)
        if unknown:
            raise ValueError(f"unknown interpolation dimensions {sorted(unknown)}")

    @property
    def own_cmd(self) -> OwnshipCommand:
        return OwnshipCommand(self.own_v, self.own_heading, self.own_vz)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MdpConfig":
        kw = dict(d)
        if "thresholds" in kw:
            kw["thresholds"] = SeparationThresholds(**kw["thresholds"])
        if "interpolate" in kw:
            kw["interpolate"] = tuple(kw["interpolate"])
        return cls(**kw)


# ---------------------------------------------------------------------------
# Transitions and rewards


def enumerate_motions(model: IntruderMotionModel) -> list[tuple[IntruderDelta, float]]:
    """All intruder maneuvers with their probabilities (angular rates in rad/s)."""
    model.validate()
    out = []
    if model.class_mix > 0:
        for dv, pv in model.horizontal_speed_rows:
            for dth, pth in model.turn_rows:
                delta = IntruderDelta(dv, math.radians(dth + model.turn_bias), 0.0)
                out.append((delta, model.class_mix * pv * pth))
    if model.class_mix < 1:
        for dvh, ph in model.vertical_rows:
            delta = IntruderDelta(0.0, math.radians(model.turn_bias), dvh)
            out.append((delta, (1.0 - model.class_mix) * ph))
    return out


def reward(next_state: RelativeState, action: int, config: MdpConfig) -> float:
    if action == EVADE:
        return 0.0
    eps = config.reward_floor
    miss = max(hmd(next_state, config.own_cmd), eps)
    vert = max(abs(next_state.dh), eps)
    return -min(config.c1 / miss, config.c2 / vert) + config.c3 * config.dt


def _exits_diverging(grid: StateGrid, s: RelativeState, own_cmd) -> bool:
    horiz_out = not (grid.dx.lo <= s.dx <= grid.dx.hi and grid.dy.lo <= s.dy <= grid.dy.hi)
    vert_out = not grid.dh.lo <= s.dh <= grid.dh.hi
    if horiz_out and range_and_rate(s, own_cmd)[1] > 0:
        return True
    return vert_out and s.dh * s.vh > 0


def _spread_scalar(grid: StateGrid, s: RelativeState, interp_dims) -> list[tuple[int, float]]:
    """Neighbouring cells of a continuous state with their weights (scalar path)."""
    options = []
    for name, d in zip(DIM_NAMES, grid.dims):
        x = getattr(s, name)
        w = (d.hi - d.lo) / d.bins
        if name not in interp_dims:
            k = math.floor((x - d.lo) / w)
            options.append([(k % d.bins if d.circular else min(max(k, 0), d.bins - 1), 1.0)])
            continue
        u = (x - d.lo) / w - 0.5
        if d.circular:
            k = math.floor(u)
            options.append([(k % d.bins, 1.0 - (u - k)), ((k + 1) % d.bins, u - k)])
        elif d.bins == 1 or u <= 0.0:
            options.append([(0, 1.0)])
        elif u >= d.bins - 1:
            options.append([(d.bins - 1, 1.0)])
        else:
            k = math.floor(u)
            options.append([(k, 1.0 - (u - k)), (k + 1, u - k)])
    out = []
    for combo in itertools.product(*options):
        weight = math.prod(wt for _, wt in combo)
        if weight > 0.0:
            idx = 0
            for (k, _), d in zip(combo, grid.dims):
                idx = idx * d.bins + k
            out.append((idx, weight))
    return out


def transition_distribution(grid: StateGrid, cell: int, action: int, config: MdpConfig,
                            model: IntruderMotionModel) -> list[tuple[int, float]]:
    """Next-cell distribution for one cell, evaluated one motion at a time."""
    if not 0 <= cell < grid.n_cells:
        raise ValueError("virtual cells have no outgoing transitions")
    if action == EVADE:
        return [(grid.out_cell, 1.0)]
    s = grid.center_state(cell)
    acc: dict[int, float] = {}
    for delta, p in enumerate_motions(model):
        nxt = step_relative(s, config.own_cmd, delta, config.dt, grid.limits)
        if is_lowc(nxt, config.own_cmd, config.thresholds):
            targets = [(grid.lowc_cell, 1.0)]
        elif _exits_diverging(grid, nxt, config.own_cmd):
            targets = [(grid.out_cell, 1.0)]
        else:
            targets = _spread_scalar(grid, nxt, config.interpolate)
        for j, w in targets:
            acc[j] = acc.get(j, 0.0) + p * w
    return sorted(acc.items())


def expected_wait_reward(grid: StateGrid, cell: int, config: MdpConfig, model: IntruderMotionModel) -> float:
    s = grid.center_state(cell)
    return math.fsum(
        p * reward(step_relative(s, config.own_cmd, d, config.dt, grid.limits), WAIT, config)
        for d, p in enumerate_motions(model)
    )


@dataclass
class WaitKernel:
    """Wait-action kernel split into normal->normal, normal->LoWC and normal->Out parts."""

    P: sp.csr_matrix  # (n, n)
    p_lowc: np.ndarray  # (n,)
    p_out: np.ndarray  # (n,)
    reward: np.ndarray  # (n,) expected Wait reward


def _kernel_chunk(grid: StateGrid, config: MdpConfig, motions, lo: int, hi: int):
    centers = [c[lo:hi, None] for c in grid.cell_centers()]
    dx, dy, dh, vi, vh, th = centers
    dv = np.array([m.dv for m, _ in motions])[None, :]
    dth = np.array([m.dtheta for m, _ in motions])[None, :]
    dvh = np.array([m.dvh for m, _ in motions])[None, :]
    prob = np.array([p for _, p in motions])
    dt = config.dt
    own = config.own_cmd
    lim = grid.limits
    tht = config.thresholds

    def rel_vel(v, psi):
        psi = np.mod(psi + math.pi, TWO_PI) - math.pi
        ho = math.remainder(own.heading, TWO_PI)
        return v * np.cos(psi) - own.v * math.cos(ho), v * np.sin(psi) - own.v * math.sin(ho)

    vrx, vry = rel_vel(vi, th)
    shape = (dx.shape[0], prob.size)
    ndx = np.broadcast_to(dx + vrx * dt, shape)
    ndy = np.broadcast_to(dy + vry * dt, shape)
    ndh = np.broadcast_to(dh + vh * dt, shape)
    nvi = np.clip(vi + dv * dt, lim.vi_min, lim.vi_max)
    nvh = np.clip(vh + dvh * dt, lim.vh_min, lim.vh_max)
    nth = np.mod(th + dth * dt, TWO_PI)

    wx, wy = rel_vel(nvi, nth)
    ww = wx * wx + wy * wy
    pw = ndx * wx + ndy * wy
    tc = np.where(ww > 0, np.maximum(0.0, -pw / np.where(ww > 0, ww, 1.0)), 0.0)
    miss = np.hypot(ndx + wx * tc, ndy + wy * tc)
    r = np.hypot(ndx, ndy)
    rr = np.where(r > 0, pw / np.where(r > 0, r, 1.0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(r <= tht.dmod, 0.0,
                       np.where(rr < 0, (tht.dmod ** 2 - r * r) / (r * np.where(rr < 0, rr, -1.0)), np.inf))
    lowc = (np.abs(ndh) <= tht.dh_star) & (miss <= tht.hmd_star) & (tau >= 0) & (tau <= tht.tau_mod_star)
    horiz_out = (ndx < grid.dx.lo) | (ndx > grid.dx.hi) | (ndy < grid.dy.lo) | (ndy > grid.dy.hi)
    vert_out = (ndh < grid.dh.lo) | (ndh > grid.dh.hi)
    out = ~lowc & ((horiz_out & (rr > 0)) | (vert_out & (ndh * nvh > 0)))

    special = np.where(lowc, grid.lowc_cell, np.where(out, grid.out_cell, -1))
    options = []
    for name, d, x in zip(DIM_NAMES, grid.dims, (ndx, ndy, ndh, nvi, nvh, nth)):
        if name in config.interpolate:
            i0, i1, f = d.interp(x)
            options.append(((i0, 1.0 - f), (i1, f)))
        else:
            options.append(((d.snap(x), 1.0),))
    cells, weights = [], []
    for combo in itertools.product(*options):
        idx = np.ravel_multi_index(tuple(np.broadcast_to(k, shape) for k, _ in combo), grid.shape)
        wt = np.ones(shape)
        for _, f in combo:
            wt = wt * f
        cells.append(np.where(special >= 0, special, idx))
        weights.append(wt * prob)
    nxt = np.concatenate(cells, axis=1)
    wts = np.concatenate(weights, axis=1)

    eps = config.reward_floor
    rew = -np.minimum(config.c1 / np.maximum(miss, eps), config.c2 / np.maximum(np.abs(ndh), eps)) + config.c3 * dt
    exp_reward = rew @ prob
    rows = np.repeat(np.arange(lo, hi), nxt.shape[1])
    block = sp.csr_matrix((wts.ravel(), (rows - lo, nxt.ravel())), shape=(hi - lo, grid.total_cells))
    block.sum_duplicates()
    block.eliminate_zeros()
    return block, exp_reward


def build_wait_kernel(grid: StateGrid, model: IntruderMotionModel, config: MdpConfig,
                      threads: int = 1, chunk: int = 8192) -> WaitKernel:
    """Vectorized Wait-action kernel for every non-virtual cell."""
    config.validate()
    motions = enumerate_motions(model)
    n = grid.n_cells
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda b: _kernel_chunk(grid, config, motions, *b), bounds))
    else:
        parts = [_kernel_chunk(grid, config, motions, *b) for b in bounds]
    full = sp.vstack([p[0] for p in parts]).tocsr()
    rew = np.concatenate([p[1] for p in parts])
    P = full[:, :n].tocsr()
    p_out = np.asarray(full[:, grid.out_cell].todense()).ravel()
    p_lowc = np.asarray(full[:, grid.lowc_cell].todense()).ravel()
    return WaitKernel(P, p_lowc, p_out, rew)


# ---------------------------------------------------------------------------
# Solvers


def solve_values(P, wait_reward, gamma: float, tol: float = 1e-6, max_sweeps: int = 20000,
                 history: Optional[list] = None):
    """Jacobi value iteration for the two-action problem.

    ``P`` maps normal cells to normal cells under Wait (mass leaking to the
    terminal cells is implicit, their value is 0). Evade is worth exactly 0.
    Returns (value, action) with Evade winning ties.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"discount gamma must satisfy 0 < gamma < 1, got {gamma}")
    P = sp.csr_matrix(P)
    R = np.asarray(wait_reward, dtype=float)
    V = np.zeros_like(R)
    residual = math.inf
    for _ in range(max_sweeps):
        Vn = np.maximum(R + gamma * (P @ V), 0.0)
        residual = float(np.max(np.abs(Vn - V))) if V.size else 0.0
        V = Vn
        if history is not None:
            history.append(residual)
        if residual < tol:
            break
    q_wait = R + gamma * (P @ V)
    action = np.where(q_wait > 0.0, WAIT, EVADE).astype(np.int8)
    if residual >= tol:
        raise ConvergenceError(
            f"value iteration did not converge: residual {residual:.3e} after {max_sweeps} sweeps",
            V, action, residual)
    return V, action


def value_iterate(grid: StateGrid, model: IntruderMotionModel, config: MdpConfig,
                  kernel: WaitKernel | None = None, history: Optional[list] = None):
    config.validate()
    kernel = kernel or build_wait_kernel(grid, model, config)
    return solve_values(kernel.P, kernel.reward, config.gamma, config.convergence_tol,
                        config.max_sweeps, history)


def hitting_times(P, p_lowc, cap_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Conditional expected steps to LoWC over paths of length <= cap_steps.

    Returns (hit probability, conditional mean steps); cells that cannot reach
    LoWC within the cap get ``cap_steps`` as their mean.
    """
    P = sp.csr_matrix(P)
    b = np.asarray(p_lowc, dtype=float)
    h = np.zeros_like(b)
    g = np.zeros_like(b)
    for _ in range(int(cap_steps)):
        # g(s) = sum_s' P(s, s') [h(s') + g(s')], with h = 1, g = 0 at LoWC
        g = P @ (h + g) + b
        h = P @ h + b
    mean = np.full_like(b, float(cap_steps))
    hit = h > 0
    mean[hit] = np.minimum(g[hit] / h[hit], cap_steps)
    return h, mean


def wait_times(grid: StateGrid, model: IntruderMotionModel, config: MdpConfig,
               action=None, kernel: WaitKernel | None = None) -> np.ndarray:
    """Expected wait time in seconds for every non-virtual cell.

    Computed under the Wait kernel for all cells, so Evade-policy cells get a
    value too; ``action`` is accepted for interface symmetry only.
    """
    kernel = kernel or build_wait_kernel(grid, model, config)
    cap = int(round(config.wait_horizon_cap / config.dt))
    _, steps = hitting_times(kernel.P, kernel.p_lowc, cap)
    return steps * config.dt


# ---------------------------------------------------------------------------
# The map


@dataclass
class WaitMap:
    grid: StateGrid
    action: np.ndarray
    wait_time: np.ndarray
    value: np.ndarray
    motion_model: IntruderMotionModel = field(default_factory=IntruderMotionModel)
    config: MdpConfig = field(default_factory=MdpConfig)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.grid.n_cells
        for name in ("action", "wait_time", "value"):
            if np.shape(getattr(self, name)) != (n,):
                raise MapDimensionError(f"{name} has shape {np.shape(getattr(self, name))}, grid needs ({n},)")

    def cell_values(self, cell: int) -> tuple[int, float]:
        return int(self.action[cell]), float(self.wait_time[cell])

    def histogram(self, bin_width: float = 1.0) -> dict:
        """Wait-time histogram over transient cells.

        Cells whose center is already a loss of well clear and cells from
        which LoWC is never reached within the horizon cap are left out of
        the counts and reported separately; they would otherwise swamp the
        first and last bins.
        """
        w = self.wait_time
        in_lowc = center_lowc_mask(self.grid, self.config)
        capped = w >= self.config.wait_horizon_cap
        keep = ~in_lowc & ~capped
        wt = w[keep] if keep.any() else w
        edges = np.arange(0.0, wt.max() + bin_width + 1e-9, bin_width)
        counts, edges = np.histogram(wt, bins=edges)
        k = int(np.argmax(counts))
        return {
            "min_s": float(w.min()),
            "max_s": float(w.max()),
            "mean_s": float(w.mean()),
            "transient_mean_s": float(wt.mean()),
            "mode_band_s": [float(edges[k]), float(edges[k + 1])],
            "bin_width_s": bin_width,
            "counts": counts.tolist(),
            "edges": edges.tolist(),
            "n_transient_cells": int(keep.sum()),
            "n_center_lowc_cells": int(in_lowc.sum()),
            "n_capped_cells": int((capped & ~in_lowc).sum()),
            "n_wait_cells": int(np.sum(self.action == WAIT)),
            "n_evade_cells": int(np.sum(self.action == EVADE)),
        }


def center_lowc_mask(grid: StateGrid, config: MdpConfig) -> np.ndarray:
    """True for cells whose center state already satisfies the LoWC conditions."""
    dx, dy, dh, vi, vh, th_i = grid.cell_centers()
    own = config.own_cmd
    wx = vi * np.cos(th_i) - own.v * math.cos(own.heading)
    wy = vi * np.sin(th_i) - own.v * math.sin(own.heading)
    # stationary ownship at the origin, intruder carrying the relative velocity
    own_tr = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    intr_tr = (dx, dy, dh, np.hypot(wx, wy), np.arctan2(wy, wx), 0.0)
    m_h, m_v, m_t = separation_margins(own_tr, intr_tr, config.thresholds)
    return (m_h <= 0) & (m_v <= 0) & (m_t <= 0)


def build_map(grid: StateGrid | None = None, model: IntruderMotionModel | None = None,
              config: MdpConfig | None = None, threads: int = 1,
              history: Optional[list] = None) -> WaitMap:
    grid = grid or StateGrid()
    model = model or IntruderMotionModel()
    config = config or MdpConfig()
    config.validate()
    model.validate()
    kernel = build_wait_kernel(grid, model, config, threads=threads)
    value, action = value_iterate(grid, model, config, kernel, history)
    wait = wait_times(grid, model, config, action, kernel)
    meta = {
        "config_hash": _config_hash(grid, model, config),
        "built_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "sweeps": len(history) if history is not None else None,
    }
    return WaitMap(grid, action, wait, value, model, config, meta)


def lookup(wmap: WaitMap, s: RelativeState) -> tuple[int, float]:
    """Optimal action and wait time for a relative state in the map's ownship frame."""
    if s.tag is not Tag.NORMAL:
        raise ValueError("lookup needs a normal state")
    g = wmap.grid
    off = not (g.dx.lo <= s.dx <= g.dx.hi and g.dy.lo <= s.dy <= g.dy.hi)
    if off and range_and_rate(s, wmap.config.own_cmd)[1] > 0:
        return WAIT, float(wmap.config.wait_horizon_cap)
    return wmap.cell_values(g.snap_state(s))


# ---------------------------------------------------------------------------
# Serialization


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _config_hash(grid, model, config) -> str:
    return hashlib.sha256(_canonical([grid.to_dict(), model.to_dict(), config.to_dict()])).hexdigest()


def _payload(wmap: WaitMap) -> dict:
    cfg = wmap.config.to_dict()
    cfg["class_mix"] = wmap.motion_model.class_mix
    cfg["turn_bias"] = wmap.motion_model.turn_bias
    return {
        "format_version": FORMAT_VERSION,
        "grid": {"dims": wmap.grid.to_dict(), "order": list(DIM_NAMES)},
        "motion_model": wmap.motion_model.to_dict(),
        "config": cfg,
        "arrays": {
            "action": [int(a) for a in wmap.action],
            "wait_time_s": [float(w) for w in wmap.wait_time],
            "value": [float(v) for v in wmap.value],
        },
    }


def save_map(wmap: WaitMap, path) -> str:
    doc = _payload(wmap)
    digest = hashlib.sha256(_canonical(doc)).hexdigest()
    doc["content_hash"] = digest
    doc["metadata"] = {k: v for k, v in wmap.metadata.items()}
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))
    return digest


def load_map(path, expected_grid: StateGrid | None = None) -> WaitMap:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MapCorruptError(f"{path}: not a readable wait-map file ({exc})") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise MapCorruptError(f"{path}: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise MapVersionError(f"{path}: format version {doc['format_version']}, expected {FORMAT_VERSION}")
    try:
        stored_hash = doc.pop("content_hash")
        metadata = doc.pop("metadata", {})
        if hashlib.sha256(_canonical(doc)).hexdigest() != stored_hash:
            raise MapCorruptError(f"{path}: content hash mismatch")
        grid = StateGrid.from_dict(doc["grid"]["dims"])
        cfg = dict(doc["config"])
        cfg.pop("class_mix")
        cfg.pop("turn_bias")
        config = MdpConfig.from_dict(cfg)
        model = IntruderMotionModel.from_dict(doc["motion_model"])
        arrays = doc["arrays"]
        action = np.asarray(arrays["action"], dtype=np.int8)
        wait = np.asarray(arrays["wait_time_s"], dtype=float)
        value = np.asarray(arrays["value"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise MapCorruptError(f"{path}: malformed wait-map document ({exc})") from exc
    if expected_grid is not None and expected_grid != grid:
        raise MapDimensionError(f"{path}: grid {grid.shape} does not match expected {expected_grid.shape}")
    try:
        return WaitMap(grid, action, wait, value, model, config, metadata)
    except MapDimensionError as exc:
        raise MapCorruptError(f"{path}: {exc}") from exc


def grid_from_spec(spec: str | dict | None) -> StateGrid:
    """Grid preset name ('default', 'small') or a dict / JSON file of dims."""
    if spec is None or spec == "default":
        return StateGrid()
    if spec == "small":
        return StateGrid(Dim(-1500.0, 1500.0, 4), Dim(-1500.0, 1500.0, 4), Dim(-200.0, 200.0, 2),
                         Dim(70.0, 300.0, 2), Dim(-5.0, 5.0, 2), Dim(0.0, TWO_PI, 2, circular=True))
    if isinstance(spec, str):
        spec = json.loads(Path(spec).read_text())
    return StateGrid.from_dict(spec.get("dims", spec))


def mirror_cell_index(grid: StateGrid) -> np.ndarray:
    """Index of the (dy -> -dy, theta -> -theta) mirror of every cell."""
    idx = np.indices(grid.shape)
    ny, nt = grid.dy.bins, grid.theta_i.bins
    idx[1] = ny - 1 - idx[1]
    idx[5] = nt - 1 - idx[5]  # centers at (k+1/2)w mirror to (n-k-1/2)w
    return np.ravel_multi_index(tuple(idx), grid.shape).ravel()

