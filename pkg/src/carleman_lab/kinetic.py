"""Time integration of the kinetic system by lattice streaming and implicit collisions.

The step is locked to ``dt = eps * dx`` so that transport at speed ``1/eps``
moves every density exactly one cell per step.  Collisions are relaxed cell by
cell with backward Euler, solved by damped Newton iteration started from the
pre-collision state; since every Newton correction has zero component sum,
the per-cell mass is conserved up to rounding.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .interaction import RateSpec, collision_jacobian, collision_map
from .model import DELTA_FLOOR, FROZEN, PERIODIC, Grid, KineticState, ModelParams, Region, axis_and_sign

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
MAX_HALVINGS = 20


class CollisionError(RuntimeError):
    """Newton iteration failed even after the sub-step cascade."""


class DomainOfDependenceWarning(UserWarning):
    pass


class FarField:
    """Ghost values for the frozen far-field boundary.

    Holds, for every velocity, the slab of ghost cells on the upwind side of
    the grid, sampled once from the initial profile.
    """

    def __init__(self, grid: Grid, profile: Callable[[np.ndarray], np.ndarray]):
        self.grid = grid
        n = grid.n
        self.slabs = []
        for i in range(2 * n):
            a, s = axis_and_sign(n, i)
            axes = [grid.axis_centers(b) for b in range(n)]
            edge = grid.origin[a] - 0.5 * grid.dx if s > 0 else grid.origin[a] + (grid.cells[a] + 0.5) * grid.dx
            axes[a] = np.array([edge])
            X = np.stack(np.meshgrid(*axes, indexing="ij"))
            vals = np.asarray(profile(X), dtype=float)
            self.slabs.append(np.broadcast_to(vals[i], X.shape[1:]).copy())

    @classmethod
    def from_edges(cls, state: KineticState) -> "FarField":
        """Fallback: repeat the initial edge values outward."""
        obj = cls.__new__(cls)
        obj.grid = state.grid
        n = state.grid.n
        obj.slabs = []
        for i in range(2 * n):
            a, s = axis_and_sign(n, i)
            idx = 0 if s > 0 else -1
            obj.slabs.append(np.take(state.u[i], [idx], axis=a).copy())
        return obj


def step_size(params: ModelParams, grid: Grid) -> float:
    return params.epsilon * grid.dx


def stream_step(state: KineticState, params: ModelParams, far_field: FarField | None = None) -> KineticState:
    """Shift every density one cell along its velocity (exact transport over ``eps*dx``)."""
    g = state.grid
    n = g.n
    out = np.empty_like(state.u)
    for i in range(2 * n):
        a, s = axis_and_sign(n, i)
        if g.boundary == PERIODIC:
            out[i] = np.roll(state.u[i], s, axis=a)
            continue
        if far_field is None:
            raise ValueError("frozen_far_field boundary needs ghost values")
        src = state.u[i]
        dst = out[i]
        body = [slice(None)] * n
        head = [slice(None)] * n
        if s > 0:
            body[a], head[a] = slice(1, None), slice(0, 1)
            dst[tuple(body)] = src[tuple([slice(None)] * a + [slice(0, -1)])]
        else:
            body[a], head[a] = slice(0, -1), slice(-1, None)
            dst[tuple(body)] = src[tuple([slice(None)] * a + [slice(1, None)])]
        dst[tuple(head)] = far_field.slabs[i]
    return KineticState(out, g, state.t + step_size(params, g))


@dataclass
class RelaxStats:
    newton_iters_max: int = 0
    halvings: int = 0
    clips: int = 0


def _newton(u, h, rate, floor, stats):
    """Backward-Euler solve ``w = u + h A(w)`` for a batch of cells ``u`` (m, N).

    Returns the solution and a boolean mask of converged cells.
    """
    m, N = u.shape
    w = u.copy()
    scale = np.maximum(1.0, np.max(np.abs(u), axis=0))
    eye = np.eye(m)
    converged = np.zeros(N, bool)
    F = w - u - h * collision_map(rate, w, floor)
    res = np.max(np.abs(F), axis=0)
    for it in range(NEWTON_MAX_ITER + 1):
        converged = res <= NEWTON_TOL * scale
        if converged.all() or it == NEWTON_MAX_ITER:
            break
        act = np.flatnonzero(~converged)
        stats.newton_iters_max = max(stats.newton_iters_max, it + 1)
        wa = w[:, act]
        J = eye - h * collision_jacobian(rate, wa, floor)
        delta = np.linalg.solve(J, -F[:, act].T[..., None])[..., 0].T
        lam = np.ones(act.size)
        pending = np.ones(act.size, bool)
        trial = wa.copy()
        trial_F = F[:, act].copy()
        for _ in range(30):
            idx = np.flatnonzero(pending)
            if idx.size == 0:
                break
            cand = wa[:, idx] + lam[idx] * delta[:, idx]
            ok = np.all(cand >= 0.0, axis=0)
            cand_safe = np.where(ok, cand, wa[:, idx])
            cand_F = cand_safe - u[:, act[idx]] - h * collision_map(rate, cand_safe, floor)
            better = ok & (np.max(np.abs(cand_F), axis=0) <= np.maximum(res[act[idx]], NEWTON_TOL * scale[act[idx]]))
            # after a few halvings take any nonnegative iterate to avoid stalling
            accept = better | (ok & (lam[idx] < 2.0**-8))
            trial[:, idx[accept]] = cand_safe[:, accept]
            trial_F[:, idx[accept]] = cand_F[:, accept]
            pending[idx[accept]] = False
            lam[idx[~accept]] *= 0.5
        w[:, act] = trial
        F[:, act] = trial_F
        res[act] = np.max(np.abs(trial_F), axis=0)
    return w, converged


def _relax(u, h, rate, floor, stats, depth=0):
    w, ok = _newton(u, h, rate, floor, stats)
    if ok.all():
        return w
    if depth >= MAX_HALVINGS:
        bad = np.flatnonzero(~ok)
        raise CollisionError(
            f"Newton failed for {bad.size} cells after {MAX_HALVINGS} dt halvings; "
            f"first cell state {u[:, bad[0]].tolist()}, h={h:g}")
    stats.halvings = max(stats.halvings, depth + 1)
    bad = np.flatnonzero(~ok)
    half = _relax(u[:, bad], 0.5 * h, rate, floor, stats, depth + 1)
    w[:, bad] = _relax(half, 0.5 * h, rate, floor, stats, depth + 1)
    return w


def relax_cells(u, h: float, rate: RateSpec, floor: float | None = None, stats: RelaxStats | None = None):
    """Solve ``w = u + h * A(w)`` independently for each column of ``u``."""
    stats = stats if stats is not None else RelaxStats()
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise CollisionError(f"non-finite state in {int(np.sum(~np.isfinite(u).all(axis=0)))} cells")
    w = _relax(u, h, rate, floor, stats)
    neg = w < 0
    if neg.any():
        stats.clips += int(neg.sum())
        w = np.where(neg, 0.0, w)
    return w


def rate_floor(rate: RateSpec, floor: float = DELTA_FLOOR) -> float | None:
    return floor if rate.alpha < 0 else None


def collide_step(state: KineticState, params: ModelParams, rate: RateSpec, dt: float,
                 substeps: int = 1, floor: float = DELTA_FLOOR,
                 stats: RelaxStats | None = None) -> KineticState:
    """Backward-Euler relaxation of the collision term over ``dt``.

    ``substeps > 1`` splits ``dt`` into equal backward-Euler sub-steps.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = state.grid
    m = 2 * g.n
    h = dt / substeps / (m * params.epsilon**2)
    u = state.u.reshape(m, -1)
    fl = rate_floor(rate, floor)
    for _ in range(substeps):
        u = relax_cells(u, h, rate, fl, stats)
    return KineticState(u.reshape(state.u.shape), g, state.t)


@dataclass
class StepRecord:
    step: int
    t: float
    newton_iters_max: int
    mass: float
    min_u: float
    max_u: float
    clips: int = 0
    halvings: int = 0


@dataclass
class KineticRun:
    params: ModelParams
    rate: RateSpec
    grid: Grid
    dt: float
    snapshots: list[KineticState] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    substeps: int = 1

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def final(self) -> KineticState:
        return self.snapshots[-1]

    def max_mass_drift(self) -> float:
        m0 = self.steps[0].mass
        return max(abs(r.mass - m0) for r in self.steps) / abs(m0) if m0 else 0.0

    def bounds(self) -> tuple[float, float]:
        return min(r.min_u for r in self.steps), max(r.max_u for r in self.steps)

    def step_log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "t", "newton_iters_max", "mass", "min_u", "max_u"])
        for r in self.steps:
            w.writerow([r.step, repr(r.t), r.newton_iters_max, repr(r.mass), repr(r.min_u), repr(r.max_u)])
        return buf.getvalue()


def _mass(state: KineticState) -> float:
    return float(np.sum(state.u) * state.grid.cell_volume)


def auto_substeps(params: ModelParams, grid: Grid, target: float = 0.05) -> int:
    """Sub-steps that keep the per-sub-step relaxation number ``dt/eps^2`` below ``target``."""
    r = grid.dx / params.epsilon
    return max(1, math.ceil(r / target))


def _check_domain_of_dependence(grid: Grid, params: ModelParams, t_end: float, region: Region | None):
    if grid.boundary != FROZEN:
        return
    reach = t_end / params.epsilon
    lo = np.asarray(grid.origin)
    hi = lo + np.asarray(grid.lengths)
    if region is None:
        region = Region.interior(grid)
    c = np.asarray(region.center, dtype=float)
    gap = float(np.min(np.concatenate([c - region.radius - lo, hi - (c + region.radius)])))
    if gap < reach:
        warnings.warn(
            f"region of interest is {gap:.3g} from the frozen boundary but signals travel "
            f"{reach:.3g} by t={t_end:g}; boundary data may contaminate it",
            DomainOfDependenceWarning, stacklevel=3)


def snapshot_steps(times: Sequence[float], dt: float, nsteps: int) -> list[int]:
    """Map requested snapshot times onto step indices (must land on the step lattice)."""
    out = []
    for t in times:
        k = round(t / dt)
        if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"snapshot time {t} is not a multiple of dt={dt}")
        if not 0 <= k <= nsteps:
            raise ValueError(f"snapshot time {t} outside [0, t_end]")
        out.append(k)
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ValueError("snapshot times must be strictly increasing")
    return out


def advance(initial: KineticState, params: ModelParams, rate: RateSpec, t_end: float,
            snapshot_times: Sequence[float] | None = None, far_field: FarField | None = None,
            substeps: int | str = 1, floor: float = DELTA_FLOOR,
            region: Region | None = None) -> KineticRun:
    """Integrate from ``initial`` to ``t_end`` with stream-then-collide steps.

    ``t_end`` is rounded down to a whole number of steps ``dt = eps*dx``;
    snapshot times must fall on the step lattice.  ``substeps="auto"``
    sub-divides each collision so that ``dt/eps^2`` per sub-step stays small.
    """
    g = initial.grid
    if initial.t != 0.0:
        raise ValueError("advance starts from t = 0")
    dt = step_size(params, g)
    nsteps = int(math.floor(t_end / dt + 1e-9))
    if abs(nsteps * dt - t_end) > 1e-9 * max(1.0, t_end):
        log.warning("t_end=%g is not a multiple of dt=%g; stopping at %g", t_end, dt, nsteps * dt)
    if snapshot_times is None:
        snapshot_times = [0.0, nsteps * dt]
    snaps = snapshot_steps(snapshot_times, dt, nsteps)
    if substeps == "auto":
        substeps = auto_substeps(params, g)
    if g.boundary == FROZEN and far_field is None:
        far_field = FarField.from_edges(initial)
    _check_domain_of_dependence(g, params, nsteps * dt, region)

    run = KineticRun(params, rate, g, dt, substeps=int(substeps))
    state = initial.copy()
    run.steps.append(StepRecord(0, 0.0, 0, _mass(state), float(state.u.min()), float(state.u.max())))
    if snaps and snaps[0] == 0:
        run.snapshots.append(state.copy())
    next_snap = 1 if snaps and snaps[0] == 0 else 0
    for k in range(1, nsteps + 1):
        stats = RelaxStats()
        state = stream_step(state, params, far_field)
        state = collide_step(state, params, rate, dt, substeps=int(substeps), floor=floor, stats=stats)
        # keep the clock on the step lattice instead of accumulating dt
        state.t = k * dt
        run.steps.append(StepRecord(k, state.t, stats.newton_iters_max, _mass(state),
                                    float(state.u.min()), float(state.u.max()), stats.clips, stats.halvings))
        if next_snap < len(snaps) and snaps[next_snap] == k:
            run.snapshots.append(state.copy())
            next_snap += 1
    return run
