"""Explicit finite-volume solver for the limit diffusion equation.

Solves ``rho_t = div(D(rho) grad rho)`` with ``D(rho) = n^(alpha-1) rho^(-alpha)``
on the same uniform grids as the kinetic solver.  The code path is kept fully
separate from the kinetic module so the two cannot share errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import DELTA_FLOOR, FROZEN, PERIODIC, Grid

CFL = 0.45


class LimitSolverError(RuntimeError):
    pass


def diffusivity(n: int, alpha: float, rho):
    """``D(rho) = 1 / (n k(rho/2n, rho/2n)) = n^(alpha-1) rho^(-alpha)`` for the power-sum rate."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("diffusivity needs rho > 0")
    return n ** (alpha - 1.0) * rho ** (-alpha)


@dataclass
class LimitSnapshot:
    t: float
    rho: np.ndarray


@dataclass
class LimitRun:
    n: int
    alpha: float
    grid: Grid
    snapshots: list[LimitSnapshot] = field(default_factory=list)
    dts: list[float] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def at(self, t: float) -> np.ndarray:
        for s in self.snapshots:
            if abs(s.t - t) <= 1e-9 * max(1.0, abs(t)):
                return s.rho
        raise KeyError(f"no limit snapshot at t={t}")


def _ghost_slabs(grid: Grid, rho0: np.ndarray, profile: Callable | None):
    """Frozen ghost values on both sides of every axis."""
    slabs = []
    for a in range(grid.n):
        pair = []
        for side in (0, 1):
            if profile is None:
                pair.append(np.take(rho0, [0 if side == 0 else -1], axis=a))
                continue
            axes = [grid.axis_centers(b) for b in range(grid.n)]
            edge = grid.origin[a] - 0.5 * grid.dx if side == 0 else grid.origin[a] + (grid.cells[a] + 0.5) * grid.dx
            axes[a] = np.array([edge])
            X = np.stack(np.meshgrid(*axes, indexing="ij"))
            pair.append(np.asarray(profile(X), dtype=float).reshape(X.shape[1:]))
        slabs.append(pair)
    return slabs


def _padded(rho, a, grid, slabs):
    if grid.boundary == PERIODIC:
        lo = np.take(rho, [-1], axis=a)
        hi = np.take(rho, [0], axis=a)
    else:
        lo, hi = slabs[a]
    return np.concatenate([lo, rho, hi], axis=a)


def _rhs(rho, grid, n, alpha, slabs, floor):
    out = np.zeros_like(rho)
    inv_dx2 = 1.0 / grid.dx**2
    for a in range(grid.n):
        p = _padded(rho, a, grid, slabs)
        D = n ** (alpha - 1.0) * np.maximum(p, floor) ** (-alpha)
        left = [slice(None)] * grid.n
        right = [slice(None)] * grid.n
        left[a], right[a] = slice(0, -1), slice(1, None)
        Dface = 0.5 * (D[tuple(left)] + D[tuple(right)])
        flux = Dface * (p[tuple(right)] - p[tuple(left)])  # on the cells+1 faces along axis a
        hi = [slice(None)] * grid.n
        lo = [slice(None)] * grid.n
        hi[a], lo[a] = slice(1, None), slice(0, -1)
        out += (flux[tuple(hi)] - flux[tuple(lo)]) * inv_dx2
    return out


def stable_dt(rho, grid: Grid, n: int, alpha: float, floor: float = DELTA_FLOOR, cfl: float = CFL) -> float:
    dmax = float(np.max(n ** (alpha - 1.0) * np.maximum(rho, floor) ** (-alpha)))
    return cfl * grid.dx**2 / (2 * grid.n * dmax)


def advance_limit(rho0, grid: Grid, n: int, alpha: float, t_end: float,
                  snapshot_times: Sequence[float] | None = None,
                  profile: Callable[[np.ndarray], np.ndarray] | None = None,
                  floor: float = DELTA_FLOOR, cfl: float = CFL) -> LimitRun:
    """March ``rho0`` to ``t_end`` with explicit Euler steps, landing exactly on snapshot times.

    ``profile`` supplies ghost values for the frozen far-field boundary
    (defaults to repeating the initial edge values).
    """
    rho = np.array(rho0, dtype=float)
    if rho.shape != grid.shape:
        raise ValueError("rho0 does not match grid")
    if np.any(rho < floor):
        raise ValueError("initial density must be >= the positivity floor")
    if snapshot_times is None:
        snapshot_times = [0.0, t_end]
    times = sorted(float(t) for t in snapshot_times)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("snapshot times must be strictly increasing")
    if times[-1] > t_end * (1 + 1e-12):
        raise ValueError("snapshot after t_end")
    slabs = _ghost_slabs(grid, rho, profile) if grid.boundary == FROZEN else None
    run = LimitRun(n, alpha, grid)
    t = 0.0
    min_dt = 1e-14 * max(t_end, 1.0)
    for target in times:
        while t < target - 1e-15 * max(1.0, target):
            dt = stable_dt(rho, grid, n, alpha, floor, cfl)
            if not dt > min_dt or not math.isfinite(dt):
                raise LimitSolverError(f"time step underflow (dt={dt:g}) at t={t:g}: diffusivity blew up")
            dt = min(dt, target - t)
            rho = rho + dt * _rhs(rho, grid, n, alpha, slabs, floor)
            t = t + dt
            run.dts.append(dt)
        t = target
        run.snapshots.append(LimitSnapshot(t, rho.copy()))
    return run
