"""Parameters, grids, state containers, moments and region norms.

Fields are stored as numpy arrays with ``ij`` indexing: a scalar field on an
``n``-dimensional grid has shape ``grid.cells``; the kinetic state stacks the
``2n`` velocity densities along a leading axis, shape ``(2n, *grid.cells)``.
Velocity ``i < n`` moves along ``+e_i``, velocity ``i + n`` along ``-e_i``
(zero-based indices throughout the code).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PERIODIC = "periodic"
FROZEN = "frozen_far_field"
BOUNDARIES = (PERIODIC, FROZEN)

# shared positivity floor for rate evaluation and the limit solver
DELTA_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelParams:
    n: int
    alpha: float
    epsilon: float

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"dimension n must be 1, 2 or 3, got {self.n}")
        if not abs(self.alpha) <= 1.0:
            raise ValueError(f"|alpha| must be <= 1, got {self.alpha}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def n_velocities(self) -> int:
        return 2 * self.n

    def velocity(self, i: int) -> np.ndarray:
        return velocity(self.n, i)

    def with_epsilon(self, epsilon: float) -> "ModelParams":
        return ModelParams(self.n, self.alpha, epsilon)


def velocity(n: int, i: int) -> np.ndarray:
    """Unit velocity ``v_i``: ``+e_i`` for ``i < n`` and ``-e_{i-n}`` otherwise."""
    if not 0 <= i < 2 * n:
        raise IndexError(f"velocity index {i} out of range for n={n}")
    v = np.zeros(n)
    v[i % n] = 1.0 if i < n else -1.0
    return v


def axis_and_sign(n: int, i: int) -> tuple[int, int]:
    return i % n, (1 if i < n else -1)


@dataclass(frozen=True)
class Grid:
    n: int
    cells: tuple[int, ...]
    dx: float
    origin: tuple[float, ...]
    boundary: str = PERIODIC

    def __post_init__(self):
        if len(self.cells) != self.n or len(self.origin) != self.n:
            raise ValueError("cells and origin must have one entry per axis")
        if any(c < 4 for c in self.cells):
            raise ValueError(f"need at least 4 cells per axis, got {self.cells}")
        if not self.dx > 0:
            raise ValueError(f"dx must be positive, got {self.dx}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(c * self.dx for c in self.cells)

    @property
    def cell_volume(self) -> float:
        return self.dx**self.n

    @property
    def volume(self) -> float:
        return self.size * self.cell_volume

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.cells[axis]) + 0.5) * self.dx

    def coordinates(self) -> np.ndarray:
        """Cell-centre coordinates, shape ``(n, *cells)``."""
        axes = [self.axis_centers(a) for a in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def center(self) -> np.ndarray:
        return np.array([o + 0.5 * L for o, L in zip(self.origin, self.lengths)])


def make_grid(n: int, cells, dx, boundary: str = PERIODIC, origin=None) -> Grid:
    """Build a uniform grid.

    ``cells`` may be an int (same count on every axis) or a per-axis sequence.
    ``dx`` may be a scalar or a per-axis sequence, but all entries must agree:
    exact lattice streaming needs the same spacing on every axis.  ``origin``
    defaults to a grid centred on 0.
    """
    if np.isscalar(cells):
        cells = (int(cells),) * n
    cells = tuple(int(c) for c in cells)
    if np.isscalar(dx):
        spacing = float(dx)
    else:
        dxs = [float(d) for d in dx]
        if len(dxs) != n:
            raise ValueError("dx must have one entry per axis")
        if max(dxs) - min(dxs) > 1e-14 * max(dxs):
            raise ValueError(f"nonuniform spacing {dxs}: streaming requires equal dx on all axes")
        spacing = dxs[0]
    if origin is None:
        origin = tuple(-0.5 * c * spacing for c in cells)
    elif np.isscalar(origin):
        origin = (float(origin),) * n
    return Grid(n, cells, spacing, tuple(float(o) for o in origin), boundary)


@dataclass
class KineticState:
    u: np.ndarray
    grid: Grid
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        expected = (2 * self.grid.n, *self.grid.shape)
        if self.u.shape != expected:
            raise ValueError(f"state shape {self.u.shape} != {expected}")
        if self.t < 0:
            raise ValueError("time must be nonnegative")

    def copy(self) -> "KineticState":
        return KineticState(self.u.copy(), self.grid, self.t)

    @property
    def rho(self) -> np.ndarray:
        return self.u.sum(axis=0)

    @classmethod
    def isotropic(cls, rho: np.ndarray, grid: Grid, t: float = 0.0) -> "KineticState":
        """State with every component equal to ``rho / 2n``."""
        u = np.broadcast_to(np.asarray(rho) / (2 * grid.n), (2 * grid.n, *grid.shape))
        return cls(u.copy(), grid, t)


@dataclass
class MacroState:
    rho: np.ndarray
    rho_i: np.ndarray
    J: np.ndarray
    J_pair: np.ndarray


def moments(state: KineticState, params: ModelParams) -> MacroState:
    u = state.u
    n = state.grid.n
    eps = params.epsilon
    rho_i = u[:n] + u[n:]
    # sum pairs in fixed order so rho is reproducible bit for bit
    rho = rho_i[0].copy()
    for k in range(1, n):
        rho = rho + rho_i[k]
    J = (u[:n] - u[n:]) / eps
    J_pair = (u[:, None] - u[None, :]) / eps
    return MacroState(rho, rho_i, J, J_pair)


@dataclass(frozen=True)
class Region:
    """Ball ``B(center, radius)`` times the window ``[t0, t1]``."""

    center: tuple[float, ...]
    radius: float
    t0: float = 0.0
    t1: float = math.inf
    box: bool = False  # sup-norm ball (cube) instead of the Euclidean one

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("region radius must be positive")
        if self.t0 > self.t1:
            raise ValueError("region needs t0 <= t1")

    def mask(self, grid: Grid) -> np.ndarray:
        X = grid.coordinates()
        d = X - np.asarray(self.center, dtype=float).reshape((grid.n,) + (1,) * grid.n)
        if self.box:
            return np.max(np.abs(d), axis=0) <= self.radius
        return np.sqrt(np.sum(d * d, axis=0)) <= self.radius

    def contains_time(self, t: float) -> bool:
        return self.t0 <= t <= self.t1

    @classmethod
    def interior(cls, grid: Grid, fraction: float = 0.5, **kw) -> "Region":
        """Centred cube covering ``fraction`` of each axis length."""
        half = 0.5 * fraction * min(grid.lengths)
        return cls(tuple(grid.center()), half, box=True, **kw)


def norm_on(values, grid: Grid, region: Region | None = None, which: str = "L1") -> float:
    """Midpoint Riemann-sum norm over the cells inside ``region``.

    ``values`` is a field of shape ``grid.shape`` or a family of fields with
    leading axes; families are combined pointwise (sum of absolute values for
    L1, Euclidean for L2 and Linf) before integration.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[v.ndim - grid.n:] != grid.shape:
        raise ValueError("field shape does not match grid")
    v = v.reshape((-1, *grid.shape))
    mask = np.ones(grid.shape, bool) if region is None else region.mask(grid)
    if not mask.any():
        raise ValueError("region does not intersect the grid")
    if which == "L1":
        pointwise = np.abs(v).sum(axis=0)
        return float(np.sum(pointwise[mask]) * grid.cell_volume)
    if which == "L2":
        pointwise = (v * v).sum(axis=0)
        return float(math.sqrt(np.sum(pointwise[mask]) * grid.cell_volume))
    if which == "Linf":
        pointwise = np.sqrt((v * v).sum(axis=0))
        return float(np.max(pointwise[mask]))
    raise ValueError(f"unknown norm {which!r}")


@dataclass
class TestCutoff:
    """Compactly supported cutoff ``0 <= phi <= 1`` used as a test function."""

    __test__ = False  # not a pytest class

    kind: str
    radius: float
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("smooth_bump", "tensor_cosine"):
            raise ValueError(f"unknown cutoff kind {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("cutoff radius must be positive")

    def evaluate(self, grid: Grid) -> np.ndarray:
        c = grid.center() if self.center is None else np.asarray(self.center, float)
        X = grid.coordinates() - c.reshape((grid.n,) + (1,) * grid.n)
        if self.kind == "smooth_bump":
            s = np.sum(X * X, axis=0) / self.radius**2
            out = np.zeros(grid.shape)
            inside = s < 1.0
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
            return out
        out = np.ones(grid.shape)
        for a in range(grid.n):
            xa = np.abs(X[a]) / self.radius
            out *= np.where(xa < 1.0, np.cos(0.5 * np.pi * np.minimum(xa, 1.0)) ** 2, 0.0)
        return out

    def support_inside(self, grid: Grid) -> bool:
        c = grid.center() if self.center is None else np.asarray(self.center, float)
        lo = np.asarray(grid.origin)
        hi = lo + np.asarray(grid.lengths)
        return bool(np.all(c - self.radius >= lo) and np.all(c + self.radius <= hi))

