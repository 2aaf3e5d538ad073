"""Quantitative checks on kinetic and limit runs.

Every verdict carries its tolerance and the extremal witness (where the
worst value occurred), so failures can be traced to a cell and a time.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .barriers import BarrierSpec, psi_eval
from .interaction import RateSpec, rate as rate_fn
from .kinetic import KineticRun
from .limit import LimitRun
from .model import Grid, KineticState, ModelParams, Region, TestCutoff, norm_on


class DiagnosticError(ValueError):
    pass


@dataclass
class Verdict:
    name: str
    value: float
    tolerance: float
    passed: bool
    witness: dict = field(default_factory=dict)


@dataclass
class DiagnosticsReport:
    series: dict = field(default_factory=dict)
    sweeps: dict = field(default_factory=dict)
    verdicts: list[Verdict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def add(self, verdict: Verdict) -> Verdict:
        self.verdicts.append(verdict)
        return verdict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _same_grid(a: Grid, b: Grid):
    if a != b:
        raise DiagnosticError("states live on different grids")


def _witness(arr: np.ndarray, flat_index: int, grid: Grid, t: float | None = None) -> dict:
    idx = np.unravel_index(flat_index, arr.shape)
    w = {"index": [int(i) for i in idx]}
    if arr.ndim == grid.n + 1:
        w["component"] = int(idx[0])
        idx = idx[1:]
    w["x"] = [float(grid.axis_centers(a)[i]) for a, i in enumerate(idx)]
    if t is not None:
        w["t"] = float(t)
    return w


# ---------------------------------------------------------------------------
# contraction and comparison


def positive_part_l1(u: KineticState, v: KineticState) -> float:
    """``sum_i int (u_i - v_i)^+``."""
    _same_grid(u.grid, v.grid)
    return float(np.sum(np.maximum(u.u - v.u, 0.0)) * u.grid.cell_volume)


def ordering_margin(u: KineticState, v: KineticState) -> float:
    """``min_i min_x (v_i - u_i)``; negative when the states cross."""
    _same_grid(u.grid, v.grid)
    return float(np.min(v.u - u.u))


def contraction_series(run_u: KineticRun, run_v: KineticRun) -> np.ndarray:
    if len(run_u.snapshots) != len(run_v.snapshots):
        raise DiagnosticError("runs have different snapshot schedules")
    return np.array([positive_part_l1(a, b) for a, b in zip(run_u.snapshots, run_v.snapshots)])


def contraction_verdict(run_u: KineticRun, run_v: KineticRun, tol: float = 1e-8) -> Verdict:
    s = contraction_series(run_u, run_v)
    jumps = np.diff(s)
    worst = float(np.max(jumps)) if jumps.size else 0.0
    k = int(np.argmax(jumps)) + 1 if jumps.size else 0
    return Verdict("l1_contraction", worst, tol, worst <= tol,
                   {"t": float(run_u.snapshots[k].t), "series": s.tolist()})


def ordering_verdict(run_u: KineticRun, run_v: KineticRun, tol: float = 1e-10) -> Verdict:
    worst, where = math.inf, {}
    for a, b in zip(run_u.snapshots, run_v.snapshots):
        d = b.u - a.u
        i = int(np.argmin(d))
        if d.flat[i] < worst:
            worst = float(d.flat[i])
            where = _witness(d, i, a.grid, a.t)
    return Verdict("ordering_margin", worst, tol, worst >= -tol, where)


# ---------------------------------------------------------------------------
# flux functionals


@dataclass
class FluxL2:
    plain: float
    weighted: float


def _pair_currents(u: np.ndarray, eps: float) -> np.ndarray:
    return (u[:, None] - u[None, :]) / eps


def flux_l2(run: KineticRun, phi: TestCutoff) -> FluxL2:
    """``int int sum_ij J_ij^2 phi^2`` and the same weighted by ``k(u_i, u_j)^2``."""
    if len(run.snapshots) < 2:
        raise DiagnosticError("flux_l2 needs at least two snapshots")
    g = run.grid
    if not phi.support_inside(g):
        raise DiagnosticError("cutoff support leaves the grid")
    w2 = phi.evaluate(g) ** 2
    plain, weighted = [], []
    for s in run.snapshots:
        J2 = _pair_currents(s.u, run.params.epsilon) ** 2
        k = rate_fn(run.rate, np.maximum(s.u[:, None], 0), np.maximum(s.u[None, :], 0), rho=s.rho)
        plain.append(float(np.sum(J2.sum(axis=(0, 1)) * w2) * g.cell_volume))
        weighted.append(float(np.sum((k**2 * J2).sum(axis=(0, 1)) * w2) * g.cell_volume))
    t = run.times
    return FluxL2(float(np.trapezoid(plain, t)), float(np.trapezoid(weighted, t)))


def entropy_series(run: KineticRun, phi: TestCutoff) -> np.ndarray:
    """``int sum_i log(u_i) phi^2`` at every snapshot (inspection only)."""
    w2 = phi.evaluate(run.grid) ** 2
    return np.array([float(np.sum(np.log(s.u).sum(axis=0) * w2) * run.grid.cell_volume) for s in run.snapshots])


def _centered_gradient(rho: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    return (np.roll(rho, -1, axis=axis) - np.roll(rho, 1, axis=axis)) / (2 * grid.dx)


def _edge_free(grid: Grid) -> np.ndarray:
    """Cells whose centred stencil stays inside the grid."""
    m = np.ones(grid.shape, bool)
    for a in range(grid.n):
        idx = [slice(None)] * grid.n
        idx[a] = [0, -1]
        m[tuple(idx)] = False
    return m


@dataclass
class FicksResult:
    residual: np.ndarray  # (n, *cells)
    norms: list[float]


def ficks_residual(state: KineticState, params: ModelParams, rate: RateSpec | None = None,
                   region: Region | None = None) -> FicksResult:
    """``(1/n) d_i rho + k(rho/2n, rho/2n) J_i`` and its L2 norm per axis on ``region``."""
    if np.any(state.u <= 0):
        raise DiagnosticError("Fick residual needs a strictly positive state")
    g = state.grid
    n = g.n
    rate = rate if rate is not None else RateSpec("power_sum", params.alpha)
    rho = state.rho
    half = rho / (2 * n)
    k = rate_fn(rate, half, half, rho=rho)
    J = (state.u[:n] - state.u[n:]) / params.epsilon
    res = np.stack([_centered_gradient(rho, g, a) / n + k * J[a] for a in range(n)])
    region = region if region is not None else Region.interior(g)
    mask = region.mask(g) & _edge_free(g)
    norms = [float(math.sqrt(np.sum(res[a][mask] ** 2) * g.cell_volume)) for a in range(n)]
    return FicksResult(res, norms)


# ---------------------------------------------------------------------------
# mass


def mass(state, grid: Grid | None = None) -> float:
    """Total mass ``int rho``; accepts a kinetic state or a density field with its grid."""
    if isinstance(state, KineticState):
        return float(np.sum(state.u) * state.grid.cell_volume)
    if grid is None:
        raise ValueError("density field needs its grid")
    return float(np.sum(state) * grid.cell_volume)


def mass_verdict(name: str, masses: Sequence[float], tol: float) -> Verdict:
    m = np.asarray(masses, float)
    drift = float(np.max(np.abs(m - m[0])) / abs(m[0])) if m[0] else 0.0
    return Verdict(name, drift, tol, drift <= tol, {"step": int(np.argmax(np.abs(m - m[0])))})


# ---------------------------------------------------------------------------
# diffusive limit


@dataclass
class SweepRow:
    epsilon: float
    error: float
    isotropy_gap: float
    error_time: float
    gap_time: float


@dataclass
class ConvergenceReport:
    rows: list[SweepRow]
    reference_norm: float
    error_decreasing: bool
    gap_decreasing: bool
    rates: list[float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "error", "isotropy_gap", "error_time", "gap_time"])
        for r in self.rows:
            w.writerow([repr(r.epsilon), repr(r.error), repr(r.isotropy_gap), repr(r.error_time), repr(r.gap_time)])
        return buf.getvalue()


def _strictly_decreasing(vals) -> bool:
    return all(b < a for a, b in zip(vals, vals[1:]))


def convergence_report(runs: Sequence[KineticRun], limit_run: LimitRun, region: Region | None = None,
                       skip_initial: bool = True) -> ConvergenceReport:
    """Sweep table of ``e(eps)`` and the isotropy gap, runs ordered by decreasing ``eps``.

    ``e(eps) = max_t sum_i ||u_i - rho_lim/2n||_{L1(K)}`` and the isotropy gap
    is ``max_t max_i ||u_i - rho_eps/2n||_{L1(K)}``, both over the shared
    snapshot times (``t = 0`` skipped by default, where both vanish by
    construction for isotropic data).
    """
    if not runs:
        raise DiagnosticError("no kinetic runs")
    g = runs[0].grid
    region = region if region is not None else Region.interior(g)
    times = limit_run.times
    rows = []
    for run in runs:
        _same_grid(run.grid, g)
        if len(run.times) != len(times) or not np.allclose(run.times, times, rtol=1e-9, atol=1e-12):
            raise DiagnosticError(f"snapshot schedule of eps={run.params.epsilon} does not match the limit run")
        n = g.n
        err, gap, te, tg = 0.0, 0.0, 0.0, 0.0
        for s, ls in zip(run.snapshots, limit_run.snapshots):
            if skip_initial and s.t == 0:
                continue
            e = norm_on(s.u - ls.rho / (2 * n), g, region)
            iso = max(norm_on(s.u[i] - s.rho / (2 * n), g, region) for i in range(2 * n))
            if e > err:
                err, te = e, s.t
            if iso > gap:
                gap, tg = iso, s.t
        rows.append(SweepRow(run.params.epsilon, err, gap, te, tg))
    eps = [r.epsilon for r in rows]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise DiagnosticError("runs must be ordered by strictly decreasing epsilon")
    ref = norm_on(limit_run.snapshots[0].rho, g, region)
    rates = []
    for a, b in zip(rows, rows[1:]):
        if a.error > 0 and b.error > 0:
            rates.append(math.log(a.error / b.error) / math.log(a.epsilon / b.epsilon))
        else:
            rates.append(float("nan"))
    return ConvergenceReport(rows, ref, _strictly_decreasing([r.error for r in rows]),
                             _strictly_decreasing([r.isotropy_gap for r in rows]), rates)


# ---------------------------------------------------------------------------
# barrier audit


@dataclass
class BarrierAudit:
    lower_margin: float | None
    upper_margin: float | None
    lower_witness: dict
    upper_witness: dict


def barrier_bound_audit(run: KineticRun, lower: BarrierSpec | None = None, upper: BarrierSpec | None = None,
                        region: Region | None = None, init_tol: float = 1e-12) -> BarrierAudit:
    """Track ``min (u_i - Psi/4n)`` and ``max (u_i - 3 Psibar/4n)`` on ``region``.

    The initial snapshot must satisfy ``u_i >= 3 Psi/4n`` and
    ``u_i <= Psibar/4n`` everywhere on the grid (relative tolerance
    ``init_tol``).  Snapshots outside the region's time window or the barrier's
    life span are skipped.
    """
    if not run.snapshots or run.snapshots[0].t != 0:
        raise DiagnosticError("audit needs the initial snapshot")
    g = run.grid
    n = g.n
    X = g.coordinates()
    region = region if region is not None else Region.interior(g)
    mask = region.mask(g)
    u0 = run.snapshots[0].u
    if lower is not None:
        gap = u0 - 0.75 / n * psi_eval(lower, X, 0.0)
        scale = np.maximum(np.abs(u0), 1.0)
        i = int(np.argmin(gap / scale))
        if gap.flat[i] < -init_tol * scale.flat[i]:
            raise DiagnosticError(f"initial data below 3/(4n) Psi at {_witness(gap, i, g, 0.0)}")
    if upper is not None:
        gap = 0.25 / n * psi_eval(upper, X, 0.0) - u0
        scale = np.maximum(np.abs(u0), 1.0)
        i = int(np.argmin(gap / scale))
        if gap.flat[i] < -init_tol * scale.flat[i]:
            raise DiagnosticError(f"initial data above Psibar/(4n) at {_witness(gap, i, g, 0.0)}")
    lo_m = hi_m = None
    lo_w, hi_w = {}, {}
    for s in run.snapshots:
        if not region.contains_time(s.t):
            continue
        if lower is not None and s.t < lower.life_span:
            d = (s.u - 0.25 / n * psi_eval(lower, X, s.t))[:, mask]
            i = int(np.argmin(d))
            if lo_m is None or d.flat[i] < lo_m:
                lo_m = float(d.flat[i])
                lo_w = {"t": float(s.t), "component": int(np.unravel_index(i, d.shape)[0])}
        if upper is not None and s.t < upper.life_span:
            d = (s.u - 0.75 / n * psi_eval(upper, X, s.t))[:, mask]
            i = int(np.argmax(d))
            if hi_m is None or d.flat[i] > hi_m:
                hi_m = float(d.flat[i])
                hi_w = {"t": float(s.t), "component": int(np.unravel_index(i, d.shape)[0])}
    return BarrierAudit(lo_m, hi_m, lo_w, hi_w)
