"""Barrier families, the second-order ansatz and their residuals.

Subsolution families (lower barriers) follow the five closed forms indexed by
the range of ``alpha``; the supersolution families (upper barriers) cover the
porous-medium range, the heat case and the fast-diffusion range.  Points are
passed with the coordinate axis first: ``x`` has shape ``(n, ...)``.

Exact derivatives of the ansatz (needed for the kinetic residual) come from
forward-mode automatic differentiation with jax in double precision; the
case (1) coefficients also have hand-derived closed forms that serve as a
cross-check.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .model import DELTA_FLOOR

FDE_SUPER_CRITICAL = "fde_super_critical_T_minus"
FDE_CRITICAL = "fde_critical"
FDE_SUBCRITICAL = "fde_subcritical_global"
HEAT = "heat_gaussian"
PME = "pme_separable"
SUPER_PME = "super_pme"
SUPER_HEAT = "super_heat"
SUPER_FDE = "super_fde"

SUB_CASES = (FDE_SUPER_CRITICAL, FDE_CRITICAL, FDE_SUBCRITICAL, HEAT, PME)
SUPER_CASES = (SUPER_PME, SUPER_HEAT, SUPER_FDE)
CASES = SUB_CASES + SUPER_CASES

_TOL = 1e-12


class BarrierError(ValueError):
    pass


def _compatible(case: str, n: int, alpha: float) -> str | None:
    """Reason the combination is invalid, or ``None``."""
    if n < 2:
        return "barrier families need n >= 2"
    crit = 2.0 / n
    if case == FDE_SUPER_CRITICAL:
        if not (crit < alpha <= 1):
            return f"case (1) needs alpha > 2/n = {crit:g} (and alpha <= 1)"
        if n < 3:
            return "case (1) needs n >= 3"
    elif case == FDE_CRITICAL:
        if abs(alpha - crit) > _TOL:
            return f"case (2) needs alpha = 2/n = {crit:g}"
    elif case == FDE_SUBCRITICAL:
        if not (0 < alpha < crit):
            return f"case (3) needs alpha in (0, 2/n) = (0, {crit:g})"
    elif case in (HEAT, SUPER_HEAT):
        if alpha != 0:
            return "Gaussian heat barriers need alpha = 0"
    elif case in (PME, SUPER_PME):
        if not (-1 <= alpha < 0):
            return "porous-medium barriers need alpha in [-1, 0)"
    elif case == SUPER_FDE:
        if not (0 < alpha <= 1):
            return "fast-diffusion supersolution needs alpha in (0, 1]"
    else:
        return f"unknown barrier case {case!r}"
    return None


def barrier_constants(case: str, n: int, alpha: float) -> dict:
    """Closed-form amplitude ``C_alpha`` and default speed/exponent constants."""
    why = _compatible(case, n, alpha)
    if why:
        raise BarrierError(why)
    out: dict = {"case": case, "n": n, "alpha": alpha}
    if case in (FDE_SUPER_CRITICAL, PME, SUPER_PME):
        ca_pow = 2 * n ** (alpha - 1) * (n - 2 / alpha)
        out.update(C_alpha_pow_alpha=ca_pow, C_alpha=ca_pow ** (1 / alpha))
        if case == FDE_SUPER_CRITICAL:
            threshold = (2 / alpha) / (n - 2 / alpha)
            out.update(c_min=1 + threshold, c=1 + 2 * threshold)
        elif case == SUPER_PME:
            out.update(c_min=1.0, c=2.0)
    elif case == FDE_SUBCRITICAL:
        ca_pow = 2 * n ** (alpha - 1) * (2 / alpha - n)
        out.update(C_alpha_pow_alpha=ca_pow, C_alpha=ca_pow ** (1 / alpha))
    elif case == FDE_CRITICAL:
        out.update(C_alpha=(1 / n ** (1 - alpha)) ** (1 / alpha))
    elif case == HEAT:
        out.update(c_hat=1.25, c_bar=1.5)
    else:
        out.update(c_hat=0.75, c_bar=1.0)
    return out


@dataclass(frozen=True)
class BarrierSpec:
    case: str
    n: int
    alpha: float
    R: float = 1.0
    T: float = 1.0
    c: float | None = None
    c_hat: float | None = None
    c_bar: float | None = None

    def __post_init__(self):
        consts = barrier_constants(self.case, self.n, self.alpha)
        if not (self.R > 0 and self.T > 0):
            raise BarrierError("R and T must be positive")
        if "c" in consts:
            if self.c is None:
                object.__setattr__(self, "c", consts["c"])
            if self.case == FDE_SUPER_CRITICAL and not self.c > consts["c_min"]:
                raise BarrierError(f"case (1) needs c > {consts['c_min']:g}")
            if self.case == SUPER_PME and not self.c > 1:
                raise BarrierError("super_pme needs c > 1")
        if "c_hat" in consts:
            if self.c_hat is None:
                object.__setattr__(self, "c_hat", consts["c_hat"])
            if self.c_bar is None:
                object.__setattr__(self, "c_bar", consts["c_bar"])
            if self.case == HEAT and not (self.c_bar > self.c_hat > 1):
                raise BarrierError("heat subsolution needs c_bar > c_hat > 1")
            if self.case in (SUPER_HEAT, SUPER_FDE) and not (0 < self.c_hat < 1 and self.c_bar > self.c_hat):
                raise BarrierError("Gaussian supersolution needs 0 < c_hat < 1 and c_bar > c_hat")

    @property
    def is_super(self) -> bool:
        return self.case in SUPER_CASES

    @property
    def C_alpha(self) -> float:
        return barrier_constants(self.case, self.n, self.alpha).get("C_alpha", float("nan"))

    @property
    def life_span(self) -> float:
        if self.case in (FDE_SUPER_CRITICAL, SUPER_PME):
            return self.T / self.c
        if self.case in (FDE_CRITICAL, FDE_SUBCRITICAL, SUPER_HEAT, SUPER_FDE):
            return self.T
        return math.inf

    @property
    def support_sq(self) -> float:
        """Squared support radius of the porous-medium subsolution (inf otherwise)."""
        if self.case == PME:
            return self.R**2 * self.T ** (2 / (2 - self.n * self.alpha))
        return math.inf

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **kw) -> "BarrierSpec":
        return replace(self, **kw)


def _check_time(spec: BarrierSpec, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t >= spec.life_span):
        raise BarrierError(f"t outside the life span [0, {spec.life_span:g}) of {spec.case}")


def _psi(spec: BarrierSpec, x, t, xp):
    """Barrier value; ``x`` has the coordinate axis first.  Works for numpy and jax.numpy."""
    n, a, R, T = spec.n, spec.alpha, spec.R, spec.T
    r2 = sum(x[k] ** 2 for k in range(n))
    case = spec.case
    if case in (FDE_SUPER_CRITICAL, SUPER_PME):
        return spec.C_alpha * ((T - spec.c * t) / (r2 + R**2)) ** (1 / a)
    if case == FDE_CRITICAL:
        return spec.C_alpha * (T / ((r2 + R**2 * xp.exp(4 * n * t / T)) * (t / T + 1))) ** (1 / a)
    if case == FDE_SUBCRITICAL:
        p = 4 / (2 - n * a)
        return spec.C_alpha * (T / (r2 + R**2 * (t + T) ** p)) ** (1 / a)
    if case == HEAT:
        return R**2 / (4 * math.pi * (t + T)) ** (0.5 * n * spec.c_bar) * xp.exp(-spec.c_hat * n * r2 / (4 * (t + T)))
    if case == PME:
        s = xp.maximum(spec.support_sq - r2, 0.0)
        return spec.C_alpha * (s / (t + T)) ** (-1 / a)
    return R**2 / (4 * math.pi * (T - t)) ** (0.5 * n * spec.c_bar) * xp.exp(spec.c_hat * n * r2 / (4 * (T - t)))


def psi_eval(spec: BarrierSpec, x, t):
    """Evaluate the barrier at points ``x`` (shape ``(n, ...)``) and times ``t``."""
    _check_time(spec, t)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != spec.n:
        raise ValueError("x must have the coordinate axis first")
    return _psi(spec, x, np.asarray(t, dtype=float), np)


def psi_field(spec: BarrierSpec, t: float):
    """Callable ``X -> Psi(X, t)`` for sampling on grids."""
    return lambda X: psi_eval(spec, X, t)


# ---------------------------------------------------------------------------
# residual of the limit equation


def _psi_derivatives(spec: BarrierSpec, x, t):
    """Closed-form ``(Psi, Psi_t, grad Psi, Laplacian Psi)`` for every family."""
    n, a, R, T = spec.n, spec.alpha, spec.R, spec.T
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    r2 = np.sum(x * x, axis=0)
    psi = _psi(spec, x, t, np)
    case = spec.case
    if case in (HEAT, SUPER_HEAT, SUPER_FDE):
        sgn = -1.0 if case == HEAT else 1.0
        tau = t + T if case == HEAT else T - t
        b = sgn * spec.c_hat * n / (4 * tau)  # Psi = amp(t) exp(b r^2)
        # d/dt of -(n c_bar/2) log(tau) + b r^2, with dtau/dt = -sgn
        dlog = sgn * 0.5 * n * spec.c_bar / tau + spec.c_hat * n * r2 / (4 * tau**2)
        grad = 2 * b * x * psi
        lap = (4 * b**2 * r2 + 2 * b * n) * psi
        return psi, dlog * psi, grad, lap
    # power families: Psi = C (P(t) / Q(x, t))^(1/a) with Q = q0 * r2 + q(t)
    if case in (FDE_SUPER_CRITICAL, SUPER_PME):
        P, dP = T - spec.c * t, -spec.c
        Q, dQ, qsign = r2 + R**2, 0.0, 1.0
    elif case == FDE_CRITICAL:
        e = np.exp(4 * n * t / T)
        P, dP = T / (t / T + 1), -1.0 / (t / T + 1) ** 2
        Q, dQ, qsign = r2 + R**2 * e, R**2 * e * 4 * n / T, 1.0
    elif case == FDE_SUBCRITICAL:
        p = 4 / (2 - n * a)
        P, dP = T, 0.0
        Q, dQ, qsign = r2 + R**2 * (t + T) ** p, R**2 * p * (t + T) ** (p - 1), 1.0
    else:  # PME, Q = S - r2 inside the support
        P, dP = t + T, 1.0
        Q, dQ, qsign = spec.support_sq - r2, 0.0, -1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        psi_t = psi / a * (dP / P - dQ / Q)
        # d/dx_k log Psi = -(1/a) * qsign * 2 x_k / Q
        g = -(1 / a) * qsign * 2 * x / Q
        grad = g * psi
        # Laplacian = Psi (|g|^2 + div g)
        div_g = -(1 / a) * qsign * (2 * n / Q - qsign * 4 * r2 / Q**2)
        lap = (np.sum(g * g, axis=0) + div_g) * psi
    if case == PME:
        outside = Q <= 0
        psi_t = np.where(outside, 0.0, psi_t)
        grad = np.where(outside, 0.0, grad)
        lap = np.where(outside, 0.0, lap)
    return psi, psi_t, grad, lap


def limit_operator(n: int, alpha: float, psi, psi_t, grad, lap):
    """``Psi_t - div(grad Psi / (n^(1-alpha) Psi^alpha))`` from pointwise derivatives."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        g2 = np.sum(grad * grad, axis=0)
        return psi_t - n ** (alpha - 1) * psi ** (-alpha) * (lap - alpha * g2 / psi)


def _displayed_residual(spec: BarrierSpec, x, t):
    """Per-family closed-form residual of the limit equation."""
    n, a, R, T = spec.n, spec.alpha, spec.R, spec.T
    r2 = np.sum(np.asarray(x, float) ** 2, axis=0)
    psi = _psi(spec, x, t, np)
    case = spec.case
    if case == FDE_SUPER_CRITICAL:
        q = r2 + R**2
        return (2 * psi ** (1 - a) / (a * n ** (1 - a) * q**2)
                * ((2 / a) * R**2 - (spec.c - 1) * (n - 2 / a) * q))
    if case == FDE_CRITICAL:
        e = R**2 * np.exp(4 * n * t / T)
        return -(2 * n * (T - t) / T * e / (r2 + e) + 1 / (t / T + 1)) * psi / (a * T)
    if case == FDE_SUBCRITICAL:
        e = R**2 * (t + T) ** (4 / (2 - n * a))
        return -(2 / (2 - n * a) * e / (r2 + e) * (T - t) / (T + t) + 1) * psi / (T * a)
    if case == HEAT:
        return -(spec.c_hat * (spec.c_hat - 1) / 2 * r2 / (t + T) ** 2
                 + (spec.c_bar - spec.c_hat) / (t + T)) * n * psi / 2
    if case == PME:
        S = spec.support_sq
        with np.errstate(divide="ignore", invalid="ignore"):
            val = (1 / a) * (2 / (2 - n * a)) * (S / (S - r2)) * psi / (t + T)
        return np.where(r2 < S, val, 0.0)
    if case == SUPER_PME:
        tau = T - spec.c * t
        return ((spec.c + n * a / (2 - n * a) - 2 / (2 - n * a) * r2 / (r2 + R**2))
                * (-psi) / (a * tau))
    if case == SUPER_HEAT:
        # the factor n matches the heat subsolution display and the direct derivative
        return (spec.c_hat * (1 - spec.c_hat) / 2 * r2 / (T - t) ** 2
                + (spec.c_bar - spec.c_hat) / (T - t)) * n * psi / 2
    return limit_operator(n, a, *_psi_derivatives(spec, x, t))


def _fd_weights(order: int):
    if order == 2:
        return [(-1, -0.5), (1, 0.5)], [(-1, 1.0), (0, -2.0), (1, 1.0)]
    if order == 4:
        d1 = [(-2, 1 / 12), (-1, -2 / 3), (1, 2 / 3), (2, -1 / 12)]
        d2 = [(-2, -1 / 12), (-1, 4 / 3), (0, -5 / 2), (1, 4 / 3), (2, -1 / 12)]
        return d1, d2
    raise ValueError("finite-difference order must be 2 or 4")


def _potential(alpha: float):
    """``Phi`` with ``grad Phi(Psi) = Psi^(-alpha) grad Psi``."""
    if alpha == 1:
        return np.log
    return lambda s: s ** (1 - alpha) / (1 - alpha)


def limit_residual(spec: BarrierSpec, x, t, mode: str = "closed_form", h: float = 1e-3, order: int = 4):
    """Residual ``Psi_t - div(grad Psi / (n^(1-alpha) Psi^alpha))`` at points ``(x, t)``.

    ``finite_difference`` differentiates ``psi_eval`` numerically, writing the
    flux as the gradient of ``Psi^(1-alpha)/(1-alpha)`` (``log Psi`` for
    alpha = 1) so that the porous-medium barrier is handled in the same way
    at its support boundary.
    """
    _check_time(spec, t)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if mode == "closed_form":
        return _displayed_residual(spec, x, t)
    if mode != "finite_difference":
        raise ValueError(f"unknown mode {mode!r}")
    d1, d2 = _fd_weights(order)
    n = spec.n
    phi = _potential(spec.alpha)
    f = lambda xx, tt: _psi(spec, xx, tt, np)
    with np.errstate(divide="ignore", invalid="ignore"):
        # one-sided in time near t = 0 is avoided by shifting the stencil forward
        t_c = np.maximum(t, (order // 2) * h)
        shift = t - t_c
        psi_t = sum(w * f(x, t_c + k * h) for k, w in d1) / h
        if order == 4:
            psi_tt = sum(w * f(x, t_c + k * h) for k, w in d2) / h**2
            psi_t = psi_t + shift * psi_tt
        lap_phi = 0.0
        for ax in range(n):
            e = np.zeros((n,) + (1,) * (x.ndim - 1))
            e[ax] = h
            lap_phi = lap_phi + sum(w * phi(f(x + k * e, t)) for k, w in d2) / h**2
    return psi_t - spec.n ** (spec.alpha - 1) * lap_phi


# ---------------------------------------------------------------------------
# expansion coefficients and ansatz


@dataclass
class ExpansionCoeffs:
    A: np.ndarray  # (2n, ...)
    B: np.ndarray  # (2n, ...)


def _case1_coeffs(spec: BarrierSpec, x, t):
    n, a, R = spec.n, spec.alpha, spec.R
    x = np.asarray(x, float)
    q = np.sum(x * x, axis=0) + R**2
    psi = _psi(spec, x, t, np)
    A = (2 * n**a / a) * x / q * psi ** (1 - a)
    B = (2 * n ** (2 * a) / a) * ((2 / a - 1) * x**2 / q - 1) * psi ** (1 - 2 * a) / q
    return np.concatenate([A, -A]), np.concatenate([B, B])


def _coeffs_from_derivatives(n, alpha, rho, grad, second):
    """``A_i, B_i`` from ``rho``, its gradient ``(n, ...)`` and pure second derivatives ``(n, ...)``."""
    w = (n / rho) ** alpha
    A = -w * grad
    B = w**2 * (second - 1.5 * alpha * grad**2 / rho)
    return np.concatenate([A, -A]), np.concatenate([B, B])


def expansion_coeffs(source, params=None, x=None, t=None, grid=None, closed_form: bool = True) -> ExpansionCoeffs:
    """Order-``eps`` and order-``eps^2`` coefficients of the ansatz.

    ``source`` is either a :class:`BarrierSpec` (evaluated at points ``x``,
    time ``t``; exact derivatives) or a positive density field on ``grid``
    (second-order centred differences, periodic wrap).  ``params`` supplies
    ``n`` and ``alpha`` in field mode.
    """
    if isinstance(source, BarrierSpec):
        spec = source
        _check_time(spec, t)
        x = np.asarray(x, dtype=float)
        if closed_form and spec.case == FDE_SUPER_CRITICAL:
            A, B = _case1_coeffs(spec, x, t)
            return ExpansionCoeffs(A, B)
        ad = _autodiff(spec)
        rho, grad, second = ad.rho_derivs(x, t)
        if np.any(rho <= DELTA_FLOOR):
            raise BarrierError("density touches the floor; coefficients undefined")
        return ExpansionCoeffs(*_coeffs_from_derivatives(spec.n, spec.alpha, rho, grad, second))
    rho = np.asarray(source, dtype=float)
    if grid is None or params is None:
        raise ValueError("field mode needs grid and params")
    if np.any(rho <= DELTA_FLOOR):
        raise BarrierError("density touches the floor; coefficients undefined")
    n = grid.n
    grads, seconds = [], []
    for a in range(n):
        up = np.roll(rho, -1, axis=a)
        dn = np.roll(rho, 1, axis=a)
        grads.append((up - dn) / (2 * grid.dx))
        seconds.append((up - 2 * rho + dn) / grid.dx**2)
    return ExpansionCoeffs(*_coeffs_from_derivatives(n, params.alpha, rho, np.stack(grads), np.stack(seconds)))


def ansatz_profile(spec: BarrierSpec, epsilon: float, x, t, coef: float | None = None, strict: bool = True):
    """``u_i = (Psi + eps A_i + eps^2 B_i) / 2n`` at points ``(x, t)``.

    With ``coef`` given, points outside the validity region are flagged:
    ``strict`` raises, otherwise they come back as NaN.
    """
    x = np.asarray(x, dtype=float)
    psi = psi_eval(spec, x, t)
    if epsilon == 0:
        return np.broadcast_to(psi / (2 * spec.n), (2 * spec.n,) + psi.shape).copy()
    co = expansion_coeffs(spec, x=x, t=t)
    u = (psi + epsilon * co.A + epsilon**2 * co.B) / (2 * spec.n)
    if coef is not None:
        inside = in_validity_region(spec, epsilon, x, t, coef)
        if not np.all(inside):
            if strict:
                raise BarrierError("ansatz requested outside its validity region")
            u = np.where(inside, u, np.nan)
    return u


def sandwich_margins(spec: BarrierSpec, epsilon: float, x, t):
    """``(min_i (u_i - Psi/4n), max_i (u_i - 3 Psi/4n))`` pointwise."""
    u = ansatz_profile(spec, epsilon, x, t)
    psi = psi_eval(spec, x, t)
    n = spec.n
    return np.min(u - psi / (4 * n), axis=0), np.max(u - 3 * psi / (4 * n), axis=0)


# ---------------------------------------------------------------------------
# kinetic residual


def kinetic_residual(profile, grid, dt: float, params, rate=None, order: int = 2):
    """Residual of the kinetic system for a profile sampled on a space-time lattice.

    ``profile`` has shape ``(nt, 2n, *grid.cells)`` at times spaced by ``dt``.
    Returns residuals at the interior times and cells, shape
    ``(nt - 2s, 2n, *[c - 2s for c in cells])`` with ``s = order // 2``.
    The collision term uses the power-sum rate of ``params.alpha`` unless a
    different ``rate`` is given.
    """
    from .interaction import RateSpec, collision_map

    u = np.asarray(profile, dtype=float)
    if np.any(u <= 0):
        raise BarrierError("kinetic residual needs a strictly positive profile")
    n = grid.n
    m = 2 * n
    rate = rate if rate is not None else RateSpec("power_sum", params.alpha)
    eps = params.epsilon
    s = order // 2
    d1, _ = _fd_weights(order)
    nt = u.shape[0]
    core_t = slice(s, nt - s)
    core_x = tuple(slice(s, c - s) for c in grid.cells)

    def shifted(arr, axis, k):
        # arr indexed over (time, comp, *space); take interior window moved by k along axis
        idx = [core_t, slice(None), *core_x]
        sl = idx[axis]
        idx[axis] = slice(sl.start + k, sl.stop + k)
        return arr[tuple(idx)]

    du_dt = sum(w * shifted(u, 0, k) for k, w in d1) / dt
    res = du_dt.copy()
    for i in range(m):
        ax = i % n
        sgn = 1.0 if i < n else -1.0
        grad = sum(w * shifted(u, 2 + ax, k)[:, i] for k, w in d1) / grid.dx
        res[:, i] += sgn * grad / eps
    core = u[(core_t, slice(None), *core_x)]
    coll = collision_map(rate, np.moveaxis(core, 1, 0))
    res -= np.moveaxis(coll, 0, 1) / (m * eps**2)
    return res


# ---------------------------------------------------------------------------
# validity regions


def _region_terms(spec: BarrierSpec, t):
    """``(offset_sq, time_factor)``: region is ``sqrt(|x|^2 + offset_sq) < coef/eps * time_factor``."""
    n, a, R, T = spec.n, spec.alpha, spec.R, spec.T
    case = spec.case
    if case in (FDE_SUPER_CRITICAL, SUPER_PME):
        return R**2, T - spec.c * t
    if case == FDE_CRITICAL:
        return R**2 * np.exp(4 * n * t / T), T
    if case == FDE_SUBCRITICAL:
        return R**2 * (t + T) ** (4 / (2 - n * a)), T
    if case == HEAT:
        return 0.0, t + T
    if case == PME:
        return spec.support_sq, t + T
    return 0.0, T - t


def validity_region(spec: BarrierSpec, epsilon: float, t, coef: float = 1.0):
    """Bound ``coef/eps * time_factor`` on the family's radial scale."""
    _check_time(spec, t)
    _, tf = _region_terms(spec, np.asarray(t, float))
    return coef / epsilon * tf


def validity_radius(spec: BarrierSpec, epsilon: float, t, coef: float = 1.0):
    """Largest ``|x|`` inside the validity region (0 when the region is empty)."""
    off, tf = _region_terms(spec, np.asarray(t, float))
    bound = coef / epsilon * tf
    r2 = np.maximum(bound**2 - off, 0.0)
    r = np.sqrt(r2)
    if spec.case == PME:
        r = np.minimum(r, math.sqrt(spec.support_sq))
    return r


def in_validity_region(spec: BarrierSpec, epsilon: float, x, t, coef: float):
    x = np.asarray(x, float)
    r = np.sqrt(np.sum(x * x, axis=0))
    return r < validity_radius(spec, epsilon, t, coef)


# ---------------------------------------------------------------------------
# Taylor remainder


def _binom(alpha: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= (alpha - j) / (j + 1)
    return out


def taylor_remainder_bound(a: float, b: float, epsilon: float, alpha: float) -> float:
    """Bound on ``|R_{a,b}(eps)|`` in ``(1 + a x + b x^2)^alpha = 1 + alpha a x + ... + R x^3``.

    Uses the worst case of ``(1 + a z + b z^2)`` over ``[1/2, 3/2]`` and
    ``|z| <= eps``; requires ``|a eps| + |b| eps^2 <= 1/2``.
    """
    if abs(a * epsilon) + abs(b) * epsilon**2 > 0.5:
        raise BarrierError("Taylor remainder bound needs |a eps| + |b| eps^2 <= 1/2")
    c3 = abs(_binom(alpha, 3))
    c2 = abs(_binom(alpha, 2))
    if c3 == 0 and c2 == 0:
        return 0.0
    base3 = max(0.5 ** (alpha - 3), 1.5 ** (alpha - 3))
    base2 = max(0.5 ** (alpha - 2), 1.5 ** (alpha - 2))
    s = abs(a) + 2 * abs(b) * epsilon
    return c3 * base3 * s**3 + 2 * c2 * base2 * s * abs(b)


# ---------------------------------------------------------------------------
# autodiff backend


class _AutoDiff:
    """Jitted exact derivatives of the barrier and of its ansatz."""

    def __init__(self, spec: BarrierSpec):
        import jax

        jax.config.update("jax_enable_x64", True)
        import jax.numpy as jnp

        self.spec = spec
        n, alpha = spec.n, spec.alpha

        def psi(x, t):
            return _psi(spec, x, t, jnp)

        grad_psi = jax.grad(psi, argnums=0)

        def second(x, t):
            H = jax.jacfwd(grad_psi, argnums=0)(x, t)
            return jnp.diagonal(H)

        def coeffs(x, t):
            rho = psi(x, t)
            g = grad_psi(x, t)
            w = (n / rho) ** alpha
            A = -w * g
            B = w**2 * (second(x, t) - 1.5 * alpha * g**2 / rho)
            return jnp.concatenate([A, -A]), jnp.concatenate([B, B])

        def ubar(x, t, eps):
            A, B = coeffs(x, t)
            return (psi(x, t) + eps * A + eps**2 * B) / (2 * n)

        def kin_res(x, t, eps):
            u = ubar(x, t, eps)
            du_dt = jax.jacfwd(ubar, argnums=1)(x, t, eps)
            du_dx = jax.jacfwd(ubar, argnums=0)(x, t, eps)  # (2n, n)
            # velocity i is +e_i for i < n and -e_(i-n) otherwise
            transport = jnp.concatenate([jnp.diagonal(du_dx[:n]), -jnp.diagonal(du_dx[n:])])
            tot = u[:, None] + u[None, :]
            coll = jnp.sum(tot**alpha * (u[None, :] - u[:, None]), axis=1)
            return du_dt + transport / eps - coll / (2 * n * eps**2)

        def rho_derivs(x, t):
            return psi(x, t), grad_psi(x, t), second(x, t)

        vm = lambda f, extra=(): jax.jit(jax.vmap(f, in_axes=(1, 0) + tuple(None for _ in extra), out_axes=-1))
        self._rho_derivs = vm(rho_derivs)
        self._ubar = vm(ubar, (0,))
        self._kin_res = vm(kin_res, (0,))

    @staticmethod
    def _flat(x, t):
        x = np.asarray(x, float)
        shape = x.shape[1:]
        xf = x.reshape(x.shape[0], -1)
        tf = np.broadcast_to(np.asarray(t, float), shape).reshape(-1)
        return xf, tf, shape

    def rho_derivs(self, x, t):
        xf, tf, shape = self._flat(x, t)
        rho, g, s = self._rho_derivs(xf, tf)
        n = self.spec.n
        return (np.asarray(rho).reshape(shape), np.asarray(g).reshape((n,) + shape),
                np.asarray(s).reshape((n,) + shape))

    def kinetic_residual(self, x, t, epsilon):
        xf, tf, shape = self._flat(x, t)
        r = self._kin_res(xf, tf, float(epsilon))
        return np.asarray(r).reshape((2 * self.spec.n,) + shape)

    def ubar(self, x, t, epsilon):
        xf, tf, shape = self._flat(x, t)
        return np.asarray(self._ubar(xf, tf, float(epsilon))).reshape((2 * self.spec.n,) + shape)


@lru_cache(maxsize=64)
def _autodiff(spec: BarrierSpec) -> _AutoDiff:
    return _AutoDiff(spec)


def ansatz_kinetic_residual(spec: BarrierSpec, epsilon: float, x, t):
    """Exact pointwise kinetic residual of the ansatz, shape ``(2n, ...)``."""
    _check_time(spec, t)
    return _autodiff(spec).kinetic_residual(x, t, epsilon)


# ---------------------------------------------------------------------------
# certification


@dataclass
class Certificate:
    case: str
    constants: dict
    epsilon: float | None
    region: dict
    samples: int
    max_residual: float
    certified_coefficient: float | None
    passed: bool
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=float)


def sample_points(spec: BarrierSpec, count: int, rng, t_fraction: float = 0.9,
                  radius=None, epsilon: float | None = None, coef: float | None = None):
    """Random ``(x, t)`` with ``t`` in the life span and ``x`` uniform in a ball.

    The ball radius is ``radius`` or, with ``epsilon``/``coef``, the validity
    radius at each sampled time; times whose validity region is empty are
    redrawn.  Porous-medium points stay strictly inside the support.
    """
    life = spec.life_span
    t_max = t_fraction * (life if math.isfinite(life) else spec.T)
    ts, rads = [], []
    have = 0
    for _ in range(200):
        t = rng.uniform(0.0, t_max, size=count)
        if coef is not None:
            rad = validity_radius(spec, epsilon, t, coef)
        else:
            rad = np.full(count, 3.0 * spec.R if radius is None else radius, dtype=float)
        if spec.case == PME:
            rad = np.minimum(rad, 0.98 * math.sqrt(spec.support_sq))
        keep = rad > 0
        ts.append(t[keep])
        rads.append(rad[keep])
        have += int(keep.sum())
        if have >= count:
            break
    if have < count:
        raise BarrierError("validity region is empty for (almost) every sampled time")
    t = np.concatenate(ts)[:count]
    rad = np.concatenate(rads)[:count]
    d = rng.normal(size=(spec.n, count))
    d /= np.linalg.norm(d, axis=0)
    r = rad * rng.uniform(0.0, 1.0, size=count) ** (1.0 / spec.n)
    return d * r, t


def certify_limit_sign(spec: BarrierSpec, samples: int = 10_000, seed: int = 0, slack: float = 1e-9,
                       radius=None) -> Certificate:
    """Check ``limit_residual <= slack`` (sub) or ``>= -slack`` (super) on random points."""
    rng = np.random.default_rng(seed)
    x, t = sample_points(spec, samples, rng, radius=radius)
    res = limit_residual(spec, x, t)
    worst = float(np.max(-res if spec.is_super else res))
    return Certificate(spec.case, spec.to_dict(), None,
                       {"kind": "ball", "radius": float(np.max(np.linalg.norm(x, axis=0))),
                        "t_max": float(np.max(t))},
                       samples, worst, None, worst <= slack)


def calibrate_validity(spec: BarrierSpec, epsilon: float, samples: int = 10_000, seed: int = 0,
                       start: float = 1.0, factor: float = 0.5, max_tries: int = 30,
                       slack: float = 0.0, t_fraction: float = 0.9) -> Certificate:
    """Shrink the validity coefficient until the ansatz is certified on random samples.

    Certification requires the exact kinetic residual to have the barrier's
    sign (``<= slack`` for subsolutions, ``>= -slack`` for supersolutions) and
    the sandwich ``Psi/4n <= u_i <= 3 Psi/4n`` at every sample.
    """
    ad = _autodiff(spec)
    coef = start
    notes = []
    worst = math.inf
    for _ in range(max_tries):
        rng = np.random.default_rng(seed)
        try:
            x, t = sample_points(spec, samples, rng, t_fraction=t_fraction, epsilon=epsilon, coef=coef)
        except BarrierError:
            notes.append(f"coef={coef:g}: validity region empty")
            break
        try:
            lo, hi = sandwich_margins(spec, epsilon, x, t)
        except BarrierError as exc:
            notes.append(f"coef={coef:g}: {exc}")
            coef *= factor
            continue
        sandwich_ok = bool(np.all(lo >= 0) and np.all(hi <= 0))
        res = ad.kinetic_residual(x, t, epsilon)
        signed = -res if spec.is_super else res
        worst = float(np.nanmax(signed))
        if worst <= slack and sandwich_ok and np.all(np.isfinite(res)):
            return Certificate(spec.case, spec.to_dict(), epsilon,
                               {"kind": "validity", "coefficient": coef, "t_fraction": t_fraction},
                               samples, worst, coef, True, notes)
        notes.append(f"coef={coef:g}: max signed residual {worst:.3g}, sandwich {'ok' if sandwich_ok else 'violated'}")
        coef *= factor
    return Certificate(spec.case, spec.to_dict(), epsilon, {"kind": "validity", "coefficient": coef},
                       samples, worst, None, False, notes)


def calibrate_super_radius(spec: BarrierSpec, samples: int = 10_000, seed: int = 0, growth: float = 2.0,
                           max_tries: int = 40, radius: float | None = None) -> tuple[BarrierSpec, Certificate]:
    """Grow ``R`` until the supersolution's limit residual is nonnegative on samples."""
    cur = spec
    cert = None
    for _ in range(max_tries):
        cert = certify_limit_sign(cur, samples, seed, slack=0.0, radius=radius)
        if cert.passed:
            return cur, cert
        cur = cur.with_(R=cur.R * growth)
    raise BarrierError(f"no admissible R found for {spec.case} after {max_tries} doublings")
