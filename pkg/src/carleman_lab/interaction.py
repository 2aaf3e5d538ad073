"""Interaction rates and the collision map.

All built-in rates are written in pairwise-flux form: the collision map is
``A(u)_i = sum_j F_ij`` with ``F_ij = k(u_j, u_i) (u_j - u_i)``, and ``F`` is
antisymmetric in floating point as well as in exact arithmetic.  That is what
makes per-cell mass conservation and the dissipativity certificate robust to
rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POWER_SUM = "power_sum"
MEAN_FIELD = "mean_field"
POWER_DIFFERENCE = "power_difference"
KINDS = (POWER_SUM, MEAN_FIELD, POWER_DIFFERENCE)


class SingularRateError(ValueError):
    """Negative-exponent rate evaluated at vacuum."""


@dataclass(frozen=True)
class RateSpec:
    kind: str = POWER_SUM
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown rate kind {self.kind!r}; expected one of {KINDS}")


def sgn_plus(a):
    """1 where ``a > 0`` and 0 elsewhere (ties map to 0)."""
    return (np.asarray(a) > 0).astype(float)


def _check_singular(total, alpha):
    if alpha < 0 and np.any(np.asarray(total) <= 0):
        raise SingularRateError("rate (a+b)^alpha with alpha < 0 is singular at a+b = 0; floor densities first")


def rate(spec: RateSpec, a, b, x=None, rho=None):
    """Interaction rate ``k(a, b)``.

    ``x`` is accepted for position-dependent rates and ignored by the
    built-in kinds.  ``mean_field`` needs the cell density ``rho``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("densities must be nonnegative")
    alpha = spec.alpha
    if spec.kind == POWER_SUM:
        total = a + b
        _check_singular(total, alpha)
        return total**alpha
    if spec.kind == MEAN_FIELD:
        if rho is None:
            raise ValueError("mean_field rate needs rho")
        rho = np.asarray(rho, dtype=float)
        _check_singular(rho, alpha)
        return np.broadcast_to(rho**alpha, np.broadcast(a, b).shape).copy()
    # divided difference of w(s) = s^(alpha+1); equals (alpha+1) a^alpha on the diagonal
    p = alpha + 1.0
    same = a == b
    _check_singular(np.where(same, a, 1.0), min(alpha, 0.0) if np.any(same) else 0.0)
    diff = np.where(same, 1.0, a - b)
    with np.errstate(divide="ignore", invalid="ignore"):
        off = (a**p - b**p) / diff
        diag = p * np.where(same, a, 1.0) ** alpha
    return np.where(same, diag, off)


def admissibility_bound(spec: RateSpec, lam: float, n: int = 1) -> float:
    """Smallest ``M`` with ``1/M <= k <= M`` on ``[1/lam, lam]^2``.

    Evaluated on the corners of the box, where each built-in rate attains its
    extremes (the rates are monotone in each argument).
    """
    if not lam >= 1:
        raise ValueError("lambda must be >= 1")
    corners = np.array([1.0 / lam, lam])
    a, b = np.meshgrid(corners, corners)
    rho = None
    if spec.kind == MEAN_FIELD:
        # the density seen by a pair ranges over 2n * [1/lam, lam]
        rho_range = np.array([2 * n / lam, 2 * n * lam])
        vals = rho_range**spec.alpha
    else:
        vals = rate(spec, a, b, rho=rho)
    kmin, kmax = float(np.min(vals)), float(np.max(vals))
    return max(kmax, 1.0 / kmin)


def _floored(u, floor):
    return u if floor is None else np.maximum(u, floor)


def pair_flux(spec: RateSpec, u, floor: float | None = None) -> np.ndarray:
    """Antisymmetric pair fluxes ``F[i, j] = k(u_j, u_i) (u_j - u_i)``.

    ``u`` has the velocity index on axis 0; the result has shape
    ``(2n, 2n, *u.shape[1:])``.  With ``floor`` the rate is evaluated on
    ``max(u, floor)`` while the differences use ``u`` itself.
    """
    u = np.asarray(u, dtype=float)
    ui = u[:, None]
    uj = u[None, :]
    diff = uj - ui
    uf = _floored(u, floor)
    alpha = spec.alpha
    if spec.kind == POWER_SUM:
        total = uf[:, None] + uf[None, :]
        _check_singular(total, alpha)
        return total**alpha * diff
    if spec.kind == MEAN_FIELD:
        rho = uf.sum(axis=0)
        _check_singular(rho, alpha)
        return rho**alpha * diff
    w = uf**(alpha + 1.0)
    return w[None, :] - w[:, None]


def collision_map(spec: RateSpec, u, floor: float | None = None) -> np.ndarray:
    """``A(u)_i = sum_j k(u_j, u_i)(u_j - u_i)`` without the ``1/(2n eps^2)`` prefactor."""
    F = pair_flux(spec, u, floor)
    out = F[:, 0].copy()
    for j in range(1, F.shape[1]):
        out += F[:, j]
    return out


def collision_jacobian(spec: RateSpec, u, floor: float | None = None) -> np.ndarray:
    """Jacobian ``dA_i/du_j``, shape ``(*u.shape[1:], 2n, 2n)``."""
    u = np.asarray(u, dtype=float)
    m = u.shape[0]
    uf = _floored(u, floor)
    alpha = spec.alpha
    if spec.kind == POWER_SUM:
        ui = uf[:, None]
        uj = uf[None, :]
        total = ui + uj
        _check_singular(total, alpha)
        k = total**alpha
        dk = alpha * total ** (alpha - 1.0) if alpha != 0 else np.zeros_like(total)
        diff = u[None, :] - u[:, None]
        # d/du_j [k(u_j,u_i)(u_j-u_i)] and d/du_i of the same term
        d_other = dk * diff + k
        d_self = dk * diff - k
        jac = d_other.copy()
        idx = np.arange(m)
        jac[idx, idx] = 0.0
        self_sum = d_self.sum(axis=1) - d_self[idx, idx]
        jac[idx, idx] = self_sum
    elif spec.kind == MEAN_FIELD:
        rho = uf.sum(axis=0)
        _check_singular(rho, alpha)
        # d/du_j [rho^a (rho - m u_i)] = a rho^(a-1) (rho - m u_i) + rho^a (1 - m delta_ij)
        jac = np.zeros((m, m, *u.shape[1:]))
        if alpha != 0:
            jac += (alpha * rho ** (alpha - 1.0) * (rho - m * u))[:, None]
        jac += rho**alpha
        idx = np.arange(m)
        jac[idx, idx] -= m * rho**alpha
    else:
        p = alpha + 1.0
        dw = p * uf**alpha
        jac = np.broadcast_to(dw[None, :], (m, m, *u.shape[1:])).copy()
        idx = np.arange(m)
        jac[idx, idx] = dw - m * dw
    return np.moveaxis(np.moveaxis(jac, 0, -1), 0, -1)


@dataclass
class DissipativityReport:
    max_violation: float
    worst_u: np.ndarray
    worst_v: np.ndarray
    samples: int
    tolerance: float

    @property
    def certified(self) -> bool:
        return self.max_violation <= self.tolerance


def dissipation_product(spec: RateSpec, u, v) -> np.ndarray:
    """``(A(u) - A(v)) . sgn+(u - v)`` for batches ``u, v`` of shape ``(2n, ...)``.

    Summed pairwise as ``sum_{i<j} G_ij (s_i - s_j)`` with ``G = F(u) - F(v)``;
    identical to the plain dot product in exact arithmetic, but pairs with
    equal signs cancel exactly instead of leaving rounding residue.
    """
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    G = pair_flux(spec, u) - pair_flux(spec, v)
    s = sgn_plus(u - v)
    m = u.shape[0]
    total = np.zeros(u.shape[1:])
    for i in range(m):
        for j in range(i + 1, m):
            total += G[i, j] * (s[i] - s[j])
    return total


def t_dissipativity_test(spec: RateSpec, n: int, samples: int = 100_000, box=(0.01, 100.0),
                         seed: int = 0, tolerance: float = 1e-12, chunk: int = 50_000) -> DissipativityReport:
    """Randomized search for violations of T-dissipativity on ``box^(2n)``.

    Chunks alternate between independent pairs and local pairs ``v = u(1 + 0.05 N)``.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    lo, hi = box
    if not 0 < lo < hi:
        raise ValueError("box must lie in (0, inf)")
    rng = np.random.default_rng(seed)
    m = 2 * n
    best = -np.inf
    worst_u = worst_v = None
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        u = rng.uniform(lo, hi, size=(m, k))
        if (done // chunk) % 2:
            # violations for super-linear rates live near the diagonal u ~ v
            v = np.clip(u * (1.0 + 0.05 * rng.standard_normal((m, k))), lo, hi)
        else:
            v = rng.uniform(lo, hi, size=(m, k))
        d = dissipation_product(spec, u, v)
        i = int(np.argmax(d))
        if d[i] > best:
            best = float(d[i])
            worst_u, worst_v = u[:, i].copy(), v[:, i].copy()
        done += k
    return DissipativityReport(best, worst_u, worst_v, samples, tolerance)
