"""Initial-data recipes, barrier truncation and the existence-horizon estimate.

A recipe is a sum of nonnegative primitives.  Each primitive carries its
behaviour at infinity analytically (``f ~ coef * |x|^(-power)`` or
``log f ~ log_growth * |x|^2``), because tail limits cannot be read off a
finite grid.  Primitives flagged as L1 perturbations belong to ``g`` but not
to the reference envelope ``f``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .barriers import (FDE_CRITICAL, FDE_SUBCRITICAL, FDE_SUPER_CRITICAL, HEAT, PME, SUPER_FDE, SUPER_HEAT,
                       SUPER_PME, BarrierError, BarrierSpec, psi_eval)
from .model import Grid

DEFAULT_HORIZON_FRACTION = 0.25


@dataclass(frozen=True)
class Tail:
    """Asymptotics of a primitive: ``coef * |x|^(-power)`` and ``exp(log_growth |x|^2)``."""

    power: float = math.inf
    coef: float = 0.0
    log_growth: float = 0.0

    def limit(self, q: float) -> float:
        """``lim |x|^q f`` as ``|x| -> inf``."""
        if self.log_growth > 0:
            return math.inf
        if self.coef == 0:
            return 0.0
        if self.power == q:
            return self.coef
        return 0.0 if self.power > q else math.inf


def _radius2(X, center=None):
    if center is None:
        return np.sum(X * X, axis=0)
    c = np.asarray(center, float).reshape((X.shape[0],) + (1,) * (X.ndim - 1))
    return np.sum((X - c) ** 2, axis=0)


@dataclass(frozen=True)
class Constant:
    value: float
    kind: str = field(default="constant", init=False)

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("constant must be nonnegative")

    def evaluate(self, X):
        return np.full(X.shape[1:], float(self.value))

    def tail(self) -> Tail:
        return Tail(0.0, float(self.value)) if self.value > 0 else Tail()

    in_l1 = False


@dataclass(frozen=True)
class PowerTail:
    """``A / (|x|^2 + core^2)^(exponent/2)``."""

    A: float
    exponent: float
    core: float = 1.0
    kind: str = field(default="power_tail", init=False)

    def __post_init__(self):
        if self.A < 0 or not self.core > 0:
            raise ValueError("power_tail needs A >= 0 and core > 0")

    def evaluate(self, X):
        return self.A / (_radius2(X) + self.core**2) ** (0.5 * self.exponent)

    def tail(self) -> Tail:
        return Tail(float(self.exponent), float(self.A)) if self.A > 0 else Tail()

    in_l1 = False


@dataclass(frozen=True)
class GaussianBump:
    amplitude: float
    width: float
    center: tuple[float, ...] | None = None
    kind: str = field(default="gaussian_bump", init=False)

    def __post_init__(self):
        if self.amplitude < 0 or not self.width > 0:
            raise ValueError("gaussian_bump needs amplitude >= 0 and width > 0")

    def evaluate(self, X):
        return self.amplitude * np.exp(-_radius2(X, self.center) / (2 * self.width**2))

    def tail(self) -> Tail:
        return Tail()

    def l1_norm(self, n: int) -> float:
        return self.amplitude * (2 * math.pi * self.width**2) ** (n / 2)

    in_l1 = False


@dataclass(frozen=True)
class BarrierTrace:
    """``scale * Psi(x, 0)`` for a barrier family."""

    barrier: BarrierSpec
    scale: float = 1.0
    kind: str = field(default="barrier_trace", init=False)

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("barrier_trace scale must be nonnegative")

    def evaluate(self, X):
        return self.scale * psi_eval(self.barrier, X, 0.0)

    def tail(self) -> Tail:
        b = self.barrier
        if self.scale == 0 or b.case in (HEAT, PME):
            return Tail()
        if b.case in (SUPER_HEAT, SUPER_FDE):
            return Tail(log_growth=b.c_hat * b.n / (4 * b.T))
        # C (T / (|x|^2 + ...))^(1/alpha) ~ C T^(1/alpha) |x|^(-2/alpha) at t = 0
        if b.case in (FDE_SUPER_CRITICAL, FDE_CRITICAL, FDE_SUBCRITICAL, SUPER_PME):
            return Tail(2 / b.alpha, self.scale * b.C_alpha * b.T ** (1 / b.alpha))
        raise BarrierError(f"no tail rule for {b.case}")

    in_l1 = False


@dataclass(frozen=True)
class L1Perturbation:
    """Sum of Gaussian bumps with a total-mass budget; excluded from the envelope."""

    bumps: tuple[GaussianBump, ...]
    budget: float
    kind: str = field(default="l1_perturbation", init=False)

    def check(self, n: int):
        total = sum(b.l1_norm(n) for b in self.bumps)
        if total > self.budget * (1 + 1e-12):
            raise ValueError(f"l1_perturbation mass {total:g} exceeds budget {self.budget:g}")

    def evaluate(self, X):
        self.check(X.shape[0])
        out = np.zeros(X.shape[1:])
        for b in self.bumps:
            out += b.evaluate(X)
        return out

    def tail(self) -> Tail:
        return Tail()

    in_l1 = True


PRIMITIVES = {"constant": Constant, "power_tail": PowerTail, "gaussian_bump": GaussianBump,
              "barrier_trace": BarrierTrace, "l1_perturbation": L1Perturbation}


def primitive_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in PRIMITIVES:
        raise ValueError(f"unknown primitive {kind!r}")
    if kind == "barrier_trace":
        d["barrier"] = BarrierSpec(**d["barrier"])
    elif kind == "l1_perturbation":
        d["bumps"] = tuple(primitive_from_dict({"kind": "gaussian_bump", **b}) for b in d["bumps"])
    elif kind == "gaussian_bump" and d.get("center") is not None:
        d["center"] = tuple(d["center"])
    return PRIMITIVES[kind](**d)


def primitive_to_dict(p) -> dict:
    d = asdict(p)
    if isinstance(p, L1Perturbation):
        for b in d["bumps"]:
            b.pop("kind", None)
    return d


@dataclass(frozen=True)
class InitialDataSpec:
    """Per-component recipes ``g_i``; a single recipe is shared by all ``2n`` components."""

    components: tuple[tuple, ...]

    @classmethod
    def uniform(cls, *primitives) -> "InitialDataSpec":
        return cls((tuple(primitives),))

    def recipes(self, n: int) -> tuple[tuple, ...]:
        if len(self.components) == 1:
            return self.components * (2 * n)
        if len(self.components) != 2 * n:
            raise ValueError(f"need 1 or {2 * n} component recipes, got {len(self.components)}")
        return self.components

    def envelope_tails(self, n: int) -> list[list[Tail]]:
        return [[p.tail() for p in r if not p.in_l1] for r in self.recipes(n)]

    def to_dict(self) -> dict:
        return {"components": [[primitive_to_dict(p) for p in r] for r in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialDataSpec":
        comps = d["components"]
        if not comps:
            raise ValueError("initial data needs at least one component recipe")
        return cls(tuple(tuple(primitive_from_dict(p) for p in r) for r in comps))


def tail_limit(tails: list[Tail], q: float) -> float:
    """``lim |x|^q f`` for ``f`` the sum of primitives with the given tails."""
    return float(sum(t.limit(q) for t in tails))


def log_growth(tails: list[Tail]) -> float:
    return max((t.log_growth for t in tails), default=0.0)


def admissibility_errors(spec: InitialDataSpec, n: int, alpha: float) -> list[str]:
    """Violations of the envelope conditions at infinity for ``(n, alpha)``."""
    errs = []
    q = 2 / alpha if alpha != 0 else math.inf
    for i, tails in enumerate(spec.envelope_tails(n)):
        if 2 / n <= alpha <= 1 and not tail_limit(tails, q) > 0:
            errs.append(f"component {i}: envelope decays faster than |x|^(-2/alpha) = |x|^(-{q:g})")
        if 0 <= alpha <= 1 and math.isinf(log_growth(tails)):
            errs.append(f"component {i}: envelope grows faster than exp(C|x|^2)")
        if -1 <= alpha < 0 and math.isinf(tail_limit(tails, q)):
            errs.append(f"component {i}: envelope grows faster than |x|^(2/|alpha|)")
    return errs


def build(spec: InitialDataSpec, grid: Grid, alpha: float | None = None) -> np.ndarray:
    """Sample every component recipe at cell centres, shape ``(2n, *cells)``.

    With ``alpha`` given, the recipe must satisfy the envelope conditions.
    """
    n = grid.n
    if alpha is not None:
        errs = admissibility_errors(spec, n, alpha)
        if errs:
            raise ValueError("initial data not admissible: " + "; ".join(errs))
    out = evaluate(spec, grid.coordinates())
    if np.any(out < 0):
        raise ValueError("recipe produced negative values")
    return out


def evaluate(spec: InitialDataSpec, X) -> np.ndarray:
    """Component values at arbitrary points ``X`` of shape ``(n, ...)``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    out = np.zeros((2 * n, *X.shape[1:]))
    for i, recipe in enumerate(spec.recipes(n)):
        for p in recipe:
            out[i] += p.evaluate(X)
    return out


# ---------------------------------------------------------------------------
# truncation between barriers

# direction in which R moves so that level m lowers the lower barrier and raises the upper
_LEVEL_DIRECTION = {FDE_SUPER_CRITICAL: 1, FDE_CRITICAL: 1, FDE_SUBCRITICAL: 1, HEAT: -1, PME: -1,
                    SUPER_PME: 1, SUPER_HEAT: 1, SUPER_FDE: 1}


def barrier_level(spec: BarrierSpec, m: float) -> BarrierSpec:
    """Level-``m`` member of a barrier family (``R`` scaled by ``m`` or ``1/m``)."""
    if not m >= 1:
        raise ValueError("truncation level must be >= 1")
    return spec.with_(R=spec.R * m ** _LEVEL_DIRECTION[spec.case])


@dataclass
class Truncation:
    fields: np.ndarray
    l1_gap: float
    lower: np.ndarray | None
    upper: np.ndarray | None


def sandwich_truncate(g, grid: Grid, m: float, lower: BarrierSpec | None = None,
                      upper: BarrierSpec | None = None) -> Truncation:
    """Clip ``g`` between ``3/(4n) Psi_m(.,0)`` and ``1/(4n) Psibar_m(.,0)``."""
    g = np.asarray(g, dtype=float)
    n = grid.n
    X = grid.coordinates()
    lo = 0.75 / n * psi_eval(barrier_level(lower, m), X, 0.0) if lower is not None else None
    hi = 0.25 / n * psi_eval(barrier_level(upper, m), X, 0.0) if upper is not None else None
    if lo is not None and hi is not None:
        crossed = lo > hi
        if crossed.any():
            idx = np.unravel_index(int(np.argmax(lo - hi)), grid.shape)
            raise ValueError(f"barriers cross at cell {idx}: lower {lo[idx]:.4g} > upper {hi[idx]:.4g}")
    out = g
    if lo is not None:
        out = np.maximum(out, lo)
    if hi is not None:
        out = np.minimum(out, hi)
    gap = float(np.sum(np.abs(out - g)) * grid.cell_volume)
    return Truncation(out, gap, lo, hi)


# ---------------------------------------------------------------------------
# horizon


def _pow(base: float, exponent: float) -> float:
    """``base^exponent`` with ``0^(negative) = inf`` and ``inf^(negative) = 0``."""
    if base == 0:
        return math.inf if exponent < 0 else 0.0
    if math.isinf(base):
        return 0.0 if exponent < 0 else math.inf
    return base**exponent


def horizon_estimate(spec: InitialDataSpec, n: int, alpha: float,
                     fraction: float = DEFAULT_HORIZON_FRACTION) -> dict:
    """``T1``, ``T2``, their minimum and the suggested run length ``fraction * min``."""
    tails = spec.envelope_tails(n)
    if 2 / n <= alpha <= 1:
        T1 = _pow(min(tail_limit(t, 2 / alpha) for t in tails), 1 / alpha)
    else:
        T1 = math.inf
    if 0 <= alpha <= 1:
        T2 = _pow(max(log_growth(t) for t in tails), -1.0)
    else:
        T2 = _pow(max(tail_limit(t, 2 / alpha) for t in tails), 1 / alpha)
    scale = min(T1, T2)
    return {"T1": T1, "T2": T2, "T_bar_scale": scale, "fraction": fraction, "t_suggested": fraction * scale}
