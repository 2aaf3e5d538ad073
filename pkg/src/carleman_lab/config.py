"""Experiment configuration: JSON schema, normalisation and cross-field validation.

Example::

    {
      "schema_version": 1,
      "model": {"n": 2, "alpha": 0.5, "rate": "power_sum"},
      "grid": {"cells": 64, "dx": 0.015625, "boundary": "periodic"},
      "initial_data": {"components": [[{"kind": "constant", "value": 1.0},
                                       {"kind": "gaussian_bump", "amplitude": 0.5, "width": 0.1}]]},
      "epsilons": [0.2, 0.1, 0.05],
      "t_end": 0.05,
      "snapshots": [0.025, 0.05],
      "barriers": {"lower": {"case": "fde_subcritical_global", "n": 2, "alpha": 0.5}},
      "diagnostics": {"convergence": true, "mass": true},
      "seed": 0
    }

Either ``t_end`` or ``horizon_fraction`` fixes the run length; the latter
multiplies the finite part of the horizon estimate of the initial data.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .barriers import BarrierError, BarrierSpec
from .initial_data import InitialDataSpec, admissibility_errors, horizon_estimate
from .interaction import KINDS as RATE_KINDS
from .model import BOUNDARIES, FROZEN, Grid, ModelParams, make_grid

SCHEMA_VERSION = 1

DIAGNOSTICS = {
    "convergence": True,
    "mass": True,
    "bounds": True,
    "flux_l2": False,
    "ficks": False,
    "entropy": False,
    "barrier_audit": True,
}

DEFAULTS = {
    "substeps": 1,
    "limit": True,
    "region": {"fraction": 0.5},
    "diagnostics": DIAGNOSTICS,
    "seed": 0,
    "tolerances": {"mass": 1e-12, "bounds": 1e-10, "barrier_lower": 1e-6, "barrier_upper": 1e-6},
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``(field_path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))


@dataclass
class ExperimentConfig:
    raw: dict
    params: ModelParams  # epsilon is the first sweep member
    rate_kind: str
    grid: Grid
    initial: InitialDataSpec | None
    epsilons: list[float]
    t_end: float | None
    snapshots: list[float]
    lower: BarrierSpec | None
    upper: BarrierSpec | None
    certify: dict | None
    diagnostics: dict
    seed: int
    warnings: list[str] = field(default_factory=list)

    @property
    def certification_only(self) -> bool:
        return self.initial is None

    def normalized_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _num(d, key, path, errors, kind=float, required=True, default=None):
    if key not in d:
        if required:
            errors.append((f"{path}.{key}", "missing"))
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errors.append((f"{path}.{key}", f"expected a number, got {v!r}"))
        return default
    if kind is int and int(v) != v:
        errors.append((f"{path}.{key}", f"expected an integer, got {v!r}"))
        return default
    return kind(v)


def _on_lattice(t: float, dt: float) -> bool:
    k = round(t / dt)
    return abs(k * dt - t) <= 1e-9 * max(1.0, abs(t))


def validate(raw: dict) -> ExperimentConfig:
    """Normalise a raw config dict, raising :class:`ConfigError` with every violation."""
    errors: list[tuple[str, str]] = []
    warns: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError([("$", "config must be a JSON object")])
    if raw.get("schema_version") != SCHEMA_VERSION:
        errors.append(("schema_version", f"must be {SCHEMA_VERSION}"))
    cfg = _merge(DEFAULTS, raw)

    model = cfg.get("model")
    params = None
    rate_kind = "power_sum"
    if not isinstance(model, dict):
        errors.append(("model", "missing or not an object"))
    else:
        n = _num(model, "n", "model", errors, int)
        alpha = _num(model, "alpha", "model", errors)
        rate_kind = model.get("rate", "power_sum")
        if rate_kind not in RATE_KINDS:
            errors.append(("model.rate", f"unknown rate {rate_kind!r}"))
        if n is not None and alpha is not None:
            try:
                params = ModelParams(n, alpha, 1.0)
            except ValueError as exc:
                field_ = "model.alpha" if "alpha" in str(exc) else "model.n"
                errors.append((field_, str(exc)))

    eps = cfg.get("epsilons")
    epsilons: list[float] = []
    if eps is not None:
        if not isinstance(eps, list) or not eps or not all(isinstance(e, (int, float)) and e > 0 for e in eps):
            errors.append(("epsilons", "must be a nonempty list of positive numbers"))
        else:
            epsilons = [float(e) for e in eps]
            if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
                errors.append(("epsilons", "must be strictly decreasing"))

    grid = None
    gblock = cfg.get("grid")
    if isinstance(gblock, dict) and params is not None:
        cells = gblock.get("cells")
        dx = _num(gblock, "dx", "grid", errors)
        boundary = gblock.get("boundary", "periodic")
        if boundary not in BOUNDARIES:
            errors.append(("grid.boundary", f"must be one of {BOUNDARIES}"))
        elif cells is not None and dx is not None:
            try:
                grid = make_grid(params.n, cells, dx, boundary, gblock.get("origin"))
            except (ValueError, TypeError) as exc:
                errors.append(("grid", str(exc)))
        elif cells is None:
            errors.append(("grid.cells", "missing"))

    initial = None
    if "initial_data" in cfg:
        try:
            initial = InitialDataSpec.from_dict(cfg["initial_data"])
            if params is not None:
                for msg in admissibility_errors(initial, params.n, params.alpha):
                    errors.append(("initial_data", msg))
                initial.recipes(params.n)
        except (ValueError, KeyError, TypeError, BarrierError) as exc:
            errors.append(("initial_data", str(exc)))

    lower = upper = None
    bblock = cfg.get("barriers") or {}
    for key in ("lower", "upper"):
        if key in bblock and bblock[key] is not None:
            try:
                spec = BarrierSpec(**bblock[key])
            except (BarrierError, TypeError) as exc:
                errors.append((f"barriers.{key}", str(exc)))
                continue
            if params is not None and (spec.n != params.n or spec.alpha != params.alpha):
                errors.append((f"barriers.{key}", "barrier n/alpha must match the model"))
            if key == "lower" and spec.is_super:
                errors.append(("barriers.lower", f"{spec.case} is a supersolution"))
            if key == "upper" and not spec.is_super:
                errors.append(("barriers.upper", f"{spec.case} is a subsolution"))
            if key == "lower":
                lower = spec
            else:
                upper = spec
    certify = bblock.get("certify")
    if certify is not None:
        ce = certify.get("epsilons", [0.1, 0.05])
        if not ce or any(not e > 0 for e in ce):
            errors.append(("barriers.certify.epsilons", "must be positive"))
        if lower is None and upper is None:
            errors.append(("barriers.certify", "needs a lower or upper barrier"))

    # run length and schedule
    t_end = None
    snapshots: list[float] = []
    if initial is not None:
        if grid is None and "grid" not in cfg:
            errors.append(("grid", "missing"))
        if not epsilons:
            errors.append(("epsilons", "missing"))
        if "t_end" in cfg:
            t_end = _num(cfg, "t_end", "$", errors)
            if t_end is not None and not t_end > 0:
                errors.append(("t_end", "must be positive"))
                t_end = None
        elif "horizon_fraction" in cfg and params is not None:
            frac = _num(cfg, "horizon_fraction", "$", errors)
            h = horizon_estimate(initial, params.n, params.alpha, frac)
            if math.isfinite(h["t_suggested"]):
                t_end = h["t_suggested"]
            else:
                errors.append(("horizon_fraction", "horizon is infinite; give t_end instead"))
        else:
            errors.append(("t_end", "give t_end or horizon_fraction"))
        if t_end is not None and params is not None:
            h = horizon_estimate(initial, params.n, params.alpha)
            cap = cfg.get("horizon_fraction", h["fraction"]) * h["T_bar_scale"]
            if math.isfinite(h["T_bar_scale"]) and t_end > cap * (1 + 1e-12):
                errors.append(("t_end", f"exceeds horizon fraction x min(T1, T2) = {cap:g}"))
        snapshots = [float(s) for s in cfg.get("snapshots", [t_end] if t_end else [])]
        if t_end is not None:
            if any(b <= a for a, b in zip(snapshots, snapshots[1:])):
                errors.append(("snapshots", "must be strictly increasing"))
            if any(s < 0 or s > t_end * (1 + 1e-12) for s in snapshots):
                errors.append(("snapshots", "must lie in [0, t_end]"))
            if 0.0 not in snapshots:
                snapshots = [0.0] + snapshots
            if grid is not None:
                for e in epsilons:
                    dt = e * grid.dx
                    if not _on_lattice(t_end, dt):
                        errors.append(("t_end", f"not a multiple of dt = eps*dx = {dt:g} for eps={e:g}"))
                    bad = [s for s in snapshots if not _on_lattice(s, dt)]
                    if bad:
                        errors.append(("snapshots", f"{bad} not on the step lattice dt = {dt:g} (eps={e:g})"))
                    if grid.boundary == FROZEN:
                        fr = cfg["region"]["fraction"]
                        gap = 0.5 * (1 - fr) * min(grid.lengths)
                        if gap < t_end / e:
                            warns.append(f"eps={e:g}: frozen boundary within the kinetic domain of "
                                         f"dependence of the region (gap {gap:g} < t_end/eps {t_end / e:g})")

    if lower is not None and t_end is not None and t_end >= lower.life_span:
        errors.append(("t_end", f"beyond the life span {lower.life_span:g} of the lower barrier"))
    if upper is not None and t_end is not None and t_end >= upper.life_span:
        errors.append(("t_end", f"beyond the life span {upper.life_span:g} of the upper barrier"))

    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        errors.append(("seed", "must be a nonnegative integer"))
    sub = cfg.get("substeps")
    if sub != "auto" and not (isinstance(sub, int) and sub >= 1):
        errors.append(("substeps", "must be a positive integer or 'auto'"))
    unknown = set(cfg["diagnostics"]) - set(DIAGNOSTICS)
    if unknown:
        errors.append(("diagnostics", f"unknown toggles {sorted(unknown)}"))
    if errors:
        raise ConfigError(errors)
    if t_end is not None:
        cfg["t_end"] = t_end
        cfg["snapshots"] = snapshots
    return ExperimentConfig(cfg, params.with_epsilon(epsilons[0]) if epsilons else params, rate_kind, grid,
                            initial, epsilons, t_end, snapshots, lower, upper, certify,
                            dict(cfg["diagnostics"]), int(seed), warns)


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError([("$", f"cannot read {p}: {exc}")]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([("$", f"invalid JSON: {exc}")]) from exc
    return validate(raw)
