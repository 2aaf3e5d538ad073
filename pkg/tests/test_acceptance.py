"""Acceptance criteria 1-11, each printing one PASS/FAIL line (collected again in the terminal summary)."""
import math
import time
import warnings

import numpy as np
import pytest

from carleman_lab.barriers import (FDE_CRITICAL, FDE_SUBCRITICAL, FDE_SUPER_CRITICAL, HEAT, PME, SUPER_FDE,
                                   SUPER_HEAT, SUPER_PME, BarrierSpec, ansatz_profile,
                                   calibrate_validity, certify_limit_sign, kinetic_residual, limit_residual,
                                   psi_eval, sample_points, sandwich_margins)
from carleman_lab.diagnostics import (barrier_bound_audit, contraction_series, convergence_report, flux_l2,
                                      ordering_verdict)
from carleman_lab.initial_data import Constant, GaussianBump, InitialDataSpec, PowerTail, horizon_estimate
from carleman_lab.interaction import RateSpec, t_dissipativity_test
from carleman_lab.kinetic import DomainOfDependenceWarning, FarField, advance, collide_step
from carleman_lab.limit import advance_limit
from carleman_lab.model import FROZEN, KineticState, ModelParams, Region, TestCutoff, make_grid, norm_on

from conftest import record

pytestmark = pytest.mark.acceptance

def _rate(alpha):
    return RateSpec("power_sum", alpha)


# ---------------------------------------------------------------------------
# 1. T-dissipativity


def test_c1_t_dissipativity():
    t0 = time.perf_counter()
    worst = -math.inf
    for alpha in (-1.0, -0.5, 0.0, 0.5, 1.0):
        for n in (1, 2, 3):
            rep = t_dissipativity_test(_rate(alpha), n, samples=100_000, box=(0.01, 100.0), seed=n)
            worst = max(worst, rep.max_violation)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10
    record(1, ok, f"max violation {worst:.3g} (tol 1e-12) over 15 (alpha, n) x 1e5 pairs in {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. collision-step oracle


def test_c2_collision_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    one_step = 0.0
    for n in (1, 2, 3):
        g = make_grid(n, 4, 1.0)
        u = rng.uniform(0.0, 3.0, size=(2 * n, *g.shape))
        eps, dt = 0.1, 0.01
        r = dt / eps**2
        out = collide_step(KineticState(u, g), ModelParams(n, 0.0, eps), _rate(0.0), dt)
        mean = u.mean(axis=0)
        one_step = max(one_step, float(np.max(np.abs(out.u - (u + r * mean) / (1 + r)))))

    # r_total = 1: sub-stepped backward Euler converges to u1 = 0.5 + 0.5 e^-1 at first order;
    # two Richardson levels over k, 2k, 4k sub-steps remove the 1/k and 1/k^2 terms
    g = make_grid(1, 4, 1.0)
    u = np.zeros((2, 4))
    u[0] = 1.0
    exact = 0.5 + 0.5 * math.exp(-1.0)
    vals = {}
    for k in (250, 500, 1000):
        vals[k] = collide_step(KineticState(u, g), ModelParams(1, 0.0, 0.1), _rate(0.0), 0.01, substeps=k).u[0, 0]
    extrapolated = (8 * vals[1000] - 6 * vals[500] + vals[250]) / 3
    first_order = [abs(vals[k] - exact) * k for k in (250, 500, 1000)]
    sub_err = abs(extrapolated - exact)
    elapsed = time.perf_counter() - t0
    ok = one_step <= 1e-12 and sub_err <= 1e-8 and np.ptp(first_order) < 0.02 * first_order[-1] and elapsed < 1
    record(2, ok, f"one-step error {one_step:.2g} (tol 1e-12); sub-stepped limit error {sub_err:.2g} (tol 1e-8); "
                  f"k*error {first_order[-1]:.4f} ~ e^-1/4 = {math.exp(-1) / 4:.4f}; {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. conservation and bounds


def _bounded_data(g, N=0.5, M=2.0, seed=3):
    X = g.coordinates()
    rng = np.random.default_rng(seed)
    mid, amp = (N + M) / 2, (M - N) / 2
    u = np.empty((2 * g.n, *g.shape))
    for i in range(2 * g.n):
        a, b = rng.uniform(0, 2 * np.pi, size=2)
        u[i] = mid + amp * np.sin(2 * np.pi * X[0] + a) * np.cos(2 * np.pi * X[1] + b)
    u[0][0, 0], u[1][0, 0] = N, M  # attain both bounds
    return u


@pytest.mark.parametrize("alpha", [-0.5, 0.0, 0.5, 1.0])
def test_c3_conservation_and_bounds(alpha):
    t0 = time.perf_counter()
    g = make_grid(2, 64, 1 / 64)
    u0 = _bounded_data(g)
    run = advance(KineticState(u0, g), ModelParams(2, alpha, 0.1), _rate(alpha), 0.2)
    drift = run.max_mass_drift()
    lo, hi = run.bounds()
    elapsed = time.perf_counter() - t0
    ok = drift <= 1e-12 and lo >= 0.5 - 1e-10 and hi <= 2.0 + 1e-10 and elapsed < 60
    prev = test_c3_conservation_and_bounds.__dict__.setdefault("results", {})
    prev[alpha] = (ok, f"alpha={alpha:g}: drift {drift:.2g}, range [{lo:.12f}, {hi:.12f}], {elapsed:.1f}s")
    if len(prev) == 4:
        record(3, all(v[0] for v in prev.values()), "; ".join(v[1] for v in prev.values()))
    assert ok, prev[alpha][1]


# ---------------------------------------------------------------------------
# 4. L1 contraction and comparison


def test_c4_contraction_and_comparison():
    t0 = time.perf_counter()
    g = make_grid(2, 32, 1 / 32)
    eps, t_end = 0.1, 0.1
    dt = eps * g.dx
    times = [k * dt for k in range(0, 33, 4)]
    worst_jump, worst_margin, count = -math.inf, math.inf, 0
    for alpha in (-1.0, 0.0, 1.0):
        for k in range(5):
            rng = np.random.default_rng(100 * k + int(alpha * 10) + 10)
            u = _bounded_data(g, 0.3, 1.5, seed=rng.integers(1 << 30))
            if k % 2 == 0:  # ordered pair
                v = u + rng.uniform(0.0, 0.5, size=u.shape)
            else:  # unordered pair
                v = _bounded_data(g, 0.3, 1.5, seed=rng.integers(1 << 30))
            p = ModelParams(2, alpha, eps)
            ru = advance(KineticState(u, g), p, _rate(alpha), t_end, times)
            rv = advance(KineticState(v, g), p, _rate(alpha), t_end, times)
            for a, b in ((ru, rv), (rv, ru)):
                s = contraction_series(a, b)
                worst_jump = max(worst_jump, float(np.max(np.diff(s))))
            if k % 2 == 0:
                worst_margin = min(worst_margin, ordering_verdict(ru, rv).value)
            count += 1
    elapsed = time.perf_counter() - t0
    ok = worst_jump <= 1e-8 and worst_margin >= -1e-10 and elapsed < 300
    record(4, ok, f"{count} pairs: largest increase of sum_i int (u_i - v_i)^+ {worst_jump:.3g} (tol 1e-8); "
                  f"ordered-pair margin {worst_margin:.3g} (tol -1e-10); {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 5. flux boundedness


def test_c5_flux_boundedness():
    t0 = time.perf_counter()
    g = make_grid(2, 64, 1 / 64)
    X = g.coordinates()
    base = 1.25 + 0.5 * np.sin(2 * np.pi * X[0]) * np.cos(2 * np.pi * X[1])
    # anisotropic data in [0.55, 1.95]: component (a, s) tilted by 0.2 s cos(2 pi x_a)
    u0 = np.stack([base + 0.2 * s * np.cos(2 * np.pi * X[a]) for s in (1, -1) for a in (0, 1)])
    values = []
    for eps in (0.2, 0.1, 0.05):
        dt = eps * g.dx
        steps = int(round(0.1 / dt))
        times = [k * dt for k in range(0, steps + 1, max(1, steps // 40))]
        run = advance(KineticState(u0, g), ModelParams(2, 0.5, eps), _rate(0.5), steps * dt, times)
        values.append(flux_l2(run, TestCutoff("smooth_bump", 0.4)))
    plain = [v.plain for v in values]
    weighted = [v.weighted for v in values]
    band = max(max(plain) / min(plain), max(weighted) / min(weighted))
    elapsed = time.perf_counter() - t0
    ok = band <= 2.0 and all(np.isfinite(plain)) and elapsed < 300
    record(5, ok, f"flux_l2 plain {', '.join(f'{v:.4g}' for v in plain)}; weighted "
                  f"{', '.join(f'{v:.4g}' for v in weighted)}; band factor {band:.3f} (tol 2); {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 6. diffusive limit


@pytest.mark.slow
def test_c6_diffusive_limit():
    t0 = time.perf_counter()
    g = make_grid(2, 128, 1 / 128, origin=0.0)
    X = g.coordinates()
    rho0 = 2.0 + np.cos(2 * np.pi * X[0]) * np.sin(2 * np.pi * X[1] + 0.3)
    t_end = 0.05
    times = [t_end / 2, t_end]
    K = Region.interior(g)
    lines, ok = [], True
    for alpha in (-0.5, 0.0, 0.5):
        lim = advance_limit(rho0, g, 2, alpha, t_end, times)
        runs = [advance(KineticState.isotropic(rho0, g), ModelParams(2, alpha, eps), _rate(alpha), t_end, times)
                for eps in (0.2, 0.1, 0.05, 0.025)]
        rep = convergence_report(runs, lim, K)
        ref = norm_on(lim.at(t_end), g, K)
        errs = [r.error for r in rep.rows]
        gaps = [r.isotropy_gap for r in rep.rows]
        this = rep.error_decreasing and rep.gap_decreasing and errs[-1] <= 0.05 * ref
        ok &= this
        lines.append(f"alpha={alpha:g}: e/|rho|_K = {', '.join(f'{e / ref:.4f}' for e in errs)}, "
                     f"gap = {', '.join(f'{v:.3g}' for v in gaps)} ({'ok' if this else 'FAIL'})")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1200
    record(6, ok, "; ".join(lines) + f"; {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 7. limit-solver oracle


def test_c7_limit_oracle():
    t0 = time.perf_counter()

    def exact(x, t, t0_=0.05, background=0.2):
        s = t + t0_
        return background + np.exp(-x * x / (4 * s)) / np.sqrt(4 * np.pi * s)

    errs = []
    for dx in (1 / 32, 1 / 64, 1 / 128):
        g = make_grid(1, int(round(8 / dx)), dx)
        x = g.coordinates()[0]
        run = advance_limit(exact(x, 0.0), g, 1, 0.0, 0.1)
        errs.append(float(np.sum(np.abs(run.at(0.1) - exact(x, 0.1))) * dx))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    elapsed = time.perf_counter() - t0
    ok = min(orders) >= 1.8 and elapsed < 120
    record(7, ok, f"L1 errors {', '.join(f'{e:.3g}' for e in errs)}; orders "
                  f"{', '.join(f'{o:.2f}' for o in orders)} (tol 1.8); {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 8 and 9. barrier certificates and sandwich

CERT_CASES = [
    BarrierSpec(FDE_SUPER_CRITICAL, 3, 1.0),
    # at R = 1 the validity region of this family is empty for eps = 0.1
    BarrierSpec(FDE_SUPER_CRITICAL, 3, 0.8, R=0.25),
    BarrierSpec(FDE_CRITICAL, 2, 1.0),
    BarrierSpec(FDE_SUBCRITICAL, 2, 0.5),
    BarrierSpec(HEAT, 2, 0.0),
    BarrierSpec(PME, 2, -0.5),
    BarrierSpec(PME, 2, -1.0),
    BarrierSpec(SUPER_PME, 2, -0.5),
    BarrierSpec(SUPER_HEAT, 2, 0.0),
    BarrierSpec(SUPER_FDE, 2, 0.5, R=4.0),
]

_CERTIFIED: dict = {}


def _calibrated(spec, eps):
    key = (spec, eps)
    if key not in _CERTIFIED:
        _CERTIFIED[key] = calibrate_validity(spec, eps, samples=10_000, seed=8)
    return _CERTIFIED[key]


def _grid_residual_check(spec, eps, coef, points=5):
    """Finite-difference kinetic residual at sample points of the certified region.

    Each point is the centre of a 6-cell space lattice times a 3-level time lattice
    (spacing ``h`` and ``h*eps``).  Returns ``(max signed residual, slack)`` where the
    slack is the Richardson estimate of the O(h^2) discretisation error,
    ``4/3 |R_h - R_{h/2}|``, maximised over the points.
    """
    xs, ts = sample_points(spec, points, np.random.default_rng(9), t_fraction=0.8, epsilon=eps, coef=0.9 * coef)
    params = ModelParams(spec.n, spec.alpha, eps)
    sign = -1.0 if spec.is_super else 1.0
    worst, slack = -math.inf, 0.0
    for x, t in zip(xs.T, ts):
        vals = []
        for h in (0.004, 0.002):
            g = make_grid(spec.n, 6, h, origin=tuple(x - 2.5 * h))
            Xg = g.coordinates()
            prof = np.stack([ansatz_profile(spec, eps, Xg, t + k * h * eps) for k in (-1, 0, 1)])
            res = kinetic_residual(prof, g, h * eps, params)[0]
            vals.append(res[(slice(None),) + (1,) * spec.n])  # interior index 1 is the point x
        worst = max(worst, float(np.max(sign * vals[1])))
        slack = max(slack, float(4 / 3 * np.max(np.abs(vals[0] - vals[1]))))
    return worst, slack


def test_c8_barrier_certificates():
    t0 = time.perf_counter()
    lines, ok = [], True
    spot = float(limit_residual(BarrierSpec(FDE_SUPER_CRITICAL, 3, 1.0, c=3.5), np.zeros(3), 0.0))
    ok &= abs(spot + 1.0) <= 1e-12
    lines.append(f"spot residual {spot:.15f}")
    for spec in CERT_CASES:
        cert = certify_limit_sign(spec, samples=10_000, seed=8, slack=1e-9)
        ok &= cert.passed
        coefs = []
        for eps in (0.1, 0.05):
            kc = _calibrated(spec, eps)
            ok &= kc.passed
            coefs.append(kc.certified_coefficient)
        lines.append(f"{spec.case}(n={spec.n},a={spec.alpha:g}): limit {cert.max_residual:.2g}, "
                     f"kinetic coef {coefs[0]}/{coefs[1]}")
    worst_grid = -math.inf
    for spec in CERT_CASES:
        for eps in (0.1, 0.05):
            worst, slack = _grid_residual_check(spec, eps, _calibrated(spec, eps).certified_coefficient)
            ok &= worst <= slack
            worst_grid = max(worst_grid, worst - slack)
    lines.append(f"finite-difference residuals: max (signed residual - slack) {worst_grid:.3g} (must be <= 0)")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    record(8, ok, "; ".join(lines) + f"; {elapsed:.1f}s")
    assert ok


def test_c9_ansatz_sandwich():
    t0 = time.perf_counter()
    violations, total, lines = 0, 0, []
    for spec in CERT_CASES:
        for eps in (0.1, 0.05):
            kc = _calibrated(spec, eps)
            if not kc.passed:
                violations += 1
                lines.append(f"{spec.case} eps={eps}: no certified region")
                continue
            # fresh samples, independent of the calibration draw
            x, t = sample_points(spec, 10_000, np.random.default_rng(99), epsilon=eps,
                                 coef=kc.certified_coefficient)
            lo, hi = sandwich_margins(spec, eps, x, t)
            bad = int(np.sum((lo < 0) | (hi > 0)))
            violations += bad
            total += x.shape[1]
            if bad:
                lines.append(f"{spec.case} eps={eps}: {bad} violations")
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 60 + 120  # calibration is shared with criterion 8
    record(9, ok, f"{total} samples over {len(CERT_CASES)} families x 2 eps, {violations} violations; "
                  + ("; ".join(lines) + "; " if lines else "") + f"{elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 10. lower/upper bound persistence


def _persistence(spec, side):
    g = make_grid(2, 64, 4 / 64, FROZEN)
    X = g.coordinates()
    factor = 0.75 / 2 if side == "lower" else 0.25 / 2
    u0 = np.stack([factor * psi_eval(spec, X, 0.0)] * 4)
    # frozen ghost cells hold the initial trace, itself ordered against the barrier for t > 0
    ff = FarField(g, lambda Y: np.stack([factor * psi_eval(spec, Y, 0.0)] * 4))
    K = Region.interior(g, fraction=0.5)
    eps = 0.05  # smallest of {0.1, 0.05}
    dt = eps * g.dx
    steps = int(math.floor(0.25 * spec.T / dt + 1e-9))
    times = [k * dt for k in range(0, steps + 1, max(1, steps // 16))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DomainOfDependenceWarning)
        run = advance(KineticState(u0, g), ModelParams(2, spec.alpha, eps), _rate(spec.alpha), steps * dt,
                      times, far_field=ff, region=K)
    audit = barrier_bound_audit(run, **{side: spec}, region=K)
    return audit.lower_margin if side == "lower" else audit.upper_margin


def test_c10_bound_persistence():
    t0 = time.perf_counter()
    lower = _persistence(BarrierSpec(FDE_SUBCRITICAL, 2, 0.5), "lower")
    upper = _persistence(BarrierSpec(SUPER_PME, 2, -0.5), "upper")
    elapsed = time.perf_counter() - t0
    ok = lower >= -1e-6 and upper <= 1e-6 and elapsed < 600
    record(10, ok, f"min_K (u_i - Psi/4n) = {lower:.4g} (tol -1e-6); max_K (u_i - 3 Psibar/4n) = {upper:.4g} "
                   f"(tol 1e-6); t <= 0.25 T, eps = 0.05; {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 11. horizon arithmetic


def test_c11_horizon_arithmetic():
    t0 = time.perf_counter()
    checks = []
    h = horizon_estimate(InitialDataSpec.uniform(PowerTail(4.0, 2.0)), 3, 1.0)
    checks.append(("T1(alpha=1, A=4)", h["T1"], 4.0))
    checks.append(("T2 bounded-log", h["T2"], math.inf))
    h = horizon_estimate(InitialDataSpec.uniform(Constant(1.0)), 2, -0.5)
    checks.append(("T1(alpha=-0.5)", h["T1"], math.inf))
    h = horizon_estimate(InitialDataSpec.uniform(Constant(1.0), GaussianBump(1.0, 0.3)), 2, 0.5)
    checks.append(("T2(bounded, alpha=0.5)", h["T2"], math.inf))
    h = horizon_estimate(InitialDataSpec.uniform(PowerTail(2.0, 2.5)), 3, 0.8)
    checks.append(("T1(alpha=0.8, A=2)", h["T1"], 2.0 ** 1.25))
    bad = [c for c in checks if c[1] != c[2]]
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 1
    record(11, ok, ", ".join(f"{name} = {got:g}" for name, got, _ in checks) + f"; {elapsed * 1e3:.1f}ms")
    assert ok
