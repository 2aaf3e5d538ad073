import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carleman_lab.barriers import FDE_CRITICAL, FDE_SUBCRITICAL, HEAT, PME, SUPER_FDE, SUPER_PME, BarrierSpec, psi_eval
from carleman_lab.initial_data import (BarrierTrace, Constant, GaussianBump, InitialDataSpec, L1Perturbation,
                                       PowerTail, Tail, admissibility_errors, barrier_level, build,
                                       horizon_estimate, sandwich_truncate)
from carleman_lab.model import make_grid


class TestBuild:
    def test_constant(self):
        g = make_grid(2, 8, 0.25)
        out = build(InitialDataSpec.uniform(Constant(0.7)), g)
        assert out.shape == (4, 8, 8)
        assert np.all(out == 0.7)

    def test_power_tail_value(self):
        spec = InitialDataSpec.uniform(PowerTail(4.0, 2.0, 1.0))
        from carleman_lab.initial_data import evaluate

        v = evaluate(spec, np.array([[1.0], [0.0], [0.0]]))
        np.testing.assert_allclose(v, 2.0)

    def test_bump_on_constant(self):
        g = make_grid(2, 9, 0.25)
        spec = InitialDataSpec.uniform(Constant(0.5), GaussianBump(1.5, 0.3))
        out = build(spec, g)
        assert out[:, 4, 4] == pytest.approx(2.0)

    def test_per_component(self):
        g = make_grid(1, 8, 0.25)
        spec = InitialDataSpec(((Constant(1.0),), (Constant(2.0),)))
        out = build(spec, g)
        assert np.all(out[0] == 1.0) and np.all(out[1] == 2.0)
        with pytest.raises(ValueError):
            build(spec, make_grid(2, 8, 0.25))

    def test_admissibility(self):
        g = make_grid(2, 8, 0.25)
        # alpha = 1 = 2/n needs an envelope decaying no faster than |x|^-2
        with pytest.raises(ValueError, match="not admissible"):
            build(InitialDataSpec.uniform(PowerTail(1.0, 3.0)), g, alpha=1.0)
        build(InitialDataSpec.uniform(PowerTail(1.0, 2.0)), g, alpha=1.0)
        # l1 perturbations do not count towards the envelope
        pert = L1Perturbation((GaussianBump(1.0, 0.2),), budget=1.0)
        assert admissibility_errors(InitialDataSpec.uniform(pert), 2, 1.0)

    def test_l1_budget(self):
        pert = L1Perturbation((GaussianBump(1.0, 1.0),), budget=1.0)
        with pytest.raises(ValueError, match="budget"):
            build(InitialDataSpec.uniform(pert), make_grid(2, 8, 0.25))

    def test_roundtrip(self):
        spec = InitialDataSpec((
            (Constant(0.1), PowerTail(2.0, 2.5, 0.5)),
            (BarrierTrace(BarrierSpec(FDE_SUBCRITICAL, 2, 0.5), 0.375),),
            (L1Perturbation((GaussianBump(0.5, 0.2, (0.1, 0.0)),), 1.0),),
            (GaussianBump(1.0, 0.3),),
        ))
        assert InitialDataSpec.from_dict(spec.to_dict()) == spec

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0, 2), st.floats(0, 2), st.floats(0.1, 2))
    def test_monotone(self, a, b, width):
        g = make_grid(2, 8, 0.25)
        lo = build(InitialDataSpec.uniform(Constant(min(a, b)), GaussianBump(0.5, width)), g)
        hi = build(InitialDataSpec.uniform(Constant(max(a, b)), GaussianBump(0.5, width)), g)
        assert np.all(lo <= hi)


class TestTails:
    def test_limits(self):
        assert Tail(2.0, 4.0).limit(2.0) == 4.0
        assert Tail(2.0, 4.0).limit(1.0) == 0.0
        assert Tail(2.0, 4.0).limit(3.0) == math.inf
        assert Tail(0.0, 0.5).limit(0.0) == 0.5
        assert Tail(log_growth=0.1).limit(1.0) == math.inf

    def test_barrier_trace_tail(self):
        b = BarrierSpec(FDE_SUBCRITICAL, 2, 0.5)
        t = BarrierTrace(b, 0.5).tail()
        assert t.power == 4.0 and t.coef == pytest.approx(0.5 * 8.0)


class TestTruncation:
    def setup_method(self):
        self.grid = make_grid(2, 64, 4 / 64)
        self.lower = BarrierSpec(FDE_CRITICAL, 2, 1.0, R=2.0)
        self.upper = BarrierSpec(SUPER_FDE, 2, 1.0, R=4.0)

    def test_inside_unchanged(self):
        X = self.grid.coordinates()
        lo = 0.75 / 2 * psi_eval(self.lower, X, 0.0)
        hi = 0.25 / 2 * psi_eval(self.upper, X, 0.0)
        g = np.stack([(lo + hi) / 2] * 4)
        tr = sandwich_truncate(g, self.grid, 1, self.lower, self.upper)
        assert tr.l1_gap == 0
        np.testing.assert_array_equal(tr.fields, g)

    def test_zero_lifts_to_lower(self):
        tr = sandwich_truncate(np.zeros((4, 64, 64)), self.grid, 1, self.lower, self.upper)
        np.testing.assert_array_equal(tr.fields, np.broadcast_to(tr.lower, tr.fields.shape))

    def test_gap_decreases_with_level(self):
        g = build(InitialDataSpec.uniform(PowerTail(4.0, 2.0)), self.grid, alpha=1.0)
        gaps = [sandwich_truncate(g, self.grid, m, self.lower, self.upper).l1_gap for m in (1, 2, 4, 8)]
        assert all(a > b for a, b in zip(gaps, gaps[1:])), gaps

    def test_idempotent(self):
        g = build(InitialDataSpec.uniform(PowerTail(4.0, 2.0)), self.grid)
        once = sandwich_truncate(g, self.grid, 2, self.lower, self.upper).fields
        twice = sandwich_truncate(once, self.grid, 2, self.lower, self.upper)
        assert twice.l1_gap == 0

    def test_crossed(self):
        with pytest.raises(ValueError, match="cross"):
            sandwich_truncate(np.zeros((4, 64, 64)), self.grid, 1, BarrierSpec(FDE_CRITICAL, 2, 1.0),
                              BarrierSpec(SUPER_FDE, 2, 1.0))

    @pytest.mark.parametrize("case, alpha", [(FDE_SUBCRITICAL, 0.5), (HEAT, 0.0), (PME, -0.5)])
    def test_level_lowers_lower_barrier(self, case, alpha):
        base = BarrierSpec(case, 2, alpha)
        X = self.grid.coordinates()
        a = psi_eval(barrier_level(base, 1), X, 0.0)
        b = psi_eval(barrier_level(base, 2), X, 0.0)
        assert np.all(b <= a + 1e-15) and np.any(b < a)

    def test_level_raises_upper_barrier(self):
        base = BarrierSpec(SUPER_PME, 2, -0.5)
        X = self.grid.coordinates()
        assert np.all(psi_eval(barrier_level(base, 2), X, 0.0) > psi_eval(base, X, 0.0))


class TestHorizon:
    def test_power_tail_T1(self):
        h = horizon_estimate(InitialDataSpec.uniform(PowerTail(4.0, 2.0)), 3, 1.0)
        assert h["T1"] == 4.0
        assert h["T2"] == math.inf
        assert h["t_suggested"] == pytest.approx(1.0)

    def test_pme_range(self):
        h = horizon_estimate(InitialDataSpec.uniform(Constant(1.0)), 2, -0.5)
        assert h["T1"] == math.inf

    @pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
    def test_bounded_T2(self, alpha):
        h = horizon_estimate(InitialDataSpec.uniform(Constant(1.0), GaussianBump(1.0, 0.5)), 2, alpha)
        assert h["T2"] == math.inf

    def test_gaussian_growth_gives_finite_T2(self):
        up = BarrierSpec(SUPER_FDE, 2, 0.5)
        h = horizon_estimate(InitialDataSpec.uniform(BarrierTrace(up, 0.1)), 2, 0.5)
        assert h["T2"] == pytest.approx(4 * up.T / (up.c_hat * 2))

    @pytest.mark.parametrize("lam", [0.5, 2.0, 3.0])
    def test_scale_covariance(self, lam):
        alpha = 0.8
        base = horizon_estimate(InitialDataSpec.uniform(PowerTail(2.0, 2 / alpha)), 3, alpha)["T1"]
        scaled = horizon_estimate(InitialDataSpec.uniform(PowerTail(2.0 * lam, 2 / alpha)), 3, alpha)["T1"]
        assert scaled == pytest.approx(lam ** (1 / alpha) * base, rel=1e-14)
