import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from multiflock.hydro1d import (
    HydroBlowup,
    HydroOperator,
    HydroState1D,
    central_difference,
    check_vacuum,
    grid,
    invariant_monitors,
    lf_divergence,
    periodic_convolve,
    quadrature_matrix,
    run_hydro,
    species_fields,
    stable_dt,
    step_hydro,
    threshold_check_1d,
    torus_distance,
)
from multiflock.kernels import CommunicationArray, RadialKernel

from hydro_cases import (
    L,
    PARETO_PAIR,
    SUPERCRITICAL_PHI,
    borderline_state,
    counterflow_state,
    random_smooth_state,
    supercritical_state,
)


class TestConvolution:
    def test_constant_kernel_integrates_mass(self, rng):
        rho = rng.uniform(0, 2, 64)
        out = periodic_convolve(RadialKernel.constant(0.7), rho, L)
        np.testing.assert_allclose(out, 0.7 * rho.sum() * L / 64, rtol=1e-13)

    def test_hot_cell_samples_kernel(self):
        n = 50
        dx = L / n
        rho = np.zeros(n)
        rho[7] = 1.0 / dx
        kern = RadialKernel.pareto(1.0, 0.5)
        out = periodic_convolve(kern, rho, L)
        x = grid(n, L)
        expected = [kern(min(abs(x[i] - x[7]), L - abs(x[i] - x[7]))) for i in range(n)]
        np.testing.assert_allclose(out, expected, rtol=1e-13)

    def test_uniform_density(self):
        n = 40
        kern = RadialKernel.cutoff(2.0, 1.0)
        out = periodic_convolve(kern, np.full(n, 0.3), L)
        dx = L / n
        expected = 0.3 * sum(float(kern(torus_distance(j * dx, 0.0, L))) for j in range(n)) * dx
        np.testing.assert_allclose(out, expected, rtol=1e-13)

    def test_quadrature_symmetric(self):
        K = quadrature_matrix(RadialKernel.pareto(1, 1), 33, 5.0)
        assert np.array_equal(K, K.T)

    def test_torus_distance(self):
        assert torus_distance(0.1, L - 0.1, L) == pytest.approx(0.2)


class TestState:
    def test_negative_density(self):
        with pytest.raises(ValueError, match="negative"):
            HydroState1D(0, L, [-np.ones(8)], [np.zeros(8)])

    def test_mismatched(self):
        with pytest.raises(ValueError):
            HydroState1D(0, L, [np.ones(8)], [np.zeros(9)])

    def test_vacuum(self):
        rho = np.ones(8)
        rho[3] = 0.0
        with pytest.raises(ValueError, match="vacuum"):
            check_vacuum(HydroState1D(0, L, [rho], [np.zeros(8)]))


class TestSourceAndFlux:
    @given(arrays(float, (3, 16), elements=st.floats(0.01, 2)), arrays(float, (3, 16), elements=st.floats(-2, 2)))
    @settings(deadline=None, max_examples=50)
    def test_momentum_exchange_cancels(self, rho, u):
        phi = CommunicationArray(
            3,
            {(0, 1): RadialKernel.pareto(1, 0.5), (1, 2): RadialKernel.constant(0.3), (0, 0): RadialKernel.cutoff(1, 1)},
        )
        op = HydroOperator(phi, 16, L)
        src = op.source(list(rho), list(u))
        total = sum(float(np.sum(s)) for s in src)
        # size of the individual exchange terms before cancellation
        scale = 0.0
        for a in range(3):
            for b in range(3):
                K = op.matrix(a, b)
                if K is not None:
                    scale += float(np.sum(rho[a] * (K @ np.abs(rho[b] * u[b]) + np.abs(u[a]) * (K @ rho[b]))))
        assert abs(total) <= 1e-14 * max(scale, 1e-300)

    @pytest.mark.parametrize("flux", ["global", "local"])
    def test_flux_telescopes(self, rng, flux):
        rho = rng.uniform(0.5, 1.5, 32)
        u = rng.normal(size=32)
        d_rho, d_m = lf_divergence(rho, rho * u, u, 0.1, flux)
        assert abs(d_rho.sum()) < 1e-12 and abs(d_m.sum()) < 1e-12

    def test_unknown_flux(self):
        with pytest.raises(ValueError, match="unknown flux"):
            lf_divergence(np.ones(4), np.ones(4), np.ones(4), 0.1, "upwind")


class TestThreshold:
    def test_zero_velocity_subcritical(self):
        st_ = HydroState1D(0, L, [np.full(64, 1 / L), 1 + 0.5 * np.sin(grid(64, L))], [np.zeros(64)] * 2)
        assert threshold_check_1d(st_, PARETO_PAIR).subcritical

    def test_steep_descent_supercritical(self):
        n = 128
        st_ = HydroState1D(0, L, [np.full(n, 1 / L)], [-3.0 * np.sin(2 * math.pi * grid(n, L) / L)])
        rep = threshold_check_1d(st_, CommunicationArray.uniform(1, RadialKernel.constant(0.1)))
        assert rep.verdict == "supercritical"
        # steepest descent of -3 sin is at x = 0, i.e. the first or last cell
        assert rep.worstCell[0] in (0, n - 1)
        assert rep.minE[0] == pytest.approx(-3.0 * math.cos(math.pi / n) + 0.1, rel=1e-3)

    def test_borderline_subcritical(self):
        rep = threshold_check_1d(borderline_state(128), PARETO_PAIR)
        assert rep.subcritical
        assert min(rep.minE) == pytest.approx(0.0, abs=1e-14)

    def test_e_is_derivative_plus_convolution(self):
        s = random_smooth_state(64)
        op = HydroOperator(PARETO_PAIR, 64, L)
        f = species_fields(s, op)[0]
        np.testing.assert_allclose(f.e, central_difference(s.u[0], s.dx) + op.convolution_sum(0, s.rho))
        np.testing.assert_allclose(f.q, f.e / s.rho[0])


class TestEvolution:
    def test_flocked_uniform_stationary(self):
        n = 32
        s = HydroState1D(0, L, [np.full(n, 0.2), np.full(n, 0.5)], [np.full(n, 0.7)] * 2)
        traj = run_hydro(s, PARETO_PAIR, 1.0)
        for a in range(2):
            np.testing.assert_allclose(traj.final.rho[a], s.rho[a], rtol=1e-14)
            np.testing.assert_allclose(traj.final.u[a], 0.7, rtol=1e-14)
        mon = invariant_monitors(traj)
        assert mon.passed and mon.qDrift == pytest.approx((0.0, 0.0), abs=1e-12)

    @pytest.mark.parametrize("k,mass,a", [(1.0, 1.0, 1.0), (0.5, 2.0, 1.0), (2.0, 0.25, 1.0)])
    def test_counterflow_ode(self, k, mass, a):
        phi = CommunicationArray.uniform(2, RadialKernel.constant(k))
        traj = run_hydro(counterflow_state(256, a, mass), phi, 1.0)
        f = traj.final
        diff = f.u[0] - f.u[1]
        np.testing.assert_allclose(diff, 2 * a * math.exp(-2 * k * mass * f.t), atol=1e-4)

    def test_conservation_and_monitors(self):
        traj = run_hydro(random_smooth_state(128), PARETO_PAIR, 1.0)
        mon = invariant_monitors(traj)
        assert mon.massError <= 1e-14
        assert mon.momentumDrift <= traj.dx
        assert mon.passed
        assert traj.blowup is None

    def test_gradient_lower_bound(self):
        traj = run_hydro(random_smooth_state(128), PARETO_PAIR, 1.0)
        assert min(min(r.minDxU) for r in traj.records) >= -traj.source_bound

    def test_supercritical_blowup(self):
        traj = run_hydro(supercritical_state(128), SUPERCRITICAL_PHI, 3.0)
        assert traj.blowup is not None
        assert "gradient blow-up" in traj.blowup.reason
        assert traj.final.t < 3.0

    def test_blowup_raise(self):
        with pytest.raises(HydroBlowup):
            run_hydro(supercritical_state(128), SUPERCRITICAL_PHI, 3.0, raise_on_blowup=True)

    def test_cfl_violation(self):
        s = counterflow_state(16)
        with pytest.raises(ValueError, match="CFL"):
            step_hydro(s, PARETO_PAIR, 10.0)

    def test_stable_dt_respects_cfl(self):
        s = random_smooth_state(64)
        op = HydroOperator(PARETO_PAIR, 64, L)
        dt = stable_dt(s, op)
        step_hydro(s, op, dt)

    def test_snapshot_and_record_every(self):
        seen = []
        traj = run_hydro(counterflow_state(16), PARETO_PAIR, 0.5, record_every=5, snapshot=seen.append)
        assert len(seen) == len(traj.records)
        assert traj.records[-1].t == pytest.approx(0.5)

    def test_local_flux_runs(self):
        traj = run_hydro(random_smooth_state(64), PARETO_PAIR, 0.5, flux="local")
        assert invariant_monitors(traj).massError <= 1e-14
