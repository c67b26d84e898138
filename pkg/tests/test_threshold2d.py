import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multiflock.kernels import CommunicationArray, RadialKernel, TailFit
from multiflock.swarm import max_pair_distance
from multiflock.threshold2d import (
    Field2D,
    classify,
    compute_c1,
    convolve2d,
    divergence,
    gaussian_bump,
    linear_velocity,
    load_fields,
    save_fields,
    spectral_gap_field,
    support_diameter,
    velocity_spread,
)

from oracles import spectral_gap_cellwise
from threshold_cases import CROSS, PARETO, coordinates, pareto_bumps, two_bumps

H = 0.1


def grid(n=11, h=H):
    return coordinates((n, n), h, -0.5 * h * (n - 1), -0.5 * h * (n - 1))


class TestField:
    def test_boundary_ring_must_vanish(self):
        rho = np.ones((5, 5))
        with pytest.raises(ValueError, match="boundary"):
            Field2D(H, [rho], [np.zeros((5, 5, 2))])

    def test_zero_mass(self):
        with pytest.raises(ValueError, match="zero mass"):
            Field2D(H, [np.zeros((5, 5))], [np.zeros((5, 5, 2))])

    def test_shape_mismatch(self):
        rho = np.zeros((5, 5))
        rho[2, 2] = 1
        with pytest.raises(ValueError):
            Field2D(H, [rho], [np.zeros((5, 4, 2))])

    def test_masses(self):
        f = two_bumps()
        np.testing.assert_allclose(f.masses(), [1.0, 1.0], rtol=1e-13)

    def test_file_round_trip(self, tmp_path):
        f = two_bumps(h=0.25, matrices=([[0, -1], [1, 0]], None))
        save_fields(f, tmp_path / "f.txt")
        g = load_fields(tmp_path / "f.txt")
        assert g.h == f.h and (g.x0, g.y0) == (f.x0, f.y0)
        for a in range(2):
            assert np.array_equal(g.rho[a], f.rho[a]) and np.array_equal(g.u[a], f.u[a])

    def test_bad_header(self, tmp_path):
        (tmp_path / "f.txt").write_text("3 3\n")
        with pytest.raises(ValueError, match="header"):
            load_fields(tmp_path / "f.txt")


class TestConvolution:
    def test_constant_kernel(self):
        f = two_bumps()
        out = convolve2d(RadialKernel.constant(0.4), f.rho[0], f.h)
        np.testing.assert_allclose(out, 0.4 * f.masses()[0], rtol=1e-12)

    def test_hot_cell_profile(self):
        n = 9
        rho = np.zeros((n, n))
        rho[4, 3] = 1.0 / H**2
        kern = RadialKernel.pareto(1.0, 0.7)
        out = convolve2d(kern, rho, H)
        for i in range(n):
            for j in range(n):
                assert out[i, j] == pytest.approx(float(kern(H * math.hypot(i - 4, j - 3))), rel=1e-12, abs=1e-14)

    def test_two_cells_superpose(self):
        n = 9
        a = np.zeros((n, n))
        b = np.zeros((n, n))
        a[2, 2] = 3.0
        b[6, 5] = 1.5
        kern = RadialKernel.cutoff(2.0, 0.35)
        np.testing.assert_allclose(
            convolve2d(kern, a + b, H), convolve2d(kern, a, H) + convolve2d(kern, b, H), atol=1e-13
        )

    def test_zero_kernel(self):
        assert np.all(convolve2d(RadialKernel.zero(), np.ones((4, 4)), H) == 0)


class TestSpectralGap:
    def test_rotation(self):
        X, Y = grid()
        eta = spectral_gap_field(linear_velocity(X, Y, [[0, -1], [1, 0]]), H)
        np.testing.assert_allclose(eta, 0.0, atol=1e-12)

    def test_shear(self):
        X, Y = grid()
        eta = spectral_gap_field(linear_velocity(X, Y, [[0, 1], [0, 0]]), H)
        np.testing.assert_allclose(eta, 1.0, atol=1e-12)

    def test_dilation(self):
        X, Y = grid()
        u = linear_velocity(X, Y, np.eye(2))
        np.testing.assert_allclose(spectral_gap_field(u, H), 0.0, atol=1e-12)
        np.testing.assert_allclose(divergence(u, H), 2.0, atol=1e-12)

    def test_matches_cellwise_eigh(self, rng):
        for _ in range(5):
            u = rng.normal(size=(12, 9, 2))
            np.testing.assert_allclose(spectral_gap_field(u, 0.3), spectral_gap_cellwise(u, 0.3), atol=1e-12)


class TestC1:
    @pytest.mark.parametrize("k", [0.5, 1.0, 3.0])
    def test_constant_kernel(self, k):
        phi = CommunicationArray(2, {(0, 1): RadialKernel.constant(k)})
        for d_inf in (0.0, 1.0, 100.0):
            assert compute_c1(phi, [1, 1], d_inf) == pytest.approx(k / math.sqrt(2))

    def test_pareto_formula(self):
        phi = CommunicationArray(
            2, {(0, 1): RadialKernel.pareto(2.0, 0.5), (0, 0): RadialKernel.constant(1.0)}
        )
        # species 1: 1*M1 + 2/sqrt(4)*M2 = 0.5 + 3 ; species 2: 2/2 * 0.5 = 0.5
        assert compute_c1(phi, [0.5, 3.0], 3.0) == pytest.approx(0.5 / math.sqrt(2))

    def test_disconnected_row(self):
        phi = CommunicationArray(3, {(0, 1): RadialKernel.constant(1.0)})
        assert compute_c1(phi, [1, 1, 1], 1.0) == 0.0

    @given(st.floats(0, 50), st.floats(0, 50))
    @settings(max_examples=50)
    def test_monotone_in_diameter(self, d1, d2):
        lo, hi = sorted((d1, d2))
        assert compute_c1(PARETO, [1.0, 2.0], hi) <= compute_c1(PARETO, [1.0, 2.0], lo)

    def test_negative_diameter(self):
        with pytest.raises(ValueError):
            compute_c1(PARETO, [1, 1], -1.0)


class TestClassify:
    def test_trivially_subcritical(self):
        rep = classify(two_bumps(), CROSS, d_inf=5.0)
        assert rep.verdict == "subcritical"
        assert rep.C1 == pytest.approx(1 / math.sqrt(2))
        assert rep.deltaV0 == 0.0
        for s in rep.species:
            assert s.maxSpectralGap == pytest.approx(0.0, abs=1e-12)
            assert s.minDivPlusConv == pytest.approx(1.0, rel=1e-12)

    def test_shear_supercritical_by_gap(self):
        A = 2.0
        rep = classify(two_bumps(matrices=([[0, A], [0, 0]], None)), CROSS, d_inf=5.0)
        assert rep.verdict == "supercritical"
        assert rep.species[0].maxSpectralGap == pytest.approx(A, abs=1e-12)
        assert rep.species[0].conditionB is False
        assert rep.species[0].conditionA

    def test_compression_supercritical_by_divergence(self):
        B = 3.0
        rep = classify(two_bumps(matrices=([[-B, 0], [0, -B]], None)), CROSS, d_inf=5.0)
        assert rep.verdict == "supercritical"
        assert rep.species[0].conditionA is False
        assert rep.species[0].minDivPlusConv == pytest.approx(-2 * B + 1.0, rel=1e-12)

    def test_indeterminate_without_diameter(self):
        rep = classify(two_bumps(), CROSS)
        assert rep.verdict == "indeterminate" and rep.C1 is None and rep.notes

    def test_forecast_diameter(self):
        tail = TailFit(0.0, 2.0, True, "", 2.0)
        rep = classify(two_bumps(), CROSS, tail=tail)
        assert rep.DInfinitySource == "forecast"
        # already flocked: the forecast diameter is the initial one
        assert rep.DInfinityEstimate == pytest.approx(rep.D0)

    def test_disconnected_never_subcritical(self):
        phi = CommunicationArray(2, {(0, 0): RadialKernel.constant(1.0)})
        rep = classify(two_bumps(), phi, d_inf=1.0)
        assert rep.C1 == 0.0 and rep.verdict == "supercritical"

    def test_species_count_mismatch(self):
        with pytest.raises(ValueError):
            classify(two_bumps(), CommunicationArray.uniform(3, RadialKernel.constant(1)), d_inf=1)

    def test_diameter_and_spread_brute_force(self):
        f = two_bumps(h=0.2, matrices=([[0, -1], [1, 0]], [[0.3, 0], [0, 0.3]]))
        X, Y = f.coordinates()
        pts = np.concatenate([np.column_stack([X[f.support(a)], Y[f.support(a)]]) for a in range(2)])
        assert support_diameter(f) == pytest.approx(max_pair_distance(pts)[0], rel=1e-14)
        vel = np.concatenate([f.u[a][f.support(a)] for a in range(2)])
        assert velocity_spread(f) == pytest.approx(max_pair_distance(vel)[0], rel=1e-14)

    def test_refinement_is_first_order(self):
        coarse = classify(pareto_bumps(0.1), PARETO, d_inf=10.0)
        fine = classify(pareto_bumps(0.05), PARETO, d_inf=10.0)
        for a in range(2):
            dm = abs(coarse.species[a].minDivPlusConv - fine.species[a].minDivPlusConv)
            dg = abs(coarse.species[a].maxSpectralGap - fine.species[a].maxSpectralGap)
            assert dm <= 0.1 * 5 and dg <= 0.1 * 5
        assert coarse.verdict == fine.verdict

    def test_report_serialises(self):
        d = classify(two_bumps(), CROSS, d_inf=5.0).to_dict()
        assert d["verdict"] == "subcritical" and len(d["species"]) == 2
