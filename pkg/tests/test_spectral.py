import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from multiflock import spectral
from multiflock.spectral import (
    EigensolverError,
    algebraic_connectivity,
    build_weighted_laplacian,
    dealignment_margin,
    degree_lower_bound,
    jacobi_eigh,
    poincare_full_sum,
    poincare_gap_functions,
    poincare_gap_vectors,
    sandwich_bound,
    symmetric_array,
    weight_vector,
    zeta,
)

from oracles import kth_eigenvalue, laplacian_by_loops, random_connected_array


@st.composite
def arrays_and_weights(draw, n_min=1, n_max=6, zero_diag=False):
    n = draw(st.integers(n_min, n_max))
    vals = draw(arrays(float, (n, n), elements=st.floats(0.0, 5.0, allow_subnormal=False)))
    a = np.triu(vals, 1)
    a = a + a.T
    if not zero_diag:
        a = a + np.diag(np.diag(vals))
    w = draw(arrays(float, n, elements=st.floats(0.05, 20.0)))
    return a, w


class TestWeights:
    def test_zeta_single_species_is_zero(self):
        assert zeta([3.0]) == 0.0

    def test_zeta_equal_weights(self):
        assert zeta([1, 1, 1, 1]) == pytest.approx(0.75)

    @given(arrays(float, st.integers(1, 8), elements=st.floats(1e-3, 1e3)))
    def test_zeta_range(self, w):
        z = zeta(w)
        assert 0.0 <= z < 1.0
        if w.size == 1:
            assert z == 0.0
        else:
            assert z > 0.0

    @pytest.mark.parametrize("bad", [[], [1.0, 0.0], [1.0, -2.0], [math.inf], [math.nan]])
    def test_invalid_weights_rejected(self, bad):
        with pytest.raises(ValueError):
            weight_vector(bad)

    def test_nonsymmetric_rejected(self):
        with pytest.raises(ValueError, match="not symmetric"):
            symmetric_array([[0, 1], [2, 0]])

    def test_negative_offdiagonal_rejected(self):
        with pytest.raises(ValueError):
            symmetric_array([[0, -1], [-1, 0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            build_weighted_laplacian([[0, 1], [1, 0]], [1, 1, 1])


class TestLaplacianConstruction:
    def test_unit_pair(self):
        L = build_weighted_laplacian([[0, 1], [1, 0]], [1, 1]).matrix
        np.testing.assert_array_equal(L, [[1, -1], [-1, 1]])

    def test_diagonal_ignored(self):
        L = build_weighted_laplacian([[5, 1], [1, 7]], [2, 3]).matrix
        np.testing.assert_allclose(L, [[3, -math.sqrt(6)], [-math.sqrt(6), 2]], rtol=0, atol=1e-15)

    def test_cycle_of_four_kernel(self):
        a = np.zeros((4, 4))
        for i in range(4):
            a[i, (i + 1) % 4] = a[(i + 1) % 4, i] = 1.0
        lap = build_weighted_laplacian(a, np.ones(4))
        assert lap.kernel_residual() <= 1e-14
        # unweighted 4-cycle spectrum is {0, 2, 2, 4}
        np.testing.assert_allclose(lap.eigenvalues, [0, 2, 2, 4], atol=1e-12)

    def test_matches_loop_oracle(self, rng):
        for _ in range(20):
            n = rng.integers(1, 7)
            a = random_connected_array(rng, n)
            w = rng.uniform(0.1, 5.0, n)
            np.testing.assert_allclose(
                build_weighted_laplacian(a, w).matrix, laplacian_by_loops(a, w), rtol=1e-15, atol=1e-15
            )

    @given(arrays_and_weights())
    def test_diagonal_independence(self, aw):
        a, w = aw
        b = a.copy()
        np.fill_diagonal(b, np.arange(a.shape[0]) * 3.0 - 1.0)
        assert np.array_equal(build_weighted_laplacian(a, w).matrix, build_weighted_laplacian(b, w).matrix)

    @given(arrays_and_weights())
    def test_kernel_property(self, aw):
        a, w = aw
        lap = build_weighted_laplacian(a, w)
        assert lap.kernel_residual() <= 1e-12 * max(lap.norm, 1.0) * math.sqrt(w.sum())

    @given(arrays_and_weights())
    @settings(deadline=None)
    def test_positive_semidefinite_and_sorted(self, aw):
        a, w = aw
        lap = build_weighted_laplacian(a, w)
        ev = lap.eigenvalues
        assert ev[0] >= -1e-10 * max(lap.norm, 1e-300)
        assert np.all(np.diff(ev) >= 0)
        assert abs(ev[0]) <= 1e-10 * max(lap.norm, 1e-300)

    @given(arrays_and_weights(n_min=2), st.data())
    @settings(deadline=None)
    def test_quadratic_form_identity(self, aw, data):
        a, w = aw
        x = data.draw(arrays(float, w.size, elements=st.floats(-10, 10)))
        lap = build_weighted_laplacian(a, w)
        y = np.sqrt(w) * x
        lhs = float(y @ lap.matrix @ y)
        rhs = 0.0
        for i in range(w.size):
            for j in range(w.size):
                if i != j:
                    rhs += 0.5 * a[i, j] * (x[i] - x[j]) ** 2 * w[i] * w[j]
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9 * (1 + abs(rhs)))


class TestEigensolver:
    def test_matches_numpy(self, rng):
        for _ in range(30):
            n = rng.integers(1, 9)
            m = rng.normal(size=(n, n))
            m = m + m.T
            vals, vecs = jacobi_eigh(m)
            np.testing.assert_allclose(vals, np.linalg.eigvalsh(m), atol=1e-10)
            np.testing.assert_allclose(m @ vecs, vecs * vals[None, :], atol=1e-9)
            np.testing.assert_allclose(vecs.T @ vecs, np.eye(n), atol=1e-12)

    def test_non_convergence_reported(self):
        m = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
        with pytest.raises(EigensolverError):
            jacobi_eigh(m, tol=1e-300, max_sweeps=0)

    def test_lambda2_against_bisection_oracle(self, rng):
        for _ in range(40):
            n = rng.integers(2, 7)
            a = rng.uniform(0, 3, (n, n))
            a = (a + a.T) / 2
            w = rng.uniform(0.1, 10, n)
            lap = build_weighted_laplacian(a, w)
            expected = kth_eigenvalue(lap.matrix, 1)
            assert lap.lambda2 == pytest.approx(expected, rel=1e-8, abs=1e-12)

    def test_deterministic(self, rng):
        a = random_connected_array(rng, 6)
        w = rng.uniform(0.1, 3, 6)
        first = build_weighted_laplacian(a, w)
        second = build_weighted_laplacian(a.copy(), w.copy())
        assert first.lambda2 == second.lambda2
        assert np.array_equal(first.fiedler[1], second.fiedler[1])


class TestFiedler:
    @pytest.mark.parametrize("k,m1,m2", [(1.0, 1.0, 1.0), (2.5, 0.3, 4.0), (0.1, 7.0, 2.0)])
    def test_two_species_closed_form(self, k, m1, m2):
        lam = algebraic_connectivity([[0, k], [k, 0]], [m1, m2])
        assert lam == pytest.approx(k * (m1 + m2), rel=1e-13)
        lap = build_weighted_laplacian([[0, k], [k, 0]], [m1, m2])
        assert lam == pytest.approx(np.linalg.eigvalsh(lap.matrix)[1], rel=1e-12)

    def test_two_species_vector(self):
        lam, vec = build_weighted_laplacian([[0, 1], [1, 0]], [2, 3]).fiedler
        assert lam == pytest.approx(5.0, rel=1e-14)
        expected = np.array([math.sqrt(3), -math.sqrt(2)]) / math.sqrt(5)
        np.testing.assert_allclose(vec, expected, atol=1e-14)

    def test_disconnected_blocks(self):
        a = np.zeros((4, 4))
        a[0, 1] = a[1, 0] = 1.0
        a[2, 3] = a[3, 2] = 2.0
        lap = build_weighted_laplacian(a, [1, 2, 3, 4])
        assert abs(lap.lambda2) <= 1e-12 * lap.norm
        assert not lap.is_connected()
        assert not spectral.is_connected(a)
        vec = lap.fiedler[1]
        assert abs(vec @ np.sqrt([1, 2, 3, 4])) < 1e-12
        assert np.linalg.norm(vec) == pytest.approx(1.0)

    def test_single_species(self):
        lap = build_weighted_laplacian([[3.0]], [2.0])
        assert lap.lambda2 == 0.0
        assert lap.is_connected()

    @given(arrays_and_weights(n_min=2), st.data())
    @settings(deadline=None)
    def test_monotone_in_entries(self, aw, data):
        a, w = aw
        extra = data.draw(arrays(float, a.shape, elements=st.floats(0.0, 3.0)))
        extra = np.triu(extra, 1)
        b = a + extra + extra.T
        lam_a = algebraic_connectivity(a, w)
        lam_b = algebraic_connectivity(b, w)
        scale = build_weighted_laplacian(b, w).norm
        assert lam_a <= lam_b + 1e-10 * max(scale, 1.0)


class TestPoincare:
    def test_constant_vector(self):
        assert poincare_gap_vectors([[0, 1], [1, 0]], [1, 2], [3.0, 3.0]) == (0.0, 0.0)

    def test_fiedler_equality(self, rng):
        for _ in range(20):
            n = rng.integers(2, 7)
            a = random_connected_array(rng, n)
            w = rng.uniform(0.2, 5, n)
            _, vec = build_weighted_laplacian(a, w).fiedler
            lhs, rhs = poincare_gap_vectors(a, w, vec / np.sqrt(w))
            assert lhs == pytest.approx(rhs, rel=1e-8)

    @given(arrays_and_weights(n_min=2), st.data())
    @settings(deadline=None)
    def test_inequality(self, aw, data):
        a, w = aw
        d = data.draw(st.integers(1, 3))
        x = data.draw(arrays(float, (w.size, d), elements=st.floats(-5, 5)))
        lhs, rhs = poincare_gap_vectors(a, w, x)
        assert lhs >= rhs - 1e-9 * (1 + abs(rhs))

    def test_all_samples_equal(self):
        samples = [([0.5, 0.5], [[1.0], [1.0]]), ([2.0], [[1.0]])]
        lhs, rhs, rate = poincare_gap_functions([[0, 1], [1, 0]], [1.0, 2.0], samples)
        assert lhs == 0.0 and rhs == 0.0
        assert rate > 0

    def test_single_points_reduce_to_vectors(self, rng):
        a = random_connected_array(rng, 3)
        w = np.array([1.0, 2.0, 0.5])
        x = rng.normal(size=(3, 2))
        lhs_v, rhs_v = poincare_gap_vectors(a, w, x)
        lhs_f, rhs_f, _ = poincare_gap_functions(a, w, [([w[k]], x[k : k + 1]) for k in range(3)])
        assert lhs_f == pytest.approx(lhs_v, rel=1e-12)
        # the function-valued rate carries the extra all-but-heaviest factor
        assert rhs_f == pytest.approx(zeta(w) * rhs_v, rel=1e-12)

    def test_pm_one_grid(self):
        samples = [([0.5, 0.5], [[1.0], [-1.0]]), ([0.5, 0.5], [[1.0], [-1.0]])]
        lhs, rhs, rate = poincare_gap_functions([[0, 1], [1, 0]], [1.0, 1.0], samples)
        assert rate == pytest.approx(0.5)
        brute_lhs = 0.0
        brute_all = 0.0
        vals = [1.0, -1.0]
        for a in range(2):
            for b in range(2):
                for u in vals:
                    for v in vals:
                        brute_all += 0.25 * (u - v) ** 2
                        if a != b:
                            brute_lhs += 0.25 * (u - v) ** 2
        assert lhs == pytest.approx(brute_lhs)
        assert rhs == pytest.approx(0.5 * brute_all)
        assert lhs >= rhs

    def test_sample_masses_must_match_weights(self):
        with pytest.raises(ValueError, match="do not match"):
            poincare_gap_functions([[0, 1], [1, 0]], [1, 1], [([0.5], [[0.0]]), ([1.0], [[1.0]])])

    def test_atomic_inequality_fuzz(self, rng):
        for trial in range(100):
            n = rng.integers(2, 6)
            a = random_connected_array(rng, n, zero_diagonal=bool(trial % 2))
            w = rng.uniform(0.2, 4, n)
            samples = []
            for k in range(n):
                m = rng.uniform(0.1, 1.0, rng.integers(1, 6))
                m *= w[k] / m.sum()
                samples.append((m, rng.normal(size=(m.size, 2))))
            lhs, rhs, _ = poincare_gap_functions(a, w, samples)
            assert lhs >= rhs * (1 - 1e-10)


class TestDegreeAndSandwich:
    @pytest.mark.parametrize("k", [0.5, 1.0, 3.0])
    def test_degree_equality(self, k):
        deg, bound = degree_lower_bound([[0, k], [k, 0]], [1, 1], 1)
        assert deg == pytest.approx(k)
        assert bound == pytest.approx(k)

    def test_degree_disconnected(self):
        a = np.zeros((4, 4))
        a[0, 1] = a[1, 0] = 1
        deg, bound = degree_lower_bound(a, np.ones(4), 2)
        assert bound == 0.0 and deg >= 0.0

    def test_degree_fuzz(self, rng):
        for _ in range(50):
            a = random_connected_array(rng, 5)
            w = rng.uniform(0.1, 5, 5)
            for g in range(5):
                deg, bound = degree_lower_bound(a, w, g)
                assert deg >= bound * (1 - 1e-10)

    def test_sandwich_equal_weights(self, rng):
        a = random_connected_array(rng, 4)
        sb = sandwich_bound(a, np.ones(4))
        assert sb.lower == sb.upper == 1.0
        assert sb.ratio == pytest.approx(1.0, rel=1e-12)

    def test_sandwich_two_species(self):
        sb = sandwich_bound([[0, 1], [1, 0]], [2, 3])
        assert sb.ratio == pytest.approx(2.5, rel=1e-13)
        assert sb.lower == pytest.approx(5 / (2.25 * 2))
        assert sb.upper == pytest.approx(5 * 2.25 / 2)

    def test_sandwich_disconnected(self):
        sb = sandwich_bound(np.zeros((3, 3)), [1, 2, 3])
        assert not sb.connected and sb.ratio is None

    def test_sandwich_fuzz(self, rng):
        for _ in range(100):
            n = rng.integers(2, 7)
            a = random_connected_array(rng, n)
            w = rng.uniform(0.1, 10, n)
            sb = sandwich_bound(a, w)
            assert sb.lower * (1 - 1e-10) <= sb.ratio <= sb.upper * (1 + 1e-10)


class TestDealignment:
    def test_disconnected_zero(self):
        assert dealignment_margin(np.zeros((2, 2)), [1, 1]) == 0.0

    def test_two_species_value(self):
        assert dealignment_margin([[0, 1], [1, 0]], [1, 1]) == pytest.approx(-0.25)

    def test_half_poincare_with_margin_diagonal(self, rng):
        for _ in range(100):
            n = rng.integers(2, 5)
            a = random_connected_array(rng, n, zero_diagonal=True)
            w = rng.uniform(0.2, 3.0, n)
            margin = dealignment_margin(a, w)
            b = a.copy()
            np.fill_diagonal(b, margin)
            samples = []
            for k in range(n):
                m = rng.uniform(0.1, 1.0, rng.integers(1, 5))
                m *= w[k] / m.sum()
                samples.append((m, rng.normal(size=(m.size, 2))))
            full, half = poincare_full_sum(b, w, samples)
            assert full >= half * (1 - 1e-9) - 1e-12
