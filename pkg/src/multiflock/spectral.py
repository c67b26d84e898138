"""Weighted graph Laplacians, their Fiedler pair, and weighted Poincare bounds.

Species interact through a symmetric array ``a`` of non-negative couplings
and carry positive weights ``w`` (masses or sizes).  The weighted Laplacian
has off-diagonal entries ``-a[i, j] * sqrt(w[i] * w[j])`` and diagonal
entries ``sum_{k != i} a[i, k] * w[k]``; its kernel contains ``sqrt(w)`` and
its second eigenvalue measures how well the species graph is connected.

All eigenvalue work goes through :func:`jacobi_eigh`, a cyclic Jacobi solver
written with elementwise numpy operations only, so results do not depend on
the BLAS threading configuration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

#: eigenvalues with ``|lambda| <= ZERO_CLAMP * ||L||`` are reported as exact zeros
ZERO_CLAMP = 1e-10
#: ``lambda_2 > CONNECTED_THRESHOLD * ||L||`` is declared connected
CONNECTED_THRESHOLD = 1e-9


class EigensolverError(RuntimeError):
    """Jacobi sweeps did not reduce the off-diagonal mass below tolerance."""

    def __init__(self, sweeps: int, off_norm: float):
        super().__init__(
            f"Jacobi eigensolver did not converge after {sweeps} sweeps "
            f"(off-diagonal norm {off_norm:.3e})"
        )
        self.sweeps = sweeps
        self.off_norm = off_norm


def jacobi_eigh(matrix, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm is at most
    ``tol * ||matrix||_F``.  Returns ``(eigenvalues, eigenvectors)`` sorted
    ascending, eigenvectors as columns.

    Raises
    ------
    EigensolverError
        if ``max_sweeps`` sweeps were not enough.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    v = np.eye(n)
    norm = math.sqrt(float(np.sum(a * a)))
    if norm == 0.0 or n == 1:
        return np.diag(a).copy(), v
    threshold = tol * norm

    def off_norm():
        upper = np.triu(a, 1)
        return math.sqrt(2.0 * float(np.sum(upper * upper)))

    for sweep in range(max_sweeps + 1):
        off = off_norm()
        if off <= threshold:
            order = np.argsort(np.diag(a), kind="stable")
            return np.diag(a)[order].copy(), v[:, order].copy()
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(tau) > 1e150:
                    t = 0.5 / tau
                else:
                    t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    raise EigensolverError(max_sweeps, off_norm())


def weight_vector(w) -> np.ndarray:
    """Validate species weights: a non-empty 1-D array of finite positive reals."""
    arr = np.array(w, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError("weight vector must contain at least one species")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError(f"weights must be finite and positive, got {arr.tolist()}")
    arr.setflags(write=False)
    return arr


def zeta(w) -> float:
    """All-but-heaviest weight fraction ``1 - max(w) / sum(w)``."""
    w = weight_vector(w)
    return 1.0 - float(w.max()) / float(w.sum())


def symmetric_array(a, *, nonnegative_offdiagonal: bool = True) -> np.ndarray:
    """Validate an interaction array: square, exactly symmetric, finite.

    Diagonal entries are unrestricted (negative self-interaction is allowed),
    off-diagonal entries must be non-negative unless the flag is cleared.
    """
    arr = np.array(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"interaction array must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("interaction array has non-finite entries")
    if not np.array_equal(arr, arr.T):
        raise ValueError("interaction array is not symmetric")
    if nonnegative_offdiagonal:
        off = arr[~np.eye(arr.shape[0], dtype=bool)]
        if np.any(off < 0.0):
            raise ValueError("off-diagonal couplings must be non-negative")
    arr.setflags(write=False)
    return arr


def _check_dims(a: np.ndarray, w: np.ndarray):
    if a.shape[0] != w.size:
        raise ValueError(
            f"dimension mismatch: array is {a.shape[0]}x{a.shape[0]}, weights have {w.size} entries"
        )


@dataclass(frozen=True, eq=False)
class WeightedLaplacian:
    """Weighted Laplacian of an interaction array with its (lazy) spectrum."""

    matrix: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def norm(self) -> float:
        return math.sqrt(float(np.sum(self.matrix * self.matrix)))

    @cached_property
    def _decomposition(self):
        values, vectors = jacobi_eigh(self.matrix)
        if values.size and abs(values[0]) <= ZERO_CLAMP * self.norm:
            values[0] = 0.0
        values.setflags(write=False)
        vectors.setflags(write=False)
        return values, vectors

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._decomposition[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._decomposition[1]

    @cached_property
    def fiedler(self) -> tuple[float, np.ndarray]:
        values, vectors = self._decomposition
        if self.n == 1:
            return 0.0, np.zeros(1)
        root = np.sqrt(self.weights)
        root = root / math.sqrt(float(np.sum(root * root)))
        # pick the unit vector in span{v1, v2} orthogonal to sqrt(w); this
        # copes with a repeated zero eigenvalue
        best = None
        for k in (1, 0):
            cand = vectors[:, k] - float(np.sum(vectors[:, k] * root)) * root
            size = math.sqrt(float(np.sum(cand * cand)))
            if best is None or size > best[0] + 1e-8:
                best = (size, cand)
        vec = best[1] / best[0]
        # deterministic sign: first entry of largest magnitude is positive
        if vec[int(np.argmax(np.abs(vec)))] < 0:
            vec = -vec
        return max(float(values[1]), 0.0), vec

    @property
    def lambda2(self) -> float:
        return self.fiedler[0]

    def is_connected(self, rel_threshold: float = CONNECTED_THRESHOLD) -> bool:
        return self.n == 1 or self.lambda2 > rel_threshold * self.norm

    def kernel_residual(self) -> float:
        """``||L sqrt(w)||`` -- zero up to rounding for every weighted Laplacian."""
        r = np.sum(self.matrix * np.sqrt(self.weights)[None, :], axis=1)
        return math.sqrt(float(np.sum(r * r)))


def build_weighted_laplacian(a, w) -> WeightedLaplacian:
    """Weighted graph Laplacian of ``a`` with weights ``w``.

    The diagonal of ``a`` never enters the result.
    """
    a = symmetric_array(a, nonnegative_offdiagonal=False)
    w = weight_vector(w)
    _check_dims(a, w)
    off = np.array(a)
    np.fill_diagonal(off, 0.0)
    root = np.sqrt(w)
    matrix = -off * root[:, None] * root[None, :]
    np.fill_diagonal(matrix, np.sum(off * w[None, :], axis=1))
    matrix.setflags(write=False)
    return WeightedLaplacian(matrix, w)


def lambda2(laplacian: WeightedLaplacian) -> tuple[float, np.ndarray]:
    """Second-smallest eigenvalue and a unit Fiedler vector orthogonal to ``sqrt(w)``."""
    return laplacian.fiedler


def algebraic_connectivity(a, w) -> float:
    """Shorthand for ``lambda2(build_weighted_laplacian(a, w))[0]``."""
    return build_weighted_laplacian(a, w).lambda2


def _pair_sq_dist(x: np.ndarray) -> np.ndarray:
    if x.ndim == 1:
        x = x[:, None]
    diff = x[:, None, :] - x[None, :, :]
    return np.sum(diff * diff, axis=-1)


def poincare_gap_vectors(a, w, x) -> tuple[float, float]:
    """Both sides of the weighted Poincare inequality for species vectors.

    ``x`` holds one point of R^d per species (shape ``(n,)`` or ``(n, d)``).
    Returns ``(lhs, rhs)`` with ``lhs >= rhs`` up to rounding.
    """
    a = symmetric_array(a, nonnegative_offdiagonal=False)
    w = weight_vector(w)
    _check_dims(a, w)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != w.size:
        raise ValueError("one vector per species required")
    sq = _pair_sq_dist(x) * w[:, None] * w[None, :]
    lhs = float(np.sum(a * sq))
    lam = build_weighted_laplacian(a, w).lambda2
    rhs = lam / float(w.sum()) * float(np.sum(sq))
    return lhs, rhs


class SpeciesSample(NamedTuple):
    """Atomic measure for one species: point masses and their value vectors."""

    masses: np.ndarray
    values: np.ndarray


def _as_samples(samples, n: int) -> list[SpeciesSample]:
    if len(samples) != n:
        raise ValueError(f"expected samples for {n} species, got {len(samples)}")
    out = []
    for k, (m, u) in enumerate(samples):
        m = np.asarray(m, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float)
        if m.size == 0:
            raise ValueError(f"species {k} has an empty sample")
        if u.ndim == 1:
            u = u[:, None]
        if u.shape[0] != m.size:
            raise ValueError(f"species {k}: {m.size} masses but {u.shape[0]} values")
        if np.any(m <= 0.0):
            raise ValueError(f"species {k}: point masses must be positive")
        out.append(SpeciesSample(m, u))
    return out


def pair_fluctuations(samples) -> np.ndarray:
    """Matrix ``F[a, b] = sum_{k,l} m_k m_l |u_ak - u_bl|^2`` over species pairs.

    Uses first and second moments, so the cost is linear in the sample sizes.
    """
    mass = np.array([s.masses.sum() for s in samples])
    first = np.array([np.sum(s.masses[:, None] * s.values, axis=0) for s in samples])
    second = np.array([np.sum(s.masses * np.sum(s.values * s.values, axis=1)) for s in samples])
    cross = np.sum(first[:, None, :] * first[None, :, :], axis=-1)
    fluct = mass[:, None] * second[None, :] + second[:, None] * mass[None, :] - 2.0 * cross
    return np.maximum(fluct, 0.0)


def _sample_weights(samples, w: np.ndarray) -> None:
    mass = np.array([s.masses.sum() for s in samples])
    if not np.allclose(mass, w, rtol=1e-12, atol=0.0):
        raise ValueError(f"sample masses {mass.tolist()} do not match weights {w.tolist()}")


def poincare_rate(a, w) -> float:
    """``lambda_2 * zeta(w) / sum(w)``, the rate of the function-valued inequality."""
    w = weight_vector(w)
    return algebraic_connectivity(a, w) * zeta(w) / float(w.sum())


def poincare_gap_functions(a, w, samples) -> tuple[float, float, float]:
    """Weighted Poincare inequality for per-species atomic measures.

    Returns ``(lhs_offdiag, rhs, rate)``: the left side sums only over
    distinct species pairs, the right side includes within-species terms.
    """
    a = symmetric_array(a)
    w = weight_vector(w)
    _check_dims(a, w)
    samples = _as_samples(samples, w.size)
    _sample_weights(samples, w)
    fluct = pair_fluctuations(samples)
    off = ~np.eye(w.size, dtype=bool)
    lhs = float(np.sum((a * fluct)[off]))
    rate = poincare_rate(a, w)
    return lhs, rate * float(np.sum(fluct)), rate


def poincare_full_sum(a, w, samples) -> tuple[float, float]:
    """Full double sum (diagonal included) against half the Poincare bound.

    With diagonal entries no smaller than :func:`dealignment_margin` of the
    off-diagonal part, ``full >= half_bound`` holds.
    """
    a = symmetric_array(a)
    a_diag = np.asarray(a, dtype=float)
    w = weight_vector(w)
    _check_dims(a_diag, w)
    samples = _as_samples(samples, w.size)
    _sample_weights(samples, w)
    fluct = pair_fluctuations(samples)
    rate = poincare_rate(a_diag, w)
    return float(np.sum(a_diag * fluct)), 0.5 * rate * float(np.sum(fluct))


def degree_lower_bound(a, w, gamma: int) -> tuple[float, float]:
    """Weighted degree of node ``gamma`` and its spectral lower bound ``zeta * lambda_2``."""
    a = symmetric_array(a)
    w = weight_vector(w)
    _check_dims(a, w)
    if not 0 <= gamma < w.size:
        raise IndexError(f"species index {gamma} out of range for {w.size} species")
    row = np.array(a[gamma])
    row[gamma] = 0.0
    degree = float(np.sum(row * w))
    return degree, zeta(w) * algebraic_connectivity(a, w)


class SandwichBound(NamedTuple):
    lower: float
    ratio: float | None
    upper: float

    @property
    def connected(self) -> bool:
        return self.ratio is not None


def sandwich_bound(a, w) -> SandwichBound:
    """Compare weighted and unweighted Fiedler numbers.

    ``ratio = lambda_2(weighted) / lambda_2(unweighted)`` lies in
    ``[sum(w) / (kappa^2 n), sum(w) kappa^2 / n]`` with ``kappa = max w / min w``.
    A disconnected array gives ``ratio=None``.
    """
    a = symmetric_array(a)
    w = weight_vector(w)
    _check_dims(a, w)
    n = w.size
    if n < 2:
        raise ValueError("sandwich bound needs at least two species")
    kappa = float(w.max() / w.min())
    total = float(w.sum())
    lower = total / (kappa**2 * n)
    upper = total * kappa**2 / n
    plain = build_weighted_laplacian(a, np.ones(n))
    if not plain.is_connected():
        return SandwichBound(lower, None, upper)
    return SandwichBound(lower, build_weighted_laplacian(a, w).lambda2 / plain.lambda2, upper)


def dealignment_margin(a, w) -> float:
    """Most negative admissible self-interaction amplitude.

    Equals ``-lambda_2 * zeta / (2 sum(w))`` of the off-diagonal part; zero
    when the array is disconnected.
    """
    a = symmetric_array(a)
    w = weight_vector(w)
    _check_dims(a, w)
    lap = build_weighted_laplacian(a, w)
    if not lap.is_connected():
        return 0.0
    return -0.5 * lap.lambda2 * zeta(w) / float(w.sum())


def is_connected(a, w=None, rel_threshold: float = CONNECTED_THRESHOLD) -> bool:
    a = np.asarray(a, dtype=float)
    if w is None:
        w = np.ones(a.shape[0])
    return build_weighted_laplacian(a, w).is_connected(rel_threshold)


__all__: Sequence[str] = (
    "EigensolverError",
    "jacobi_eigh",
    "weight_vector",
    "zeta",
    "symmetric_array",
    "WeightedLaplacian",
    "build_weighted_laplacian",
    "lambda2",
    "algebraic_connectivity",
    "poincare_gap_vectors",
    "poincare_gap_functions",
    "poincare_full_sum",
    "poincare_rate",
    "pair_fluctuations",
    "SpeciesSample",
    "degree_lower_bound",
    "SandwichBound",
    "sandwich_bound",
    "dealignment_margin",
    "is_connected",
)
