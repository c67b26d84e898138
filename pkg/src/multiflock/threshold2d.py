"""Critical-threshold classification of two-dimensional initial data.

Given compactly supported densities ``rho_a`` and velocities ``u_a`` on a
uniform grid, the data are sub-critical when, on the support of each species,

  (a) ``div u_a + sum_b phi_ab * rho_b > 0``,
  (b) the eigenvalue gap ``eta`` of the symmetric velocity gradient stays
      below ``C1 / 2``, and
  (c) the initial velocity spread ``dV0`` is at most ``C1``,

with ``C1 = min_a sum_b phi_ab(D_inf) M_b / sqrt(2)`` and ``D_inf`` a bound on
the eventual spatial diameter.  Only the initial data are classified; the
two-dimensional evolution is not simulated.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal, spatial

from .kernels import CommunicationArray, RadialKernel, TailFit
from .swarm import diameter_forecast, max_pair_distance


@dataclass
class Field2D:
    """Densities and velocities of every species on a uniform square grid.

    ``rho[a]`` has shape ``(nx, ny)`` and ``u[a]`` shape ``(nx, ny, 2)``;
    cell ``(i, j)`` sits at ``(x0 + i h, y0 + j h)``.
    """

    h: float
    rho: list[np.ndarray]
    u: list[np.ndarray]
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        self.rho = [np.asarray(r, dtype=float) for r in self.rho]
        self.u = [np.asarray(v, dtype=float) for v in self.u]
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if not self.rho or len(self.rho) != len(self.u):
            raise ValueError("need matching, non-empty density and velocity lists")
        shape = self.rho[0].shape
        if len(shape) != 2 or min(shape) < 3:
            raise ValueError(f"densities must be 2D grids of at least 3x3 cells, got {shape}")
        for a, (r, v) in enumerate(zip(self.rho, self.u)):
            if r.shape != shape or v.shape != shape + (2,):
                raise ValueError(f"species {a + 1}: shapes {r.shape} / {v.shape} do not match {shape}")
            if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
                raise ValueError(f"species {a + 1}: non-finite values")
            if np.any(r < 0):
                raise ValueError(f"species {a + 1}: negative density")
            ring = np.concatenate([r[0], r[-1], r[:, 0], r[:, -1]])
            if np.any(ring != 0):
                raise ValueError(f"species {a + 1}: density does not vanish on the grid boundary")
            if not np.sum(r) > 0:
                raise ValueError(f"species {a + 1}: zero mass")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rho[0].shape

    @property
    def n_species(self) -> int:
        return len(self.rho)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.shape
        x = self.x0 + self.h * np.arange(nx)
        y = self.y0 + self.h * np.arange(ny)
        return np.meshgrid(x, y, indexing="ij")

    def masses(self) -> np.ndarray:
        return np.array([float(np.sum(r)) * self.h * self.h for r in self.rho])

    def support(self, a: int) -> np.ndarray:
        return self.rho[a] > 0


# ---------------------------------------------------------------- fields


def kernel_table(kernel: RadialKernel, shape: tuple[int, int], h: float) -> np.ndarray:
    """``T[p, q] = phi(h |(p - nx + 1, q - ny + 1)|)`` for every grid offset."""
    nx, ny = shape
    px = h * np.arange(-(nx - 1), nx)
    py = h * np.arange(-(ny - 1), ny)
    return kernel(np.hypot(px[:, None], py[None, :]))


def convolve2d(kernel: RadialKernel, rho: np.ndarray, h: float) -> np.ndarray:
    """``(phi * rho)(x_i) = sum_j phi(|x_i - x_j|) rho_j h^2`` at every cell.

    The quadrature sum is a discrete convolution with the offset table, which
    is evaluated by FFT.
    """
    rho = np.asarray(rho, dtype=float)
    if kernel.is_zero:
        return np.zeros_like(rho)
    table = kernel_table(kernel, rho.shape, h)
    return signal.fftconvolve(table, rho, mode="valid") * (h * h)


def convolution_sum(fields: Field2D, phi: CommunicationArray, a: int) -> np.ndarray:
    """``sum_b phi_ab * rho_b``."""
    out = np.zeros(fields.shape)
    for b in range(fields.n_species):
        out += convolve2d(phi.kernel(a, b), fields.rho[b], fields.h)
    return out


def velocity_gradient(u: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Jacobian on interior cells: ``G[..., k, l] = d u^k / d x_l``."""
    u = np.asarray(u, dtype=float)
    d1 = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2.0 * h)
    d2 = (u[1:-1, 2:] - u[1:-1, :-2]) / (2.0 * h)
    return np.stack([d1, d2], axis=-1)


def divergence(u: np.ndarray, h: float) -> np.ndarray:
    """``du^1/dx_1 + du^2/dx_2`` on interior cells."""
    g = velocity_gradient(u, h)
    return g[..., 0, 0] + g[..., 1, 1]


def spectral_gap_field(u: np.ndarray, h: float) -> np.ndarray:
    """Eigenvalue gap of ``S = (grad u + grad u^T) / 2`` on interior cells.

    For a symmetric 2x2 matrix the gap is
    ``sqrt((d1u1 - d2u2)^2 + (d2u1 + d1u2)^2)``.  The result has shape
    ``(nx - 2, ny - 2)``; the boundary ring is excluded.
    """
    g = velocity_gradient(u, h)
    return np.hypot(g[..., 0, 0] - g[..., 1, 1], g[..., 0, 1] + g[..., 1, 0])


def compute_c1(phi: CommunicationArray, masses, d_inf: float) -> float:
    """``min_a sum_b phi_ab(D_inf) M_b / sqrt(2)``."""
    if not d_inf >= 0:
        raise ValueError("D_inf must be a non-negative distance")
    masses = np.asarray(masses, dtype=float)
    if masses.shape != (phi.n,):
        raise ValueError(f"need {phi.n} masses")
    coupling = phi.array_at(float(d_inf)) @ masses
    return float(np.min(coupling)) / math.sqrt(2.0)


def _diameter(points: np.ndarray) -> float:
    """Largest pairwise distance of a 2D point cloud (via its convex hull)."""
    pts = np.unique(points, axis=0)
    if pts.shape[0] < 2:
        return 0.0
    if pts.shape[0] > 3:
        try:
            pts = pts[spatial.ConvexHull(pts).vertices]
        except spatial.QhullError:
            # collinear cloud: the extreme points along its direction suffice
            direction = pts[-1] - pts[0]
            proj = pts @ direction
            pts = pts[[int(np.argmin(proj)), int(np.argmax(proj))]]
    return max_pair_distance(pts)[0]


def support_diameter(fields: Field2D) -> float:
    """Diameter of the union of all species supports (cell centres)."""
    x, y = fields.coordinates()
    mask = np.logical_or.reduce([fields.support(a) for a in range(fields.n_species)])
    return _diameter(np.column_stack([x[mask], y[mask]]))


def velocity_spread(fields: Field2D) -> float:
    """``dV0 = max |u_a(x) - u_b(y)|`` over the species supports."""
    pts = np.concatenate([fields.u[a][fields.support(a)] for a in range(fields.n_species)])
    return _diameter(pts)


# ---------------------------------------------------------------- report


@dataclass(frozen=True)
class SpeciesThreshold:
    minDivPlusConv: float
    epsGrid: float
    maxSpectralGap: float
    conditionA: bool
    conditionB: bool | None


@dataclass(frozen=True)
class ThresholdReport2D:
    C1: float | None
    deltaV0: float
    D0: float
    DInfinityEstimate: float | None
    DInfinitySource: str
    species: tuple[SpeciesThreshold, ...]
    conditionC: bool | None
    verdict: str
    notes: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return asdict(self)


def _interior_support(fields: Field2D, a: int) -> np.ndarray:
    return fields.support(a)[1:-1, 1:-1]


def classify(
    fields: Field2D,
    phi: CommunicationArray,
    *,
    d_inf: float | None = None,
    tail: TailFit | None = None,
) -> ThresholdReport2D:
    """Check the three threshold conditions on the supports of the species.

    ``D_inf`` is taken from ``d_inf`` if given; otherwise it is forecast from a
    certified fat-tail fit ``tail`` of the connectivity profile (using the
    guaranteed constant ``c_floor``).  Without either the verdict is
    ``indeterminate``.  Condition (a) must hold with margin ``epsGrid``, the
    O(h) error of the differenced field.
    """
    if phi.n != fields.n_species:
        raise ValueError(f"kernel array is {phi.n}x{phi.n} but the fields have {fields.n_species} species")
    h = fields.h
    masses = fields.masses()
    d0 = support_diameter(fields)
    dv0 = velocity_spread(fields)
    notes: list[str] = []

    source = "user"
    if d_inf is None:
        if tail is not None and tail.certified and tail.c_floor > 0:
            d_inf = diameter_forecast(d0, dv0, masses, tail.theta, tail.c_floor).D_inf
            source = "forecast"
            if not math.isfinite(d_inf):
                notes.append("forecast diameter is unbounded")
                d_inf = None
        else:
            notes.append("no certified fat tail and no D_inf supplied")
    if d_inf is None:
        source = "none"
    c1 = compute_c1(phi, masses, d_inf) if d_inf is not None else None

    per_species = []
    for a in range(fields.n_species):
        mask = _interior_support(fields, a)
        g = divergence(fields.u[a], h) + convolution_sum(fields, phi, a)[1:-1, 1:-1]
        grad = np.gradient(g, h)
        eps = h * float(np.max(np.hypot(grad[0], grad[1])[mask])) if np.any(mask) else 0.0
        eta = spectral_gap_field(fields.u[a], h)
        min_g = float(np.min(g[mask])) if np.any(mask) else math.inf
        max_eta = float(np.max(eta[mask])) if np.any(mask) else 0.0
        per_species.append(
            SpeciesThreshold(
                minDivPlusConv=min_g,
                epsGrid=eps,
                maxSpectralGap=max_eta,
                conditionA=min_g > eps,
                conditionB=(max_eta < 0.5 * c1) if c1 is not None else None,
            )
        )

    cond_c = (dv0 <= c1) if c1 is not None else None
    if c1 is None:
        verdict = "indeterminate"
    elif cond_c and all(s.conditionA and s.conditionB for s in per_species):
        verdict = "subcritical"
    else:
        verdict = "supercritical"
    return ThresholdReport2D(c1, dv0, d0, d_inf, source, tuple(per_species), cond_c, verdict, tuple(notes))


# ---------------------------------------------------------------- input


def gaussian_bump(shape: tuple[int, int], h: float, center, sigma: float, radius: float, mass: float, x0=0.0, y0=0.0):
    """Gaussian density of total ``mass`` truncated outside ``radius``."""
    nx, ny = shape
    x = x0 + h * np.arange(nx)
    y = y0 + h * np.arange(ny)
    X, Y = np.meshgrid(x, y, indexing="ij")
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    rho = np.where(r2 < radius * radius, np.exp(-0.5 * r2 / (sigma * sigma)), 0.0)
    total = float(np.sum(rho)) * h * h
    if total <= 0:
        raise ValueError("bump support contains no grid cell")
    return rho * (mass / total)


def linear_velocity(X: np.ndarray, Y: np.ndarray, matrix, offset=(0.0, 0.0)) -> np.ndarray:
    """``u(x) = A x + b`` sampled on the grid (rotation, shear, dilation, ...)."""
    A = np.asarray(matrix, dtype=float)
    return np.stack(
        [A[0, 0] * X + A[0, 1] * Y + offset[0], A[1, 0] * X + A[1, 1] * Y + offset[1]], axis=-1
    )


def load_fields(path) -> Field2D:
    """Read a tabulated grid file.

    First non-comment line: ``nx ny h [x0 y0]``.  Then one row per cell in
    ``i``-major order with columns ``rho_1 .. rho_n u_1^1 u_1^2 .. u_n^1 u_n^2``.
    """
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty field file")
    head = lines[0].split()
    if len(head) not in (3, 5):
        raise ValueError(f"{path}: header must be 'nx ny h [x0 y0]'")
    nx, ny = int(head[0]), int(head[1])
    h = float(head[2])
    x0, y0 = (float(head[3]), float(head[4])) if len(head) == 5 else (0.0, 0.0)
    data = np.loadtxt(lines[1:], ndmin=2)
    if data.shape[0] != nx * ny or data.shape[1] % 3 != 0:
        raise ValueError(f"{path}: expected {nx * ny} rows of 3 n columns, got {data.shape}")
    n = data.shape[1] // 3
    rho = [data[:, a].reshape(nx, ny) for a in range(n)]
    u = [data[:, n + 2 * a : n + 2 * a + 2].reshape(nx, ny, 2) for a in range(n)]
    return Field2D(h, rho, u, x0, y0)


def save_fields(fields: Field2D, path) -> None:
    nx, ny = fields.shape
    cols = [r.reshape(-1) for r in fields.rho]
    for v in fields.u:
        cols += [v[..., 0].reshape(-1), v[..., 1].reshape(-1)]
    with open(path, "w") as fh:
        fh.write(f"{nx} {ny} {fields.h!r} {fields.x0!r} {fields.y0!r}\n")
        for row in np.column_stack(cols):
            fh.write(" ".join(repr(float(c)) for c in row) + "\n")


__all__ = [
    "Field2D",
    "kernel_table",
    "convolve2d",
    "convolution_sum",
    "velocity_gradient",
    "divergence",
    "spectral_gap_field",
    "compute_c1",
    "support_diameter",
    "velocity_spread",
    "SpeciesThreshold",
    "ThresholdReport2D",
    "classify",
    "gaussian_bump",
    "linear_velocity",
    "load_fields",
    "save_fields",
]
