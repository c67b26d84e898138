"""One-dimensional multi-species Euler-alignment system on a periodic torus.

For every species ``a``

    rho_t + (rho u)_x = 0,
    (rho u)_t + (rho u^2)_x = rho(x) sum_b int phi_ab(|x - y|) (u_b(y) - u_a(x)) rho_b(y) dy.

Discretisation: first-order finite volumes on the conservative pair
``(rho, rho u)`` with a local Lax-Friedrichs flux, the nonlocal source by
direct quadrature on the torus, and SSP-RK2 in time.  The quadrature matrix
``K[i, j] = phi(d(x_i, x_j)) dx`` is symmetric, so the momentum exchanged
between two cells of two species cancels exactly.

The threshold quantity ``e_a = u_a' + sum_b phi_ab * rho_b`` and the ratio
``q_a = e_a / rho_a`` (which is transported along the flow) are monitored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import CommunicationArray, RadialKernel

CFL_DEFAULT = 0.4
#: vacuum floor, relative to the mean density M / L
VACUUM_RTOL = 1e-10
#: negative densities below -NEGATIVE_TOL count as a failure
NEGATIVE_TOL = 1e-12
#: gradient growth factor that declares blow-up
BLOWUP_GROWTH = 1e3
#: half-width (cells) of the window used to measure how concentrated the
#: steepest velocity drop is
SHOCK_WINDOW = 8
#: ``max|u'| dx / drop`` over the window: 1/(2 SHOCK_WINDOW) for a resolved
#: linear profile, about 0.2 once a discontinuity has formed and is held at
#: the grid scale by the numerical dissipation
SHOCK_CONCENTRATION = 0.15


class HydroBlowup(RuntimeError):
    """Loss of regularity: gradient blow-up, vacuum or non-finite values."""

    def __init__(self, t: float, cell: int, species: int, reason: str):
        super().__init__(f"{reason} at t={t:.6g}, species {species + 1}, cell {cell}")
        self.t = t
        self.cell = cell
        self.species = species
        self.reason = reason


def torus_distance(x: np.ndarray, y: np.ndarray, L: float) -> np.ndarray:
    d = np.abs(x - y) % L
    return np.minimum(d, L - d)


def grid(n: int, L: float) -> np.ndarray:
    """Cell centres of the uniform grid on ``[0, L)``."""
    return (np.arange(n) + 0.5) * (L / n)


def quadrature_matrix(kernel: RadialKernel, n: int, L: float) -> np.ndarray:
    """``K[i, j] = phi(d(x_i, x_j)) dx``; circulant and symmetric."""
    dx = L / n
    # integer offsets make row[k] == row[n - k] exactly, hence K == K.T
    k = np.arange(n)
    row = kernel(np.minimum(k, n - k) * dx) * dx
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return row[idx]


def apply_quadrature(K: np.ndarray, f: np.ndarray) -> np.ndarray:
    # elementwise product and row sums: fixed summation order, no BLAS threading
    return np.sum(K * f[None, :], axis=1)


def periodic_convolve(kernel: RadialKernel, rho: np.ndarray, L: float) -> np.ndarray:
    """``(phi * rho)(x_i) = sum_j phi(d(x_i, x_j)) rho_j dx`` on the torus."""
    rho = np.asarray(rho, dtype=float)
    return apply_quadrature(quadrature_matrix(kernel, rho.size, L), rho)


def central_difference(f: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * dx)


@dataclass
class HydroState1D:
    """Cell averages of ``rho_a`` and ``u_a`` on a periodic uniform grid."""

    t: float
    L: float
    rho: list[np.ndarray]
    u: list[np.ndarray]

    def __post_init__(self):
        self.rho = [np.asarray(r, dtype=float).copy() for r in self.rho]
        self.u = [np.asarray(v, dtype=float).copy() for v in self.u]
        if not self.rho or len(self.rho) != len(self.u):
            raise ValueError("need matching, non-empty density and velocity lists")
        if not self.L > 0:
            raise ValueError("torus length must be positive")
        n = self.rho[0].size
        for k, (r, v) in enumerate(zip(self.rho, self.u)):
            if r.ndim != 1 or r.shape != v.shape or r.size != n or n < 3:
                raise ValueError(f"species {k}: expected two 1D arrays of {n} >= 3 cells")
            if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
                raise ValueError(f"species {k}: non-finite values")
            if np.any(r < -NEGATIVE_TOL):
                raise ValueError(f"species {k}: negative density")

    @property
    def n_cells(self) -> int:
        return self.rho[0].size

    @property
    def n_species(self) -> int:
        return len(self.rho)

    @property
    def dx(self) -> float:
        return self.L / self.n_cells

    @property
    def x(self) -> np.ndarray:
        return grid(self.n_cells, self.L)

    def masses(self) -> np.ndarray:
        return np.array([float(np.sum(r)) * self.dx for r in self.rho])

    def momentum(self) -> float:
        return float(sum(np.sum(r * v) for r, v in zip(self.rho, self.u))) * self.dx


class HydroOperator:
    """Precomputed quadrature matrices for a kernel array on a fixed grid."""

    def __init__(self, phi: CommunicationArray, n: int, L: float):
        self.phi = phi
        self.n = n
        self.L = L
        self.dx = L / n
        self._K: dict[tuple[int, int], np.ndarray] = {}
        for (a, b), kern in phi.pairs():
            if not kern.is_zero:
                self._K[(a, b)] = self._K[(b, a)] = quadrature_matrix(kern, n, L)

    def matrix(self, a: int, b: int) -> np.ndarray | None:
        return self._K.get((a, b))

    def convolution_sum(self, a: int, rho: list[np.ndarray]) -> np.ndarray:
        """``sum_b phi_ab * rho_b``."""
        out = np.zeros(self.n)
        for b, r in enumerate(rho):
            K = self.matrix(a, b)
            if K is not None:
                out += apply_quadrature(K, r)
        return out

    def source(self, rho: list[np.ndarray], u: list[np.ndarray]) -> list[np.ndarray]:
        out = []
        for a in range(len(rho)):
            acc = np.zeros(self.n)
            for b in range(len(rho)):
                K = self.matrix(a, b)
                if K is not None:
                    acc += apply_quadrature(K, rho[b] * u[b]) - u[a] * apply_quadrature(K, rho[b])
            out.append(rho[a] * acc)
        return out

    def source_bound(self, masses: np.ndarray) -> float:
        """``max_a sum_b |phi_ab|_inf M_b``: the relaxation rate of the source."""
        sup = np.abs(self.phi.sup_array())
        return float(np.max(sup @ np.asarray(masses, dtype=float))) if sup.size else 0.0


FLUXES = ("global", "local")


def lf_divergence(rho: np.ndarray, m: np.ndarray, u: np.ndarray, dx: float, flux: str = "global"):
    """``-(F_{i+1/2} - F_{i-1/2}) / dx`` for the pressureless flux ``(m, m u)``.

    Lax-Friedrichs flux with dissipation speed ``max_i |u_i|`` of the species
    (``"global"``) or ``max(|u_i|, |u_{i+1}|)`` per interface (``"local"``).
    The local speed vanishes where a converging flow changes sign, and there
    the scheme's velocity gradient stays O(1) off under refinement, which
    corrupts the threshold monitors; hence the global default.
    """
    rho_r, m_r, u_r = np.roll(rho, -1), np.roll(m, -1), np.roll(u, -1)
    if flux == "global":
        a = float(np.max(np.abs(u)))
    elif flux == "local":
        a = np.maximum(np.abs(u), np.abs(u_r))
    else:
        raise ValueError(f"unknown flux {flux!r}; expected one of {FLUXES}")
    f_rho = 0.5 * (m + m_r) - 0.5 * a * (rho_r - rho)
    f_m = 0.5 * (m * u + m_r * u_r) - 0.5 * a * (m_r - m)
    return -(f_rho - np.roll(f_rho, 1)) / dx, -(f_m - np.roll(f_m, 1)) / dx


def _velocity(rho: np.ndarray, m: np.ndarray) -> np.ndarray:
    u = np.zeros_like(m)
    np.divide(m, rho, out=u, where=rho > 0)
    return u


def _rhs(op: HydroOperator, rho: list[np.ndarray], m: list[np.ndarray], flux: str):
    u = [_velocity(r, q) for r, q in zip(rho, m)]
    src = op.source(rho, u)
    d_rho, d_m = [], []
    for r, q, v, s in zip(rho, m, u, src):
        fr, fm = lf_divergence(r, q, v, op.dx, flux)
        d_rho.append(fr)
        d_m.append(fm + s)
    return d_rho, d_m


def stable_dt(state: HydroState1D, op: HydroOperator, cfl: float = CFL_DEFAULT) -> float:
    """Largest step allowed by the convective CFL and the source relaxation rate."""
    umax = max(float(np.max(np.abs(v))) for v in state.u)
    rate = op.source_bound(state.masses())
    limits = [math.inf]
    if umax > 0:
        limits.append(cfl * state.dx / umax)
    if rate > 0:
        limits.append(cfl / rate)
    dt = min(limits)
    return dt if math.isfinite(dt) else cfl * state.dx


def step_hydro(
    state: HydroState1D,
    phi: CommunicationArray | HydroOperator,
    dt: float,
    cfl: float = CFL_DEFAULT,
    flux: str = "global",
) -> HydroState1D:
    """One SSP-RK2 (Heun) step; raises on CFL violation or loss of positivity."""
    op = phi if isinstance(phi, HydroOperator) else HydroOperator(phi, state.n_cells, state.L)
    if not dt > 0:
        raise ValueError("dt must be positive")
    umax = max(float(np.max(np.abs(v))) for v in state.u)
    if dt * umax > cfl * state.dx * (1.0 + 1e-12):
        raise ValueError(f"CFL violation: dt={dt:.6g} exceeds {cfl:g} dx / max|u| = {cfl * state.dx / umax:.6g}")
    rho0 = state.rho
    m0 = [r * v for r, v in zip(state.rho, state.u)]
    k_rho, k_m = _rhs(op, rho0, m0, flux)
    rho1 = [r + dt * d for r, d in zip(rho0, k_rho)]
    m1 = [q + dt * d for q, d in zip(m0, k_m)]
    k_rho, k_m = _rhs(op, rho1, m1, flux)
    rho2 = [0.5 * (r0 + r1 + dt * d) for r0, r1, d in zip(rho0, rho1, k_rho)]
    m2 = [0.5 * (q0 + q1 + dt * d) for q0, q1, d in zip(m0, m1, k_m)]
    t_new = state.t + dt
    for a, (r, q) in enumerate(zip(rho2, m2)):
        bad = ~(np.isfinite(r) & np.isfinite(q))
        if np.any(bad):
            raise HydroBlowup(t_new, int(np.argmax(bad)), a, "non-finite state")
        if np.any(r < -NEGATIVE_TOL):
            raise HydroBlowup(t_new, int(np.argmin(r)), a, "negative density")
    u2 = [_velocity(np.maximum(r, 0.0), q) for r, q in zip(rho2, m2)]
    return HydroState1D(t_new, state.L, [np.maximum(r, 0.0) for r in rho2], u2)


@dataclass(frozen=True)
class SpeciesFields:
    """Diagnostic fields of one species."""

    e: np.ndarray
    q: np.ndarray
    dudx: np.ndarray
    conv: np.ndarray


def species_fields(state: HydroState1D, op: HydroOperator) -> list[SpeciesFields]:
    out = []
    for a in range(state.n_species):
        dudx = central_difference(state.u[a], state.dx)
        conv = op.convolution_sum(a, state.rho)
        e = dudx + conv
        q = np.full_like(e, np.nan)
        np.divide(e, state.rho[a], out=q, where=state.rho[a] > 0)
        out.append(SpeciesFields(e, q, dudx, conv))
    return out


@dataclass(frozen=True)
class ThresholdReport1D:
    minE: tuple[float, ...]
    worstCell: tuple[int, ...]
    epsGrid: tuple[float, ...]
    verdict: str

    @property
    def subcritical(self) -> bool:
        return self.verdict == "subcritical"


def grid_slack(f: SpeciesFields, dx: float) -> float:
    """``dx (max|d/dx u'| + max|d/dx (phi * rho)|)``: the O(dx) error of ``e``."""
    return dx * (
        float(np.max(np.abs(central_difference(f.dudx, dx))))
        + float(np.max(np.abs(central_difference(f.conv, dx))))
    )


def check_vacuum(state: HydroState1D) -> None:
    for a, (r, mass) in enumerate(zip(state.rho, state.masses())):
        floor = VACUUM_RTOL * mass / state.L
        if not np.all(r >= floor) or mass <= 0:
            raise ValueError(f"species {a + 1}: vacuum cells present (density below {floor:.3g})")


def threshold_check_1d(state: HydroState1D, phi: CommunicationArray) -> ThresholdReport1D:
    """Sub-critical test ``u_a' + sum_b phi_ab * rho_b >= 0`` up to grid slack."""
    check_vacuum(state)
    op = HydroOperator(phi, state.n_cells, state.L)
    fields = species_fields(state, op)
    mins = tuple(float(np.min(f.e)) for f in fields)
    worst = tuple(int(np.argmin(f.e)) for f in fields)
    eps = tuple(grid_slack(f, state.dx) for f in fields)
    ok = all(m >= -s for m, s in zip(mins, eps))
    return ThresholdReport1D(mins, worst, eps, "subcritical" if ok else "supercritical")


@dataclass(frozen=True)
class HydroRecord:
    t: float
    minE: tuple[float, ...]
    maxE: tuple[float, ...]
    minQ: tuple[float, ...]
    maxQ: tuple[float, ...]
    maxDxU: tuple[float, ...]
    minDxU: tuple[float, ...]
    mass: tuple[float, ...]
    rhoMin: tuple[float, ...]
    uMax: float
    uMin: float
    momentum: float


def hydro_record(state: HydroState1D, op: HydroOperator) -> HydroRecord:
    fields = species_fields(state, op)
    return HydroRecord(
        t=state.t,
        minE=tuple(float(np.min(f.e)) for f in fields),
        maxE=tuple(float(np.max(f.e)) for f in fields),
        minQ=tuple(float(np.nanmin(f.q)) for f in fields),
        maxQ=tuple(float(np.nanmax(f.q)) for f in fields),
        maxDxU=tuple(float(np.max(np.abs(f.dudx))) for f in fields),
        minDxU=tuple(float(np.min(f.dudx)) for f in fields),
        mass=tuple(float(m) for m in state.masses()),
        rhoMin=tuple(float(np.min(r)) for r in state.rho),
        uMax=max(float(np.max(v)) for v in state.u),
        uMin=min(float(np.min(v)) for v in state.u),
        momentum=state.momentum(),
    )


@dataclass
class HydroTrajectory:
    records: list[HydroRecord]
    final: HydroState1D
    dx: float
    dt_max: float
    eps_grid0: tuple[float, ...]
    subcritical0: bool
    source_bound: float
    blowup: HydroBlowup | None = None
    steps: int = 0
    dts: list[float] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def detect_blowup(state: HydroState1D, rec: HydroRecord, initial: HydroRecord) -> HydroBlowup | None:
    """Flag loss of regularity.

    Gradient blow-up is declared when ``max|u'|`` grows by BLOWUP_GROWTH, or
    when it has at least doubled and the steepest velocity drop is confined to
    a few cells (a discontinuity the grid can no longer resolve; the growth
    factor itself is out of reach on a grid of a few hundred cells).  Vacuum
    below the floor is flagged as well.
    """
    dx = state.dx
    n = state.n_cells
    for a in range(state.n_species):
        g = rec.maxDxU[a]
        g0 = initial.maxDxU[a]
        dudx = central_difference(state.u[a], dx)
        cell = int(np.argmax(np.abs(dudx)))
        if g0 > 0 and g >= BLOWUP_GROWTH * g0:
            return HydroBlowup(state.t, cell, a, "gradient blow-up (growth)")
        drop = abs(state.u[a][(cell - SHOCK_WINDOW) % n] - state.u[a][(cell + SHOCK_WINDOW) % n])
        if g > 2.0 * g0 and drop > 0 and g * dx / drop >= SHOCK_CONCENTRATION:
            return HydroBlowup(state.t, cell, a, "gradient blow-up (grid-scale discontinuity)")
        floor = VACUUM_RTOL * rec.mass[a] / state.L
        if rec.rhoMin[a] < floor:
            return HydroBlowup(state.t, int(np.argmin(state.rho[a])), a, "vacuum")
    return None


def run_hydro(
    state: HydroState1D,
    phi: CommunicationArray,
    T: float,
    dt: float | None = None,
    cfl: float = CFL_DEFAULT,
    record_every: int = 1,
    snapshot=None,
    raise_on_blowup: bool = False,
    flux: str = "global",
) -> HydroTrajectory:
    """Integrate to ``T`` and record monitors.

    With ``dt=None`` the step is :func:`stable_dt`, capped by its initial
    value; a fixed ``dt``
    must respect the CFL limit throughout.  Blow-up stops the run and is
    reported in ``HydroTrajectory.blowup`` (or raised).
    """
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    op = HydroOperator(phi, state.n_cells, state.L)
    if phi.n != state.n_species:
        raise ValueError(f"kernel array is {phi.n}x{phi.n} but the state has {state.n_species} species")
    try:
        report = threshold_check_1d(state, phi)
    except ValueError:
        report = None
    first = hydro_record(state, op)
    eps0 = report.epsGrid if report else tuple(math.nan for _ in range(state.n_species))
    traj = HydroTrajectory(
        records=[first],
        final=state,
        dx=state.dx,
        dt_max=0.0,
        eps_grid0=eps0,
        subcritical0=bool(report and report.subcritical),
        source_bound=op.source_bound(state.masses()),
    )
    if snapshot is not None:
        snapshot(state)
    k = 0
    t_end = float(T)
    dt0 = stable_dt(state, op, cfl)
    while state.t < t_end * (1.0 - 1e-14):
        # never grow past the initial CFL step so that dt stays O(dx)
        h = dt if dt is not None else min(dt0, stable_dt(state, op, cfl))
        h = min(h, t_end - state.t)
        try:
            state = step_hydro(state, op, h, cfl, flux)
        except HydroBlowup as exc:
            traj.blowup = exc
            break
        k += 1
        traj.dts.append(h)
        traj.dt_max = max(traj.dt_max, h)
        last = state.t >= t_end * (1.0 - 1e-14)
        rec = hydro_record(state, op)
        event = detect_blowup(state, rec, first)
        if k % record_every == 0 or last or event is not None:
            traj.records.append(rec)
            if snapshot is not None:
                snapshot(state)
        if event is not None:
            traj.blowup = event
            break
    traj.final = state
    traj.steps = k
    if traj.blowup is not None and raise_on_blowup:
        raise traj.blowup
    return traj


@dataclass(frozen=True)
class MonitorReport:
    """Outcome of the invariant checks on a hydrodynamic trajectory."""

    eInvariance: bool
    minE: float
    eSlack: float
    qDrift: tuple[float, ...]
    noVacuum: bool
    massError: float
    momentumDrift: float
    gradientBound: bool
    maxPrinciple: bool

    @property
    def passed(self) -> bool:
        return self.eInvariance and self.noVacuum and self.gradientBound and self.maxPrinciple


def invariant_monitors(traj: HydroTrajectory, slack: float = 10.0) -> MonitorReport:
    """Check the transported invariants on a recorded trajectory.

    (i) ``min e`` stays above ``-slack (dx + dt)`` when the data start
    sub-critical; (ii) drift of the ``q`` extrema is reported per species;
    (iii) no vacuum; (iv) mass error and momentum drift.  Additionally the
    one-sided gradient bound ``u' >= -sum_b |phi_ab|_inf M_b`` and the
    velocity maximum principle are checked (both with the same slack).
    """
    recs = traj.records
    first = recs[0]
    tol = slack * (traj.dx + traj.dt_max)
    min_e = min(min(r.minE) for r in recs)
    e_ok = (min_e >= -tol) if traj.subcritical0 else True
    drift = []
    for a in range(len(first.minQ)):
        qmin = np.array([r.minQ[a] for r in recs])
        qmax = np.array([r.maxQ[a] for r in recs])
        drift.append(float(max(np.max(np.abs(qmin - qmin[0])), np.max(np.abs(qmax - qmax[0])))))
    floor = min(VACUUM_RTOL * m / traj.final.L for m in first.mass)
    vac_ok = all(min(r.rhoMin) >= floor for r in recs)
    mass0 = np.array(first.mass)
    mass_err = max(float(np.max(np.abs(np.array(r.mass) - mass0) / mass0)) for r in recs)
    mom = np.array([r.momentum for r in recs])
    mom_drift = float(np.max(np.abs(mom - mom[0])))
    grad_ok = True
    if traj.subcritical0:
        grad_ok = all(min(r.minDxU) >= -traj.source_bound - tol for r in recs)
    umax = np.array([r.uMax for r in recs])
    umin = np.array([r.uMin for r in recs])
    mp_ok = bool(np.all(np.diff(umax) <= tol) and np.all(np.diff(umin) >= -tol))
    return MonitorReport(e_ok, min_e, tol, tuple(drift), vac_ok, mass_err, mom_drift, grad_ok, mp_ok)


__all__ = [
    "CFL_DEFAULT",
    "HydroBlowup",
    "HydroState1D",
    "HydroOperator",
    "HydroRecord",
    "HydroTrajectory",
    "ThresholdReport1D",
    "MonitorReport",
    "torus_distance",
    "grid",
    "quadrature_matrix",
    "periodic_convolve",
    "central_difference",
    "species_fields",
    "grid_slack",
    "threshold_check_1d",
    "stable_dt",
    "step_hydro",
    "lf_divergence",
    "FLUXES",
    "run_hydro",
    "detect_blowup",
    "invariant_monitors",
]
