"""Second-order multi-species alignment dynamics for discrete agents.

Agent ``i`` of species ``a`` moves with

    x' = v,
    v' = sum_b (1 / N_b) sum_j phi_ab(|x_bj - x_ai|) (v_bj - v_ai).

The 1/N_b normalisation gives every species unit mass, so the species
weights used by the spectral monitors default to ones; user-assigned masses
only rescale the diagnostics.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import integrate

from .kernels import CommunicationArray
from .spectral import build_weighted_laplacian, dealignment_margin, weight_vector, zeta

#: relative rounding level below which fluctuations are not resolved
ROUNDING_FLOOR = 1e4 * np.finfo(float).eps
#: rows per force block; fixed so the summation order never depends on threads
BLOCK_ROWS = 64


class IntegrationError(RuntimeError):
    """The state became non-finite during time stepping."""

    def __init__(self, t: float, what: str = "state"):
        super().__init__(f"non-finite {what} at t={t:.6g}")
        self.t = t


@dataclass
class SwarmState:
    """Positions and velocities grouped by species (arrays of shape (N_a, d))."""

    t: float
    positions: list[np.ndarray]
    velocities: list[np.ndarray]

    def __post_init__(self):
        self.positions = [np.atleast_2d(np.asarray(p, dtype=float)) for p in self.positions]
        self.velocities = [np.atleast_2d(np.asarray(v, dtype=float)) for v in self.velocities]
        if len(self.positions) != len(self.velocities) or not self.positions:
            raise ValueError("need matching, non-empty position and velocity lists")
        d = self.positions[0].shape[1]
        for k, (x, v) in enumerate(zip(self.positions, self.velocities)):
            if x.shape != v.shape or x.shape[0] < 1 or x.shape[1] != d:
                raise ValueError(f"species {k}: inconsistent shapes {x.shape} / {v.shape}")
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
                raise ValueError(f"species {k}: non-finite positions or velocities")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(x.shape[0] for x in self.positions)

    @property
    def n_species(self) -> int:
        return len(self.positions)

    @property
    def d(self) -> int:
        return self.positions[0].shape[1]

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        return np.concatenate(self.positions), np.concatenate(self.velocities)

    @classmethod
    def from_flat(cls, t: float, x: np.ndarray, v: np.ndarray, sizes: Sequence[int]):
        cuts = np.cumsum(sizes)[:-1]
        return cls(t, np.split(x, cuts), np.split(v, cuts))


class AgentLayout:
    """Index bookkeeping shared by the particle models."""

    def __init__(self, sizes: Sequence[int]):
        self.sizes = tuple(int(s) for s in sizes)
        self.species = np.repeat(np.arange(len(self.sizes)), self.sizes)
        self.inv_size = 1.0 / np.array(self.sizes, dtype=float)[self.species]
        bounds = np.concatenate([[0], np.cumsum(self.sizes)])
        self.slices = [slice(int(bounds[k]), int(bounds[k + 1])) for k in range(len(self.sizes))]
        self.total = int(bounds[-1])

    def kernel_block(self, phi: CommunicationArray, x: np.ndarray, rows: slice) -> np.ndarray:
        """``K[i, j] = phi_{s(i) s(j)}(|x_i - x_j|) / N_{s(j)}`` for ``i`` in ``rows``."""
        diff = x[rows, None, :] - x[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        out = np.zeros_like(dist)
        row_species = self.species[rows]
        for a, sl_a in enumerate(self.slices):
            mask = row_species == a
            if not np.any(mask):
                continue
            for b, sl_b in enumerate(self.slices):
                kern = phi.kernel(a, b)
                if kern.is_zero:
                    continue
                out[mask, sl_b] = kern(dist[mask, sl_b])
        return out * self.inv_size[None, :]

    def blocks(self):
        return [slice(s, min(s + BLOCK_ROWS, self.total)) for s in range(0, self.total, BLOCK_ROWS)]


def relax_toward(
    layout: AgentLayout, phi: CommunicationArray, x: np.ndarray, field_: np.ndarray, threads: int = 1
) -> np.ndarray:
    """``sum_j K[i, j] (field_j - field_i)`` for every agent ``i``.

    Rows are processed in fixed blocks so the result is bit-identical for any
    ``threads``.
    """
    def one(rows: slice) -> np.ndarray:
        k = layout.kernel_block(phi, x, rows)
        return np.sum(k[:, :, None] * (field_[None, :, :] - field_[rows, None, :]), axis=1)

    blocks = layout.blocks()
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, blocks))
    else:
        parts = [one(rows) for rows in blocks]
    return np.concatenate(parts)


def check_phi(phi: CommunicationArray, n_species: int) -> None:
    if phi.n != n_species:
        raise ValueError(f"kernel array is {phi.n}x{phi.n} but the state has {n_species} species")


def alignment_force(state: SwarmState, phi: CommunicationArray, threads: int = 1) -> list[np.ndarray]:
    """Acceleration of every agent, grouped by species like the state."""
    check_phi(phi, state.n_species)
    layout = AgentLayout(state.sizes)
    x, v = state.flat()
    acc = relax_toward(layout, phi, x, v, threads)
    return [acc[sl] for sl in layout.slices]


def rk4(rhs, y: tuple[np.ndarray, ...], t: float, dt: float) -> tuple[np.ndarray, ...]:
    """One classical Runge-Kutta step for a tuple of arrays."""
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * dt, tuple(a + 0.5 * dt * b for a, b in zip(y, k1)))
    k3 = rhs(t + 0.5 * dt, tuple(a + 0.5 * dt * b for a, b in zip(y, k2)))
    k4 = rhs(t + dt, tuple(a + dt * b for a, b in zip(y, k3)))
    return tuple(
        a + (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
    )


def step(state: SwarmState, phi: CommunicationArray, dt: float, threads: int = 1) -> SwarmState:
    """Advance the swarm by one RK4 step of size ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    check_phi(phi, state.n_species)
    layout = AgentLayout(state.sizes)
    x, v = state.flat()

    def rhs(_t, y):
        return y[1], relax_toward(layout, phi, y[0], y[1], threads)

    x_new, v_new = rk4(rhs, (x, v), state.t, dt)
    t_new = state.t + dt
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
        raise IntegrationError(t_new)
    return SwarmState.from_flat(t_new, x_new, v_new, state.sizes)


def max_pair_distance(points: np.ndarray) -> tuple[float, int, int]:
    """Largest pairwise distance and the first (lexicographic) pair attaining it."""
    n = points.shape[0]
    best, bi, bj = 0.0, 0, 0
    for start in range(0, n, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, n)
        diff = points[start:stop, None, :] - points[None, :, :]
        sq = np.sum(diff * diff, axis=-1)
        k = int(np.argmax(sq))
        val = float(sq.flat[k])
        if val > best:
            best, bi, bj = val, start + k // n, k % n
    if bi > bj:
        bi, bj = bj, bi
    return math.sqrt(best), bi, bj


def weighted_fluctuation(values: np.ndarray, agent_weight: np.ndarray) -> float:
    """``sum_ij p_i p_j |y_i - y_j|^2`` evaluated in centred form (no cancellation)."""
    total = float(np.sum(agent_weight))
    mean = np.sum(agent_weight[:, None] * values, axis=0) / total
    centred = values - mean[None, :]
    return 2.0 * total * float(np.sum(agent_weight * np.sum(centred * centred, axis=1)))


def agent_weights(sizes: Sequence[int], masses=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-species masses (default 1) and per-agent weights ``M_a / N_a``."""
    layout = AgentLayout(sizes)
    m = weight_vector(np.ones(len(sizes)) if masses is None else masses)
    if m.size != len(sizes):
        raise ValueError("one mass per species required")
    return m, m[layout.species] * layout.inv_size


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    D: float
    deltaV: float
    deltaE: float
    lambda2AtD: float
    momentum: tuple[float, ...]
    boundRatioE: float = 1.0
    boundRatioV: float = 1.0
    connected: bool = True
    #: deltaE is above the rounding floor of the velocity data
    resolved: bool = True


def diagnostics(state: SwarmState, phi: CommunicationArray, masses=None) -> DiagnosticsRecord:
    """Snapshot diagnostics.  Bound ratios are 1 (or 0 when already flocked);
    :func:`run` fills in their time-dependent values."""
    check_phi(phi, state.n_species)
    m, p = agent_weights(state.sizes, masses)
    x, v = state.flat()
    diam = max_pair_distance(x)[0]
    dv = max_pair_distance(v)[0]
    de = weighted_fluctuation(v, p)
    lap = build_weighted_laplacian(phi.array_at(diam), m)
    connected = lap.is_connected()
    momentum = tuple(float(c) for c in np.sum(p[:, None] * v, axis=0))
    floor = 2.0 * (ROUNDING_FLOOR * float(np.max(np.abs(v))) * float(np.sum(p))) ** 2
    return DiagnosticsRecord(
        t=state.t,
        D=diam,
        deltaV=dv,
        deltaE=de,
        lambda2AtD=lap.lambda2 if connected else 0.0,
        momentum=momentum,
        boundRatioE=1.0 if de > 0 else 0.0,
        boundRatioV=1.0 if dv > 0 else 0.0,
        connected=connected,
        resolved=de > floor,
    )


class EnvelopeTracker:
    """Accumulates the decay envelopes behind the bound ratios.

    The energy envelope integrates ``lambda2(phi(D(t)))`` by the trapezoid
    rule over recorded samples; the uniform envelope uses the Fiedler number
    at the running maximum diameter.  Both use unit species weights, which is
    what the ``1/N_b`` force normalisation realises, so ratios compare the
    unit-weight energy fluctuation against the envelope.
    """

    def __init__(self, phi: CommunicationArray, n_species: int):
        self.phi = phi
        self.masses = np.ones(n_species)
        self.zeta = zeta(self.masses)
        self.first: DiagnosticsRecord | None = None
        self.last: DiagnosticsRecord | None = None
        self.energy_integral = 0.0
        self.uniform_integral = 0.0
        self.max_diameter = 0.0
        self._lam_running = 0.0

    def _lam_at(self, r: float) -> float:
        lap = build_weighted_laplacian(self.phi.array_at(r), self.masses)
        return lap.lambda2 if lap.is_connected() else 0.0

    def update(self, rec: DiagnosticsRecord, energy: float | None = None) -> DiagnosticsRecord:
        """Fill in the bound ratios of ``rec``; ``energy`` is the unit-weight
        energy fluctuation (defaults to ``rec.deltaE``)."""
        energy = rec.deltaE if energy is None else energy
        lam = self._lam_at(rec.D)
        if self.first is None:
            self.first = rec
            self.energy0 = energy
            self.max_diameter = rec.D
            self._lam_running = lam
        else:
            dt = rec.t - self.last.t
            self.energy_integral += 0.5 * dt * (lam + self._lam_last)
            prev_running = self._lam_running
            if rec.D > self.max_diameter:
                self.max_diameter = rec.D
                self._lam_running = self._lam_at(rec.D)
            self.uniform_integral += 0.5 * dt * (prev_running + self._lam_running)
        self.last = rec
        self._lam_last = lam
        e0, v0 = self.energy0, self.first.deltaV
        ratio_e = energy / (e0 * math.exp(-2.0 * self.zeta * self.energy_integral)) if e0 > 0 else 0.0
        ratio_v = rec.deltaV / (v0 * math.exp(-self.zeta * self.uniform_integral)) if v0 > 0 else 0.0
        return replace(rec, boundRatioE=ratio_e, boundRatioV=ratio_v)


@dataclass
class Trajectory:
    records: list[DiagnosticsRecord]
    final: object
    masses: np.ndarray = field(default=None)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def default_dt(phi: CommunicationArray) -> float:
    top = float(np.max(np.abs(phi.sup_array())))
    return 0.1 / top if top > 0 else 0.1


def run(
    state: SwarmState,
    phi: CommunicationArray,
    dt: float,
    T: float,
    record_every: int = 1,
    masses=None,
    threads: int = 1,
    snapshot=None,
    stop=None,
) -> Trajectory:
    """Integrate to time ``T`` with RK4, recording diagnostics every
    ``record_every`` steps (plus the initial and final states).

    ``snapshot``, if given, is called with every recorded state.  ``stop``
    is a predicate on the latest record; the run ends early once it is true.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    check_phi(phi, state.n_species)
    m, _ = agent_weights(state.sizes, masses)
    unit = bool(np.all(m == 1.0))
    _, p_unit = agent_weights(state.sizes)
    n_steps = int(round((T - state.t) / dt))
    tracker = EnvelopeTracker(phi, state.n_species)

    def record(s: SwarmState) -> DiagnosticsRecord:
        rec = diagnostics(s, phi, m)
        energy = rec.deltaE if unit else weighted_fluctuation(s.flat()[1], p_unit)
        return tracker.update(rec, energy)

    records = [record(state)]
    if snapshot is not None:
        snapshot(state)
    t0 = state.t
    for k in range(1, n_steps + 1):
        state = step(state, phi, dt, threads)
        state.t = t0 + k * dt
        if k % record_every == 0 or k == n_steps:
            records.append(record(state))
            if snapshot is not None:
                snapshot(state)
            if stop is not None and stop(records[-1]):
                break
    return Trajectory(records, state, m)


def fractional_exponential_integral(rate: float, theta: float) -> float:
    """``int_0^inf exp(-rate t^(1 - theta)) dt`` by adaptive quadrature."""
    if theta >= 1.0:
        raise ValueError("no finite diameter bound for theta >= 1")
    if rate <= 0.0:
        return math.inf
    power = 1.0 - theta
    value, _ = integrate.quad(lambda t: math.exp(-rate * t**power), 0.0, math.inf, limit=200)
    return float(value)


@dataclass(frozen=True)
class DiameterForecast:
    D_inf: float
    C_theta: float
    rate: float
    theta: float

    def horizon(self, fraction: float) -> float:
        """Time after which the forecast envelope for the uniform fluctuation
        falls below ``fraction`` of its initial value."""
        if self.rate <= 0.0:
            return math.inf
        return (math.log(1.0 / fraction) / self.rate) ** (1.0 / (1.0 - self.theta))


def diameter_forecast(D0: float, deltaV0: float, masses, theta: float, c: float) -> DiameterForecast:
    """Bound the eventual spatial diameter from a fat-tail connectivity fit.

    With ``lambda2(r) >= c (1+r)^-theta`` the velocity spread decays like
    ``dV0 exp(-rate t^(1-theta))`` where ``rate`` is the smaller of
    ``c zeta / (1-theta)`` and ``c zeta / ((1-theta) dV0)``; integrating that
    envelope gives ``D_inf = D0 + C_theta dV0``.
    """
    if theta >= 1.0:
        raise ValueError("diameter forecast requires a tail exponent theta < 1")
    if not c > 0.0:
        raise ValueError("diameter forecast requires a positive tail constant")
    z = zeta(masses)
    rate_energy = c * z / (1.0 - theta)
    rate = rate_energy
    if deltaV0 > 0.0:
        rate = min(rate_energy, rate_energy / deltaV0)
    c_theta = fractional_exponential_integral(rate, theta)
    d_inf = D0 + (c_theta * deltaV0 if deltaV0 > 0.0 else 0.0)
    return DiameterForecast(d_inf, c_theta, rate, theta)


def validate_dealignment(phi: CommunicationArray, masses, r: float) -> float:
    """Reject negative self-interactions below the de-alignment margin.

    The margin is evaluated from the off-diagonal kernels at distance ``r``;
    returns it.
    """
    margin = dealignment_margin(phi.offdiagonal_part().array_at(r), masses)
    for species, c in phi.dealigning_diagonal().items():
        if c < margin:
            raise ValueError(
                f"self-interaction {c:g} of species {species + 1} is below the "
                f"de-alignment margin {margin:.6g}"
            )
    return margin


__all__ = [
    "IntegrationError",
    "SwarmState",
    "AgentLayout",
    "alignment_force",
    "rk4",
    "step",
    "run",
    "diagnostics",
    "DiagnosticsRecord",
    "EnvelopeTracker",
    "Trajectory",
    "default_dt",
    "max_pair_distance",
    "weighted_fluctuation",
    "agent_weights",
    "fractional_exponential_integral",
    "DiameterForecast",
    "diameter_forecast",
    "validate_dealignment",
]
