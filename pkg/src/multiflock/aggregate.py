"""First-order multi-species aggregation for discrete agents.

Agent ``i`` of species ``a`` moves with

    x' = sum_b (1 / N_b) sum_j phi_ab(|x_bj - x_ai|) (x_bj - x_ai),

i.e. every agent is *attracted* toward the others.  This is the orientation
of the continuum aggregation flux and the one under which the diameter
contracts; the repulsive variant is deliberately not offered.

Monitors: the spatial diameter never increases, the unit-weighted centre of
mass is invariant, and the weighted diameter

    dD(t) = sum_ab 1/(N_a N_b) sum_ij |x_ai - x_bj|^2

decays at least like ``dD(0) exp(-2 zeta lambda2(Phi(D0)) t)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernels import CommunicationArray
from .spectral import build_weighted_laplacian, zeta
from .swarm import (
    ROUNDING_FLOOR,
    IntegrationError,
    AgentLayout,
    agent_weights,
    check_phi,
    max_pair_distance,
    relax_toward,
    rk4,
    weighted_fluctuation,
)

#: consensus is declared once the second moment drops below this fraction of dD(0)
CONSENSUS_RTOL = 1e-10


@dataclass
class AggregateState:
    """Agent positions grouped by species (arrays of shape (N_a, d))."""

    t: float
    positions: list[np.ndarray]

    def __post_init__(self):
        self.positions = [np.atleast_2d(np.asarray(p, dtype=float)) for p in self.positions]
        if not self.positions:
            raise ValueError("need at least one species")
        d = self.positions[0].shape[1]
        for k, x in enumerate(self.positions):
            if x.shape[0] < 1 or x.shape[1] != d:
                raise ValueError(f"species {k}: positions of shape {x.shape} do not match d={d}")
            if not np.all(np.isfinite(x)):
                raise ValueError(f"species {k}: non-finite positions")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(x.shape[0] for x in self.positions)

    @property
    def n_species(self) -> int:
        return len(self.positions)

    @property
    def d(self) -> int:
        return self.positions[0].shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate(self.positions)

    @classmethod
    def from_flat(cls, t: float, x: np.ndarray, sizes: Sequence[int]):
        return cls(t, np.split(x, np.cumsum(sizes)[:-1]))


def aggregation_velocity(
    state: AggregateState, phi: CommunicationArray, threads: int = 1
) -> list[np.ndarray]:
    """Velocity of every agent, grouped by species like the state."""
    check_phi(phi, state.n_species)
    layout = AgentLayout(state.sizes)
    x = state.flat()
    vel = relax_toward(layout, phi, x, x, threads)
    return [vel[sl] for sl in layout.slices]


def step(state: AggregateState, phi: CommunicationArray, dt: float, threads: int = 1) -> AggregateState:
    """Advance by one RK4 step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    check_phi(phi, state.n_species)
    layout = AgentLayout(state.sizes)

    def rhs(_t, y):
        return (relax_toward(layout, phi, y[0], y[0], threads),)

    (x_new,) = rk4(rhs, (state.flat(),), state.t, dt)
    t_new = state.t + dt
    if not np.all(np.isfinite(x_new)):
        raise IntegrationError(t_new, "positions")
    return AggregateState.from_flat(t_new, x_new, state.sizes)


def center_of_mass(state: AggregateState, masses=None) -> np.ndarray:
    """``sum_a M_a / N_a sum_i x_ai`` normalised by the total mass."""
    _, p = agent_weights(state.sizes, masses)
    return np.sum(p[:, None] * state.flat(), axis=0) / float(np.sum(p))


def weighted_diameter(state: AggregateState, masses=None) -> float:
    """``dD = sum_ab M_a M_b / (N_a N_b) sum_ij |x_ai - x_bj|^2``."""
    _, p = agent_weights(state.sizes, masses)
    return weighted_fluctuation(state.flat(), p)


def p_weighted_diameter(state: AggregateState, p: float, masses=None) -> float:
    """``W_p = sum_ab M_a M_b / (N_a N_b) sum_ij |x_ai - x_bj|^p``.

    ``W_2`` equals the weighted diameter; ``W_p^(1/p)`` tends to the diameter
    as ``p`` grows.
    """
    _, w = agent_weights(state.sizes, masses)
    x = state.flat()
    total = 0.0
    for start in range(0, x.shape[0], 64):
        rows = slice(start, min(start + 64, x.shape[0]))
        diff = x[rows, None, :] - x[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        total += float(np.sum(w[rows, None] * w[None, :] * dist**p))
    return total


def contraction_rate(phi: CommunicationArray, n_species: int, diameter: float) -> float:
    """``2 zeta lambda2(Phi(D))`` with unit species weights (0 if disconnected)."""
    w = np.ones(n_species)
    lap = build_weighted_laplacian(phi.array_at(diameter), w)
    if not lap.is_connected():
        return 0.0
    return 2.0 * zeta(w) * lap.lambda2


@dataclass(frozen=True)
class AggregateRecord:
    t: float
    D: float
    deltaD: float
    centerOfMass: tuple[float, ...]
    boundRatioD: float = 1.0
    #: the unit-weight weighted diameter is above the rounding floor of the positions
    resolved: bool = True


@dataclass
class AggregateTrajectory:
    records: list[AggregateRecord]
    final: AggregateState
    rate: float
    masses: np.ndarray = field(default=None)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def run_aggregation(
    state: AggregateState,
    phi: CommunicationArray,
    dt: float,
    T: float,
    record_every: int = 1,
    masses=None,
    threads: int = 1,
    snapshot=None,
) -> AggregateTrajectory:
    """RK4 evolution with diameter, weighted-diameter and centre-of-mass records.

    ``boundRatioD`` compares the unit-weight weighted diameter with the
    envelope ``dD(0) exp(-rate t)``, ``rate`` from :func:`contraction_rate`
    at the initial diameter.  Once the spread reaches the rounding floor of
    the coordinates the ratio is meaningless; such records have
    ``resolved=False``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    check_phi(phi, state.n_species)
    m, _ = agent_weights(state.sizes, masses)
    d0 = max_pair_distance(state.flat())[0]
    rate = contraction_rate(phi, state.n_species, d0)
    dd_unit0 = weighted_diameter(state)
    _, p_unit = agent_weights(state.sizes)
    t0 = state.t

    def record(s: AggregateState) -> AggregateRecord:
        dd = weighted_diameter(s, m)
        dd_unit = weighted_diameter(s)
        ratio = dd_unit / (dd_unit0 * math.exp(-rate * (s.t - t0))) if dd_unit0 > 0 else 0.0
        x = s.flat()
        floor = 2.0 * (ROUNDING_FLOOR * float(np.max(np.abs(x))) * float(np.sum(p_unit))) ** 2
        return AggregateRecord(
            t=s.t,
            D=max_pair_distance(s.flat())[0],
            deltaD=dd,
            centerOfMass=tuple(float(c) for c in center_of_mass(s, m)),
            boundRatioD=ratio,
            resolved=dd_unit > floor,
        )

    records = [record(state)]
    if snapshot is not None:
        snapshot(state)
    n_steps = int(round((T - t0) / dt))
    for k in range(1, n_steps + 1):
        state = step(state, phi, dt, threads)
        state.t = t0 + k * dt
        if k % record_every == 0 or k == n_steps:
            records.append(record(state))
            if snapshot is not None:
                snapshot(state)
    return AggregateTrajectory(records, state, rate, m)


@dataclass(frozen=True)
class ConsensusReport:
    converged: bool
    limitPoint: tuple[float, ...]
    rateMeasured: float
    rateBound: float
    secondMoment: float


def consensus_check(traj: AggregateTrajectory, rtol: float = CONSENSUS_RTOL) -> ConsensusReport:
    """Test convergence to the initial centre of mass.

    The second moment ``sum_ai w_ai |x_ai - xbar_0|^2`` of the final state is
    compared with ``rtol * dD(0)``.  ``rateMeasured`` is the least-squares
    slope of ``log dD`` over the resolved samples (0 when fewer than two
    such samples exist).
    """
    if not traj.records:
        raise ValueError("empty trajectory")
    first = traj.records[0]
    limit = np.array(first.centerOfMass)
    _, p = agent_weights(traj.final.sizes, traj.masses)
    x = traj.final.flat()
    moment = float(np.sum(p * np.sum((x - limit[None, :]) ** 2, axis=1)))
    dd0 = first.deltaD
    converged = moment <= rtol * dd0 if dd0 > 0 else moment == 0.0

    t = traj.column("t")
    dd = traj.column("deltaD")
    keep = np.array([r.resolved for r in traj.records]) & (dd > 0)
    slope = 0.0
    if dd0 > 0 and np.count_nonzero(keep) >= 2:
        slope = float(np.polyfit(t[keep], np.log(dd[keep]), 1)[0])
    return ConsensusReport(converged, tuple(float(c) for c in limit), slope, -traj.rate, moment)


__all__ = [
    "AggregateState",
    "aggregation_velocity",
    "step",
    "center_of_mass",
    "weighted_diameter",
    "p_weighted_diameter",
    "contraction_rate",
    "AggregateRecord",
    "AggregateTrajectory",
    "run_aggregation",
    "ConsensusReport",
    "consensus_check",
    "CONSENSUS_RTOL",
]
