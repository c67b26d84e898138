"""Radial communication kernels, symmetric kernel arrays and connectivity profiles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from .spectral import CONNECTED_THRESHOLD, build_weighted_laplacian, weight_vector

FAMILIES = ("zero", "constant", "pareto", "cutoff", "tabulated")


@dataclass(frozen=True)
class RadialKernel:
    """Non-negative, non-increasing function of distance.

    Families and their parameters:

    ``zero``       phi = 0
    ``constant``   phi = c (negative ``c`` only as a flagged self-interaction)
    ``pareto``     phi = c (1 + r)^(-theta)
    ``cutoff``     phi = c for r <= radius, 0 beyond
    ``tabulated``  piecewise-linear through (knots, values), constant outside
    """

    family: str
    c: float = 0.0
    theta: float = 0.0
    radius: float = math.inf
    knots: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    dealign: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        self._validate()

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, c: float):
        return cls("constant", c=float(c), dealign=float(c) < 0.0)

    @classmethod
    def pareto(cls, c: float, theta: float):
        return cls("pareto", c=float(c), theta=float(theta))

    @classmethod
    def cutoff(cls, c: float, radius: float):
        return cls("cutoff", c=float(c), radius=float(radius))

    @classmethod
    def tabulated(cls, knots, values):
        return cls(
            "tabulated",
            knots=tuple(float(k) for k in knots),
            values=tuple(float(v) for v in values),
        )

    def _validate(self):
        for name in ("c", "theta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"kernel parameter {name} must be finite")
        if self.family == "constant" and self.c < 0.0 and not self.dealign:
            raise ValueError("negative constant kernels must be flagged as de-aligning")
        if self.family in ("pareto", "cutoff") and self.c < 0.0:
            raise ValueError(f"{self.family} kernel needs c >= 0")
        if self.family == "pareto" and self.theta < 0.0:
            raise ValueError("pareto exponent must be >= 0 for a decreasing kernel")
        if self.family == "cutoff" and not self.radius > 0.0:
            raise ValueError("cutoff radius must be positive")
        if self.family == "tabulated":
            knots = np.asarray(self.knots)
            vals = np.asarray(self.values)
            if knots.size < 2 or knots.size != vals.size:
                raise ValueError("tabulated kernel needs >= 2 knots with one value each")
            if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(vals))):
                raise ValueError("tabulated kernel has non-finite entries")
            if knots[0] < 0.0 or np.any(np.diff(knots) <= 0.0):
                raise ValueError("tabulated knots must be non-negative and strictly increasing")
            if np.any(vals < 0.0):
                raise ValueError("tabulated kernel values must be non-negative")
            # knots plus 10x refined midpoints
            fine = np.concatenate(
                [np.linspace(knots[i], knots[i + 1], 11) for i in range(knots.size - 1)]
            )
            if np.any(np.diff(self(fine)) > 0.0):
                raise ValueError("tabulated kernel is not non-increasing")

    @property
    def is_zero(self) -> bool:
        return self.family == "zero" or (self.family != "tabulated" and self.c == 0.0) or (
            self.family == "tabulated" and not any(self.values)
        )

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "zero":
            return np.zeros_like(r)
        if self.family == "constant":
            return np.full_like(r, self.c)
        if self.family == "pareto":
            return self.c * (1.0 + r) ** (-self.theta)
        if self.family == "cutoff":
            return np.where(r <= self.radius, self.c, 0.0)
        return np.interp(r, self.knots, self.values)

    def sup(self) -> float:
        """``max_r |phi(r)|``, attained at r = 0 for these families."""
        return abs(float(self(0.0)))

    def to_dict(self) -> dict:
        if self.family == "zero":
            return {"family": "zero"}
        if self.family == "constant":
            return {"family": "constant", "c": self.c}
        if self.family == "pareto":
            return {"family": "pareto", "c": self.c, "theta": self.theta}
        if self.family == "cutoff":
            return {"family": "cutoff", "c": self.c, "radius": self.radius}
        return {"family": "tabulated", "knots": list(self.knots), "values": list(self.values)}

    @classmethod
    def from_dict(cls, desc: Mapping, base_dir: Path | None = None) -> "RadialKernel":
        desc = dict(desc)
        family = desc.pop("family", None)
        if family is None:
            raise ValueError("kernel description is missing 'family'")
        try:
            if family == "zero":
                kern = cls.zero()
            elif family == "constant":
                kern = cls.constant(desc.pop("c"))
            elif family == "pareto":
                kern = cls.pareto(desc.pop("c", 1.0), desc.pop("theta"))
            elif family == "cutoff":
                kern = cls.cutoff(desc.pop("c", 1.0), desc.pop("radius"))
            elif family == "tabulated":
                if "file" in desc:
                    path = Path(desc.pop("file"))
                    if base_dir is not None and not path.is_absolute():
                        path = base_dir / path
                    kern = load_tabulated(path)
                else:
                    kern = cls.tabulated(desc.pop("knots"), desc.pop("values"))
            else:
                raise ValueError(f"unknown kernel family {family!r}")
        except KeyError as exc:
            raise ValueError(f"{family} kernel is missing parameter {exc.args[0]!r}") from None
        if desc:
            raise ValueError(f"unexpected {family} kernel parameters: {sorted(desc)}")
        return kern


def save_tabulated(kernel: RadialKernel, path) -> None:
    """Write a tabulated kernel as two columns ``r value`` (round-trip exact)."""
    if kernel.family != "tabulated":
        raise ValueError("only tabulated kernels are stored as tables")
    lines = [f"{k!r} {v!r}" for k, v in zip(kernel.knots, kernel.values)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_tabulated(path) -> RadialKernel:
    knots, values = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two columns 'r value'")
        knots.append(float(parts[0]))
        values.append(float(parts[1]))
    return RadialKernel.tabulated(knots, values)


class CommunicationArray:
    """Symmetric array of radial kernels, one per unordered species pair.

    Only the upper triangle is stored, so ``kernel(a, b) is kernel(b, a)``.
    """

    def __init__(self, n: int, kernels: Mapping[tuple[int, int], RadialKernel]):
        if n < 1:
            raise ValueError("need at least one species")
        self.n = n
        store: dict[tuple[int, int], RadialKernel] = {}
        for (i, j), kern in kernels.items():
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"kernel index ({i}, {j}) out of range for {n} species")
            key = (min(i, j), max(i, j))
            if key in store and store[key] != kern:
                raise ValueError(
                    f"symmetry violation: kernel ({i + 1},{j + 1}) differs from ({j + 1},{i + 1})"
                )
            if kern.dealign and i != j:
                raise ValueError("negative (de-aligning) kernels are allowed on the diagonal only")
            store[key] = kern
        self._store = store

    @classmethod
    def uniform(cls, n: int, kernel: RadialKernel, *, self_interaction: bool = True):
        pairs = {(i, j): kernel for i in range(n) for j in range(i, n) if self_interaction or i != j}
        return cls(n, pairs)

    def kernel(self, i: int, j: int) -> RadialKernel:
        return self._store.get((min(i, j), max(i, j)), _ZERO)

    def pairs(self):
        """Iterate ``((i, j), kernel)`` over the stored upper triangle."""
        return iter(sorted(self._store.items()))

    def array_at(self, r: float) -> np.ndarray:
        """Evaluate every kernel at distance ``r``: a symmetric n x n array."""
        if r < 0:
            raise ValueError("distance must be non-negative")
        out = np.zeros((self.n, self.n))
        for (i, j), kern in self._store.items():
            out[i, j] = out[j, i] = float(kern(r))
        return out

    def sup_array(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for (i, j), kern in self._store.items():
            out[i, j] = out[j, i] = kern.sup()
        return out

    def dealigning_diagonal(self) -> dict[int, float]:
        return {i: kern.c for (i, j), kern in self._store.items() if i == j and kern.dealign}

    def offdiagonal_part(self) -> "CommunicationArray":
        return CommunicationArray(self.n, {k: v for k, v in self._store.items() if k[0] != k[1]})

    def to_dict(self) -> dict:
        return {f"{i + 1}-{j + 1}": kern.to_dict() for (i, j), kern in self.pairs()}


_ZERO = RadialKernel.zero()


class Profile(NamedTuple):
    r: np.ndarray
    lambda2: np.ndarray


def connectivity_profile(phi: CommunicationArray, w, r_grid, *, rtol: float = 1e-9) -> Profile:
    """Fiedler number of the weighted Laplacian of ``phi(r)`` along ``r_grid``.

    Raises ``ValueError`` if the profile increases by more than ``rtol`` of
    the Laplacian norm between consecutive points, which can only happen for
    kernels that are not decreasing.
    """
    w = weight_vector(w)
    r_grid = np.asarray(r_grid, dtype=float)
    if np.any(np.diff(r_grid) < 0.0):
        raise ValueError("r grid must be sorted ascending")
    lam = np.empty(r_grid.size)
    scale = 0.0
    for k, r in enumerate(r_grid):
        lap = build_weighted_laplacian(phi.array_at(float(r)), w)
        lam[k] = lap.lambda2 if lap.is_connected() else 0.0
        scale = max(scale, lap.norm)
    if np.any(np.diff(lam) > rtol * max(scale, 1e-300)):
        raise ValueError("connectivity profile is increasing; kernels are not decreasing")
    return Profile(r_grid, lam)


def connectivity_along_diameter(phi: CommunicationArray, w, times, diameters) -> Profile:
    """Fiedler number of ``phi(D(t))`` sampled along a diameter history.

    The returned profile is indexed by time instead of distance, so it can be
    fed to :func:`estimate_tail_exponent` to test the time-composed tail.
    """
    w = weight_vector(w)
    times = np.asarray(times, dtype=float)
    lam = np.empty(times.size)
    for k, d in enumerate(np.asarray(diameters, dtype=float)):
        lap = build_weighted_laplacian(phi.array_at(float(d)), w)
        lam[k] = lap.lambda2 if lap.is_connected() else 0.0
    return Profile(times, lam)


@dataclass(frozen=True)
class TailFit:
    theta: float
    c: float
    certified: bool
    reason: str = ""
    #: largest constant with lambda2(r) >= c_floor (1+r)^(-theta) on every sample
    c_floor: float = 0.0


def estimate_tail_exponent(
    profile: Profile,
    *,
    margin: float = 1e-3,
    eps_fit: float = 0.05,
    window: tuple[float, float] | None = None,
) -> TailFit:
    """Fit ``lambda2(r) ~ c (1 + r)^(-theta)`` by least squares in log-log form.

    The tail is certified when ``theta < 1 - margin`` and no sample falls
    more than ``eps_fit`` below the fitted curve.
    """
    r = np.asarray(profile.r, dtype=float)
    lam = np.asarray(profile.lambda2, dtype=float)
    if window is not None:
        keep = (r >= window[0]) & (r <= window[1])
        r, lam = r[keep], lam[keep]
    if r.size < 3:
        return TailFit(math.nan, math.nan, False, "need at least 3 profile points")
    if np.any(lam <= 0.0):
        r0 = float(r[np.argmax(lam <= 0.0)])
        return TailFit(math.nan, 0.0, False, f"connectivity lost at r={r0:g}")
    x = -np.log1p(r)
    y = np.log(lam)
    design = np.column_stack([np.ones_like(x), x])
    (log_c, theta), *_ = np.linalg.lstsq(design, y, rcond=None)
    theta = float(theta)
    if abs(theta) < 1e-12:
        theta = 0.0
    c = float(math.exp(log_c))
    envelope = c * (1.0 + r) ** (-theta)
    c_floor = float(np.min(lam * (1.0 + r) ** theta))
    if not theta < 1.0 - margin:
        return TailFit(theta, c, False, f"tail exponent {theta:.4g} is not below 1", c_floor)
    if np.any(lam < envelope * (1.0 - eps_fit)):
        return TailFit(theta, c, False, "samples fall below the fitted power law", c_floor)
    return TailFit(theta, c, True, "", c_floor)


__all__ = [
    "FAMILIES",
    "RadialKernel",
    "CommunicationArray",
    "save_tabulated",
    "load_tabulated",
    "Profile",
    "connectivity_profile",
    "connectivity_along_diameter",
    "TailFit",
    "estimate_tail_exponent",
]
