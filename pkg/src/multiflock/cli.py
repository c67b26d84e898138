"""Command-line front end: scenario files in, diagnostics CSV and summary JSON out.

    multiflock run SCENARIO [--out DIR] [--threads N]
    multiflock check SCENARIO
    multiflock profile SCENARIO [--out DIR]
    multiflock report CSV [--output FILE]

Exit codes: 0 success, 2 configuration error, 3 numerical blow-up,
4 monitor violation.  Scenario files are TOML; the grammar is documented in
the README.  ``MULTIFLOCK_LOG_LEVEL`` sets the logging verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import aggregate, hydro1d, kernels, spectral, swarm, threshold2d

log = logging.getLogger("multiflock")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_MONITOR = 4

CSV_VERSION = 1
MODES = ("swarm", "aggregate", "hydro1d", "threshold2d", "spectral-report")
DEFAULT_TOLERANCES = {
    "envelope": 1e-6,
    "monotone": 1e-8,
    "momentum": 1e-8,
    "center_of_mass": 1e-8,
    "mass": 1e-12,
    "hydro_slack": 10.0,
}


class ConfigError(Exception):
    """Schema errors, each with the field path it refers to."""

    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


# ---------------------------------------------------------------- schema helpers


class _Section:
    """Typed access to one TOML table; problems accumulate in ``errors``."""

    def __init__(self, data: Any, path: str, errors: list[str]):
        self.path = path
        self.errors = errors
        if data is None:
            data = {}
        if not isinstance(data, dict):
            errors.append(f"{path}: expected a table")
            data = {}
        self.data = data
        self.used: set[str] = set()

    def _where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def raw(self, key: str, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def number(self, key: str, default=None, *, positive=False, nonnegative=False, required=False):
        self.used.add(key)
        if key not in self.data:
            if required:
                self.errors.append(f"{self._where(key)}: missing required number")
            return default
        value = self.data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.errors.append(f"{self._where(key)}: expected a finite number, got {value!r}")
            return default
        if positive and not value > 0:
            self.errors.append(f"{self._where(key)}: must be positive, got {value!r}")
            return default
        if nonnegative and value < 0:
            self.errors.append(f"{self._where(key)}: must be non-negative, got {value!r}")
            return default
        return float(value)

    def integer(self, key: str, default=None, *, minimum=None, required=False):
        self.used.add(key)
        if key not in self.data:
            if required:
                self.errors.append(f"{self._where(key)}: missing required integer")
            return default
        value = self.data[key]
        if isinstance(value, bool) or not isinstance(value, int):
            self.errors.append(f"{self._where(key)}: expected an integer, got {value!r}")
            return default
        if minimum is not None and value < minimum:
            self.errors.append(f"{self._where(key)}: must be >= {minimum}, got {value}")
            return default
        return int(value)

    def string(self, key: str, default=None, *, choices=None, required=False):
        self.used.add(key)
        if key not in self.data:
            if required:
                self.errors.append(f"{self._where(key)}: missing required string")
            return default
        value = self.data[key]
        if not isinstance(value, str):
            self.errors.append(f"{self._where(key)}: expected a string, got {value!r}")
            return default
        if choices is not None and value not in choices:
            self.errors.append(f"{self._where(key)}: unknown value {value!r}; expected one of {', '.join(choices)}")
            return default
        return value

    def boolean(self, key: str, default=False):
        self.used.add(key)
        value = self.data.get(key, default)
        if not isinstance(value, bool):
            self.errors.append(f"{self._where(key)}: expected true or false, got {value!r}")
            return default
        return value

    def vector(self, key: str, default=None, *, length=None, required=False, broadcast=False):
        """A finite 1-D list; with ``broadcast`` a scalar is repeated ``length`` times."""
        self.used.add(key)
        if key not in self.data:
            if required:
                self.errors.append(f"{self._where(key)}: missing required list of numbers")
            return default
        value = self.data[key]
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            self.errors.append(f"{self._where(key)}: expected a list of numbers, got {value!r}")
            return default
        if broadcast and arr.ndim == 0 and length is not None:
            arr = np.full(length, float(arr))
        if arr.ndim != 1 or (length is not None and arr.size != length) or not np.all(np.isfinite(arr)):
            want = f" of length {length}" if length is not None else ""
            self.errors.append(f"{self._where(key)}: expected a finite list{want}, got {value!r}")
            return default
        return arr

    def table(self, key: str) -> "_Section":
        self.used.add(key)
        return _Section(self.data.get(key), self._where(key), self.errors)

    def finish(self) -> None:
        for key in sorted(set(self.data) - self.used):
            self.errors.append(f"{self._where(key)}: unknown key")


# ---------------------------------------------------------------- scenario


@dataclass
class Scenario:
    path: Path
    mode: str
    seed: int | None
    threads: int
    phi: kernels.CommunicationArray | None
    species: list[dict]
    integrator: dict
    output: dict
    tolerances: dict
    profile: dict
    extra: dict = field(default_factory=dict)
    masses: np.ndarray | None = None

    @property
    def base_dir(self) -> Path:
        return self.path.parent

    def out_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        d = Path(self.output.get("dir") or f"{self.path.stem}_out")
        return d if d.is_absolute() else self.base_dir / d


RANDOM_KINDS = {"uniform", "gaussian"}


def _parse_sampler(sec: _Section, key: str, d: int | None, needs_seed: list[bool]) -> dict | None:
    desc = sec.table(key)
    if not sec.has(key):
        sec.errors.append(f"{desc.path}: missing initializer")
        return None
    kind = desc.string("kind", required=True, choices=("uniform", "gaussian", "points", "constant"))
    out: dict[str, Any] = {"kind": kind}
    if kind == "uniform":
        out["low"] = desc.vector("low", required=True, length=d, broadcast=True)
        out["high"] = desc.vector("high", required=True, length=d, broadcast=True)
        if out["low"] is not None and out["high"] is not None and np.any(out["high"] < out["low"]):
            desc.errors.append(f"{desc.path}: high must be >= low")
    elif kind == "gaussian":
        out["mean"] = desc.vector("mean", required=True, length=d)
        out["std"] = desc.number("std", required=True, nonnegative=True)
    elif kind == "constant":
        out["value"] = desc.vector("value", required=True, length=d, broadcast=True)
    elif kind == "points":
        vals = desc.raw("values")
        try:
            arr = np.atleast_2d(np.asarray(vals, dtype=float))
            if arr.ndim != 2 or arr.size == 0 or (d is not None and arr.shape[1] != d) or not np.all(np.isfinite(arr)):
                raise ValueError
            out["values"] = arr
        except (TypeError, ValueError):
            desc.errors.append(f"{desc.path}.values: expected a non-empty list of {d}-vectors")
    if kind in RANDOM_KINDS:
        needs_seed[0] = True
    desc.finish()
    return out


def _sample(desc: dict, count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    kind = desc["kind"]
    if kind == "uniform":
        return rng.uniform(desc["low"], desc["high"], size=(count, d))
    if kind == "gaussian":
        return desc["mean"] + desc["std"] * rng.standard_normal((count, d))
    if kind == "constant":
        return np.tile(desc["value"], (count, 1))
    return np.array(desc["values"], dtype=float)


def _parse_kernels(root: _Section, n: int, base: Path) -> kernels.CommunicationArray | None:
    sec = root.table("kernels")
    if not root.has("kernels"):
        root.errors.append("kernels: missing table")
        return None
    entries: dict[tuple[int, int], kernels.RadialKernel] = {}
    default = None
    ok = True
    for key in sorted(sec.data):
        sec.used.add(key)
        where = f"kernels.{key}"
        desc = sec.data[key]
        try:
            kern = kernels.RadialKernel.from_dict(desc, base)
        except (ValueError, KeyError, TypeError, OSError) as exc:
            root.errors.append(f"{where}: {exc}")
            ok = False
            continue
        if key == "default":
            default = kern
            continue
        parts = key.split("-")
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            root.errors.append(f"{where}: kernel keys look like \"1-2\" (1-based species indices) or \"default\"")
            ok = False
            continue
        i, j = int(parts[0]) - 1, int(parts[1]) - 1
        if not (0 <= i < n and 0 <= j < n):
            root.errors.append(f"{where}: species index out of range 1..{n}")
            ok = False
            continue
        if (j, i) in entries and entries[(j, i)] != kern:
            root.errors.append(f"{where}: symmetry violation: kernel ({i + 1},{j + 1}) differs from ({j + 1},{i + 1})")
            ok = False
            continue
        entries[(i, j)] = kern
    if not ok:
        return None
    if default is not None:
        for i in range(n):
            for j in range(i, n):
                if (i, j) not in entries and (j, i) not in entries:
                    entries[(i, j)] = default
    try:
        return kernels.CommunicationArray(n, entries)
    except ValueError as exc:
        root.errors.append(f"kernels: {exc}")
        return None


def _parse_profile_1d(desc: _Section) -> dict | None:
    kind = desc.string("kind", required=True, choices=("constant", "sine", "gaussian", "tabulated"))
    out: dict[str, Any] = {"kind": kind}
    if kind == "constant":
        out["value"] = desc.number("value", required=True)
    elif kind == "sine":
        out["mean"] = desc.number("mean", 0.0)
        out["amplitude"] = desc.number("amplitude", required=True)
        out["k"] = desc.integer("k", 1)
        out["phase"] = desc.number("phase", 0.0)
    elif kind == "gaussian":
        out["background"] = desc.number("background", 0.0)
        out["amplitude"] = desc.number("amplitude", required=True)
        out["center"] = desc.number("center", required=True)
        out["width"] = desc.number("width", required=True, positive=True)
    elif kind == "tabulated":
        out["file"] = desc.string("file", required=True)
    desc.finish()
    return out


def _eval_profile_1d(desc: dict, x: np.ndarray, L: float, base: Path) -> np.ndarray:
    kind = desc["kind"]
    if kind == "constant":
        return np.full(x.size, desc["value"])
    if kind == "sine":
        return desc["mean"] + desc["amplitude"] * np.sin(2 * math.pi * desc["k"] * x / L + desc["phase"])
    if kind == "gaussian":
        d = hydro1d.torus_distance(x, desc["center"], L)
        return desc["background"] + desc["amplitude"] * np.exp(-0.5 * (d / desc["width"]) ** 2)
    path = Path(desc["file"])
    path = path if path.is_absolute() else base / path
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (x, value)")
    return np.interp(x, data[:, 0], data[:, 1], period=L)


def parse_scenario(path) -> Scenario:
    """Read and validate a scenario file; raises :class:`ConfigError`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None

    errors: list[str] = []
    root = _Section(data, "", errors)
    mode = root.string("mode", required=True, choices=MODES)
    seed = root.integer("seed")
    threads = root.integer("threads", 1, minimum=1)

    out_sec = root.table("output")
    output = {
        "dir": out_sec.string("dir"),
        "csv": out_sec.string("csv", "diagnostics.csv"),
        "summary": out_sec.string("summary", "summary.json"),
        "snapshots": out_sec.boolean("snapshots", False),
    }
    out_sec.finish()

    tol_sec = root.table("tolerances")
    tolerances = dict(DEFAULT_TOLERANCES)
    for key in DEFAULT_TOLERANCES:
        tolerances[key] = tol_sec.number(key, DEFAULT_TOLERANCES[key], positive=True)
    tol_sec.finish()

    prof_sec = root.table("profile")
    profile = {
        "r_max": prof_sec.number("r_max", None, positive=True),
        "points": prof_sec.integer("points", 200, minimum=3),
        "margin": prof_sec.number("margin", 1e-3, positive=True),
        "eps_fit": prof_sec.number("eps_fit", 0.05, positive=True),
        "window": prof_sec.vector("window", None, length=2),
        "forecast": prof_sec.boolean("forecast", False),
        "horizon_fraction": prof_sec.number("horizon_fraction", 1e-6, positive=True),
    }
    prof_sec.finish()

    species_raw = root.raw("species")
    if not isinstance(species_raw, list) or not species_raw:
        errors.append("species: expected a non-empty array of tables ([[species]])")
        species_raw = []
    n = len(species_raw)

    integ = root.table("integrator")
    integrator = {
        "dt": integ.number("dt", None, positive=True),
        "T": integ.number("T", None, positive=True),
        "record_every": integ.integer("record_every", 1, minimum=1),
        "cfl": integ.number("cfl", hydro1d.CFL_DEFAULT, positive=True),
        "flux": integ.string("flux", "global", choices=hydro1d.FLUXES),
        "stop_fraction": integ.number("stop_fraction", None, positive=True),
    }
    integ.finish()

    extra: dict[str, Any] = {}
    species: list[dict] = []
    needs_seed = [False]
    masses = None

    if mode in ("swarm", "aggregate"):
        space = root.table("space")
        d = space.integer("d", None, minimum=1)
        space.finish()
        if d is None:
            errors.append("space.d: missing spatial dimension")
        if integrator["T"] is None:
            errors.append("integrator.T: missing required number")
        m_list = []
        for k, raw in enumerate(species_raw):
            sec = _Section(raw, f"species[{k + 1}]", errors)
            count = sec.integer("count", None, minimum=1)
            mass = sec.number("mass", None, positive=True)
            m_list.append(mass)
            entry = {"count": count, "positions": _parse_sampler(sec, "positions", d, needs_seed)}
            if mode == "swarm":
                entry["velocities"] = _parse_sampler(sec, "velocities", d, needs_seed)
            for key in ("positions", "velocities"):
                s = entry.get(key)
                if s and s["kind"] == "points":
                    pts = s.get("values")
                    if pts is not None:
                        if count is not None and count != pts.shape[0]:
                            errors.append(f"species[{k + 1}].{key}: {pts.shape[0]} points but count = {count}")
                        entry["count"] = pts.shape[0]
            if entry["count"] is None:
                errors.append(f"species[{k + 1}].count: missing required integer")
            sec.finish()
            species.append(entry)
        if any(m is not None for m in m_list):
            if any(m is None for m in m_list):
                errors.append("species: give a mass for every species or for none")
            else:
                masses = np.array(m_list)
        extra["d"] = d
    elif mode == "hydro1d":
        g = root.table("grid")
        extra["n"] = g.integer("n", None, minimum=3, required=True)
        extra["L"] = g.number("L", 2 * math.pi, positive=True)
        g.finish()
        if integrator["T"] is None:
            errors.append("integrator.T: missing required number")
        for k, raw in enumerate(species_raw):
            sec = _Section(raw, f"species[{k + 1}]", errors)
            entry = {
                "rho": _parse_profile_1d(sec.table("rho")),
                "u": _parse_profile_1d(sec.table("u")),
                "mass": sec.number("mass", None, positive=True),
            }
            sec.finish()
            species.append(entry)
    elif mode == "threshold2d":
        g = root.table("grid")
        extra["file"] = g.string("file")
        if extra["file"] is None:
            shape = g.vector("n", None, length=2, required=True)
            extra["shape"] = tuple(int(v) for v in shape) if shape is not None else None
            if shape is not None and (np.any(shape < 3) or np.any(shape != np.round(shape))):
                errors.append("grid.n: expected two integers >= 3")
            extra["h"] = g.number("h", None, positive=True, required=True)
            extra["origin"] = g.vector("origin", np.zeros(2), length=2)
        g.finish()
        th = root.table("threshold")
        extra["d_inf"] = th.number("d_inf", None, nonnegative=True)
        th.finish()
        if extra["file"] is None:
            for k, raw in enumerate(species_raw):
                sec = _Section(raw, f"species[{k + 1}]", errors)
                rho = sec.table("rho")
                r = {
                    "center": rho.vector("center", required=True, length=2),
                    "sigma": rho.number("sigma", required=True, positive=True),
                    "radius": rho.number("radius", required=True, positive=True),
                    "mass": rho.number("mass", 1.0, positive=True),
                }
                rho.string("kind", "bump", choices=("bump",))
                rho.finish()
                u = sec.table("u")
                kind = u.string("kind", "zero", choices=("zero", "linear"))
                uspec = {"kind": kind}
                if kind == "linear":
                    mat = u.raw("matrix")
                    try:
                        A = np.asarray(mat, dtype=float)
                        if A.shape != (2, 2) or not np.all(np.isfinite(A)):
                            raise ValueError
                        uspec["matrix"] = A
                    except (TypeError, ValueError):
                        errors.append(f"{u.path}.matrix: expected a 2x2 list of numbers")
                    uspec["offset"] = u.vector("offset", np.zeros(2), length=2)
                u.finish()
                sec.finish()
                species.append({"rho": r, "u": uspec})
        else:
            species = [{} for _ in species_raw]
    elif mode == "spectral-report":
        for k, raw in enumerate(species_raw):
            sec = _Section(raw, f"species[{k + 1}]", errors)
            species.append({"mass": sec.number("mass", 1.0, positive=True)})
            sec.finish()
        masses = np.array([s["mass"] for s in species if s["mass"] is not None]) if species else None

    phi = _parse_kernels(root, max(n, 1), path.parent) if n else None
    root.finish()

    if needs_seed[0] and seed is None:
        errors.append("seed: required because a random initializer is used")
    if errors:
        raise ConfigError(errors)
    return Scenario(path, mode, seed, threads, phi, species, integrator, output, tolerances, profile, extra, masses)


# ---------------------------------------------------------------- initial data


def build_swarm_state(s: Scenario) -> swarm.SwarmState:
    rng = np.random.default_rng(s.seed)
    d = s.extra["d"]
    pos, vel = [], []
    for sp in s.species:
        pos.append(_sample(sp["positions"], sp["count"], d, rng))
        vel.append(_sample(sp["velocities"], sp["count"], d, rng))
    return swarm.SwarmState(0.0, pos, vel)


def build_aggregate_state(s: Scenario) -> aggregate.AggregateState:
    rng = np.random.default_rng(s.seed)
    d = s.extra["d"]
    return aggregate.AggregateState(0.0, [_sample(sp["positions"], sp["count"], d, rng) for sp in s.species])


def build_hydro_state(s: Scenario) -> hydro1d.HydroState1D:
    n, L = s.extra["n"], s.extra["L"]
    x = hydro1d.grid(n, L)
    rho, u = [], []
    for k, sp in enumerate(s.species):
        r = _eval_profile_1d(sp["rho"], x, L, s.base_dir)
        if sp["mass"] is not None:
            total = float(np.sum(r)) * (L / n)
            if not total > 0:
                raise ConfigError([f"species[{k + 1}].rho: cannot rescale a profile of zero mass"])
            r = r * (sp["mass"] / total)
        rho.append(r)
        u.append(_eval_profile_1d(sp["u"], x, L, s.base_dir))
    try:
        return hydro1d.HydroState1D(0.0, L, rho, u)
    except ValueError as exc:
        raise ConfigError([f"species: {exc}"]) from None


def build_fields(s: Scenario) -> threshold2d.Field2D:
    try:
        if s.extra["file"] is not None:
            p = Path(s.extra["file"])
            fields = threshold2d.load_fields(p if p.is_absolute() else s.base_dir / p)
            if fields.n_species != len(s.species):
                raise ValueError(f"field file holds {fields.n_species} species but {len(s.species)} are declared")
            return fields
        shape, h = s.extra["shape"], s.extra["h"]
        x0, y0 = (float(c) for c in s.extra["origin"])
        X, Y = np.meshgrid(x0 + h * np.arange(shape[0]), y0 + h * np.arange(shape[1]), indexing="ij")
        rho, u = [], []
        for sp in s.species:
            r = sp["rho"]
            rho.append(threshold2d.gaussian_bump(shape, h, r["center"], r["sigma"], r["radius"], r["mass"], x0, y0))
            if sp["u"]["kind"] == "linear":
                u.append(threshold2d.linear_velocity(X, Y, sp["u"]["matrix"], sp["u"]["offset"]))
            else:
                u.append(np.zeros(shape + (2,)))
        return threshold2d.Field2D(h, rho, u, x0, y0)
    except (ValueError, OSError) as exc:
        raise ConfigError([f"grid/species: {exc}"]) from None


def validate_scenario(s: Scenario):
    """Build the initial data and run the checks that need it.  Returns the
    initial state (or fields)."""
    if s.mode == "swarm":
        state = build_swarm_state(s)
        if s.phi.dealigning_diagonal():
            d0 = swarm.max_pair_distance(state.flat()[0])[0]
            try:
                swarm.validate_dealignment(s.phi, np.ones(s.phi.n), d0)
            except ValueError as exc:
                raise ConfigError([f"kernels: {exc}"]) from None
        return state
    if s.phi.dealigning_diagonal():
        raise ConfigError([f"kernels: negative self-interactions are only supported in swarm mode"])
    if s.mode == "aggregate":
        return build_aggregate_state(s)
    if s.mode == "hydro1d":
        state = build_hydro_state(s)
        try:
            hydro1d.check_vacuum(state)
        except ValueError as exc:
            raise ConfigError([f"species: {exc}"]) from None
        return state
    if s.mode == "threshold2d":
        return build_fields(s)
    return None


# ---------------------------------------------------------------- output


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: Path, kind: str, columns: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# multiflock {kind} v{CSV_VERSION}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path) -> tuple[str, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split()
        if len(header) != 4 or header[:2] != ["#", "multiflock"] or header[3] != f"v{CSV_VERSION}":
            raise ValueError(f"{path}: not a multiflock v{CSV_VERSION} CSV")
        cols = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        data = np.zeros((0, len(cols)))
    return header[2], {c: data[:, k] for k, c in enumerate(cols)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def monitor(passed: bool, value, limit, note: str = "") -> dict:
    out = {"passed": bool(passed), "value": value, "limit": limit}
    if note:
        out["note"] = note
    return out


def log_slope(t: np.ndarray, y: np.ndarray, floor: float = 0.0) -> float | None:
    """Least-squares slope of ``log y`` against ``t`` over samples above ``floor``."""
    keep = y > floor
    if np.count_nonzero(keep) < 2:
        return None
    return float(np.polyfit(t[keep], np.log(y[keep]), 1)[0])


# ---------------------------------------------------------------- swarm


SWARM_COLUMNS = ["t", "D", "deltaV", "deltaE", "lambda2AtD"]


def swarm_rows(traj: swarm.Trajectory, d: int) -> tuple[list[str], list[list]]:
    cols = SWARM_COLUMNS + [f"momentum{k + 1}" for k in range(d)] + ["boundRatioE", "boundRatioV", "connected", "resolved"]
    rows = [
        [r.t, r.D, r.deltaV, r.deltaE, r.lambda2AtD, *r.momentum, r.boundRatioE, r.boundRatioV, r.connected, r.resolved]
        for r in traj.records
    ]
    return cols, rows


def swarm_monitors(cols: dict[str, np.ndarray], tol: dict, *, dealign: bool = False, total_mass: float, v_scale: float) -> dict:
    """Monitors computable from the diagnostics columns alone."""
    mons = {}
    dv = cols["deltaV"]
    increase = float(np.max(np.diff(dv))) if dv.size > 1 else 0.0
    limit = tol["monotone"] * max(float(dv[0]), 1e-300)
    mons["uniform-fluctuation-max-principle"] = monitor(increase <= limit, increase, limit)
    mom = np.column_stack([v for k, v in cols.items() if k.startswith("momentum")])
    drift = float(np.max(np.abs(mom - mom[0]))) if mom.size else 0.0
    limit = tol["momentum"] * max(v_scale * total_mass, 1e-300)
    mons["momentum-conservation"] = monitor(drift <= limit, drift, limit)
    resolved = cols["resolved"] > 0.5
    if dealign:
        mons["energy-fluctuation-envelope"] = monitor(True, None, None, "skipped: de-aligning self-interactions")
    else:
        ratio = float(np.max(cols["boundRatioE"][resolved])) if np.any(resolved) else 0.0
        mons["energy-fluctuation-envelope"] = monitor(ratio <= 1 + tol["envelope"], ratio, 1 + tol["envelope"])
    consistent = bool(np.all(cols["deltaE"] <= total_mass**2 * cols["deltaV"] ** 2 * (1 + 1e-12) + 1e-300))
    mons["energy-uniform-consistency"] = monitor(consistent, None, "deltaE <= (sum M)^2 deltaV^2")
    return mons


def swarm_summary(cols: dict[str, np.ndarray], resolved_only=True) -> dict:
    t = cols["t"]
    res = cols["resolved"] > 0.5
    slope_e = log_slope(t[res], cols["deltaE"][res]) if resolved_only else log_slope(t, cols["deltaE"])
    slope_v = log_slope(t[res], cols["deltaV"][res])
    return {
        "samples": int(t.size),
        "final": {
            "t": float(t[-1]),
            "D": float(cols["D"][-1]),
            "deltaV": float(cols["deltaV"][-1]),
            "deltaE": float(cols["deltaE"][-1]),
        },
        "initial": {"D": float(cols["D"][0]), "deltaV": float(cols["deltaV"][0]), "deltaE": float(cols["deltaE"][0])},
        "slopes": {"logDeltaE": slope_e, "logDeltaV": slope_v},
        "boundRatioMax": {
            "E": float(np.max(cols["boundRatioE"][res])) if np.any(res) else 0.0,
            "V": float(np.max(cols["boundRatioV"][res])) if np.any(res) else 0.0,
        },
        "maxD": float(np.max(cols["D"])),
    }


def tail_fit_for(phi, w, r_max: float, s: Scenario) -> tuple[kernels.Profile, kernels.TailFit]:
    r_grid = np.linspace(0.0, r_max, s.profile["points"])
    prof = kernels.connectivity_profile(phi, w, r_grid)
    window = tuple(s.profile["window"]) if s.profile["window"] is not None else None
    fit = kernels.estimate_tail_exponent(prof, margin=s.profile["margin"], eps_fit=s.profile["eps_fit"], window=window)
    return prof, fit


def _fit_dict(fit: kernels.TailFit) -> dict:
    return {"theta": fit.theta, "c": fit.c, "c_floor": fit.c_floor, "certified": fit.certified, "reason": fit.reason}


def run_swarm(s: Scenario, state: swarm.SwarmState, out: Path, threads: int) -> tuple[int, dict]:
    phi = s.phi
    dt = s.integrator["dt"] or swarm.default_dt(phi)
    d = state.d
    snap_dir = out / "snapshots"
    counter = [0]

    def snapshot(st: swarm.SwarmState):
        snap_dir.mkdir(parents=True, exist_ok=True)
        with open(snap_dir / f"state_{counter[0]:06d}.txt", "w") as fh:
            fh.write(f"# t={st.t!r} species index x[{d}] v[{d}]\n")
            for a, (x, v) in enumerate(zip(st.positions, st.velocities)):
                for i in range(x.shape[0]):
                    fh.write(" ".join([str(a + 1), str(i + 1)] + [repr(float(c)) for c in (*x[i], *v[i])]) + "\n")
        counter[0] += 1

    x0, v0 = state.flat()
    D0 = swarm.max_pair_distance(x0)[0]
    dV0 = swarm.max_pair_distance(v0)[0]
    summary: dict[str, Any] = {"mode": "swarm", "dt": dt}
    forecast = None
    if s.profile["forecast"]:
        r_max = s.profile["r_max"] or max(10.0 * (D0 + 1.0), 10.0)
        _, fit = tail_fit_for(phi, np.ones(phi.n), r_max, s)
        summary["tailFit"] = _fit_dict(fit)
        if fit.certified and fit.c_floor > 0:
            forecast = swarm.diameter_forecast(D0, dV0, np.ones(phi.n), fit.theta, fit.c_floor)
            summary["forecast"] = {
                "D_inf": forecast.D_inf,
                "C_theta": forecast.C_theta,
                "rate": forecast.rate,
                "horizon": forecast.horizon(s.profile["horizon_fraction"]),
                "horizonFraction": s.profile["horizon_fraction"],
            }
    stop = None
    if s.integrator["stop_fraction"] is not None and dV0 > 0:
        frac = s.integrator["stop_fraction"]
        stop = lambda rec: rec.deltaV <= frac * dV0  # noqa: E731
    try:
        traj = swarm.run(
            state,
            phi,
            dt,
            s.integrator["T"],
            record_every=s.integrator["record_every"],
            masses=s.masses,
            threads=threads,
            snapshot=snapshot if s.output["snapshots"] else None,
            stop=stop,
        )
    except swarm.IntegrationError as exc:
        summary["blowup"] = {"t": exc.t, "message": str(exc)}
        write_json(out / s.output["summary"], summary)
        return EXIT_BLOWUP, summary
    names, rows = swarm_rows(traj, d)
    write_csv(out / s.output["csv"], "swarm", names, rows)
    cols = {c: np.array([float(r[k]) for r in rows]) for k, c in enumerate(names)}
    summary.update(swarm_summary(cols))
    total_mass = float(np.sum(traj.masses))
    mons = swarm_monitors(
        cols, s.tolerances, dealign=bool(phi.dealigning_diagonal()), total_mass=total_mass,
        v_scale=max(float(np.max(np.abs(v0))), 1e-300),
    )
    if forecast is not None:
        mons["diameter-forecast"] = monitor(summary["maxD"] <= forecast.D_inf, summary["maxD"], forecast.D_inf)
        if stop is not None:
            reached = traj.records[-1].deltaV <= s.integrator["stop_fraction"] * dV0
            t_hit = traj.records[-1].t
            horizon = forecast.horizon(s.integrator["stop_fraction"])
            mons["uniform-fluctuation-forecast-horizon"] = monitor(
                reached and t_hit <= horizon, t_hit if reached else None, horizon
            )
    if not phi.dealigning_diagonal() and all(k.family in ("constant", "zero") for _, k in phi.pairs()):
        rate = 2.0 * spectral.zeta(np.ones(phi.n)) * spectral.algebraic_connectivity(phi.array_at(0.0), np.ones(phi.n))
        slope = summary["slopes"]["logDeltaE"]
        if rate > 0 and slope is not None:
            limit = -rate + 1e-3 * rate
            mons["exponential-decay-rate"] = monitor(slope <= limit, slope, limit)
    times = cols["t"]
    composed = kernels.connectivity_along_diameter(phi, np.ones(phi.n), times, cols["D"])
    fit_t = kernels.estimate_tail_exponent(composed, margin=s.profile["margin"], eps_fit=s.profile["eps_fit"])
    summary["composedTailFit"] = _fit_dict(fit_t)
    summary["monitors"] = mons
    summary["verdicts"] = {"flocking": bool(cols["deltaV"][-1] <= 1e-6 * max(dV0, 1e-300))}
    write_json(out / s.output["summary"], summary)
    failed = [k for k, m in mons.items() if not m["passed"]]
    return (EXIT_MONITOR if failed else EXIT_OK), summary


# ---------------------------------------------------------------- aggregate


def run_aggregate(s: Scenario, state: aggregate.AggregateState, out: Path, threads: int) -> tuple[int, dict]:
    phi = s.phi
    dt = s.integrator["dt"] or swarm.default_dt(phi)
    d = state.d
    x0 = state.flat()
    try:
        traj = aggregate.run_aggregation(
            state, phi, dt, s.integrator["T"], record_every=s.integrator["record_every"], masses=s.masses, threads=threads
        )
    except swarm.IntegrationError as exc:
        summary = {"mode": "aggregate", "blowup": {"t": exc.t, "message": str(exc)}}
        write_json(out / s.output["summary"], summary)
        return EXIT_BLOWUP, summary
    names = ["t", "D", "deltaD"] + [f"centerOfMass{k + 1}" for k in range(d)] + ["boundRatioD", "resolved"]
    rows = [[r.t, r.D, r.deltaD, *r.centerOfMass, r.boundRatioD, r.resolved] for r in traj.records]
    write_csv(out / s.output["csv"], "aggregate", names, rows)
    cols = {c: np.array([float(r[k]) for r in rows]) for k, c in enumerate(names)}
    rep = aggregate.consensus_check(traj)
    summary = {"mode": "aggregate", "dt": dt}
    summary.update(aggregate_summary(cols))
    summary["consensus"] = {
        "converged": rep.converged,
        "limitPoint": list(rep.limitPoint),
        "rateMeasured": rep.rateMeasured,
        "rateBound": rep.rateBound,
        "secondMoment": rep.secondMoment,
    }
    summary["monitors"] = aggregate_monitors(cols, s.tolerances, x_scale=max(float(np.max(np.abs(x0))), 1e-300))
    write_json(out / s.output["summary"], summary)
    failed = [k for k, m in summary["monitors"].items() if not m["passed"]]
    return (EXIT_MONITOR if failed else EXIT_OK), summary


def aggregate_summary(cols: dict[str, np.ndarray]) -> dict:
    t = cols["t"]
    dd = cols["deltaD"]
    res = (cols["resolved"] > 0.5) & (dd > 0)
    return {
        "samples": int(t.size),
        "final": {"t": float(t[-1]), "D": float(cols["D"][-1]), "deltaD": float(dd[-1])},
        "initial": {"D": float(cols["D"][0]), "deltaD": float(dd[0])},
        "slopes": {"logDeltaD": log_slope(t[res], dd[res])},
        "boundRatioMax": {"D": float(np.max(cols["boundRatioD"][res])) if np.any(res) else 0.0},
    }


def aggregate_monitors(cols: dict[str, np.ndarray], tol: dict, *, x_scale: float) -> dict:
    mons = {}
    D = cols["D"]
    inc = float(np.max(np.diff(D))) if D.size > 1 else 0.0
    mons["diameter-non-increasing"] = monitor(inc <= tol["monotone"], inc, tol["monotone"])
    keep = (cols["resolved"] > 0.5) & (cols["deltaD"] > 0)
    ratio = float(np.max(cols["boundRatioD"][keep])) if np.any(keep) else 0.0
    mons["weighted-diameter-envelope"] = monitor(ratio <= 1 + tol["envelope"], ratio, 1 + tol["envelope"])
    com = np.column_stack([v for k, v in cols.items() if k.startswith("centerOfMass")])
    span = float(cols["t"][-1] - cols["t"][0])
    drift = float(np.max(np.abs(com - com[0]))) / max(span, 1.0)
    limit = tol["center_of_mass"] * x_scale
    mons["center-of-mass-invariance"] = monitor(drift <= limit, drift, limit)
    return mons


# ---------------------------------------------------------------- hydro1d


def hydro_columns(n_species: int) -> list[str]:
    cols = ["t"]
    for name in ("minE", "maxE", "minQ", "maxQ", "maxDxU", "minDxU", "mass", "rhoMin"):
        cols += [f"{name}{a + 1}" for a in range(n_species)]
    return cols + ["uMax", "uMin", "momentum"]


def hydro_row(r: hydro1d.HydroRecord) -> list:
    row = [r.t]
    for name in ("minE", "maxE", "minQ", "maxQ", "maxDxU", "minDxU", "mass", "rhoMin"):
        row += list(getattr(r, name))
    return row + [r.uMax, r.uMin, r.momentum]


def run_hydro_scenario(s: Scenario, state: hydro1d.HydroState1D, out: Path, threads: int) -> tuple[int, dict]:
    report = hydro1d.threshold_check_1d(state, s.phi)
    snap_dir = out / "snapshots"
    counter = [0]

    def snapshot(st: hydro1d.HydroState1D):
        snap_dir.mkdir(parents=True, exist_ok=True)
        with open(snap_dir / f"fields_{counter[0]:06d}.txt", "w") as fh:
            fh.write(f"# t={st.t!r} x rho[{st.n_species}] u[{st.n_species}]\n")
            for i, x in enumerate(st.x):
                vals = [x] + [r[i] for r in st.rho] + [v[i] for v in st.u]
                fh.write(" ".join(repr(float(v)) for v in vals) + "\n")
        counter[0] += 1

    try:
        traj = hydro1d.run_hydro(
            state,
            s.phi,
            s.integrator["T"],
            dt=s.integrator["dt"],
            cfl=s.integrator["cfl"],
            record_every=s.integrator["record_every"],
            snapshot=snapshot if s.output["snapshots"] else None,
            flux=s.integrator["flux"],
        )
    except ValueError as exc:  # CFL violation with a fixed dt
        summary = {"mode": "hydro1d", "error": str(exc)}
        write_json(out / s.output["summary"], summary)
        return EXIT_CONFIG, summary
    names = hydro_columns(state.n_species)
    rows = [hydro_row(r) for r in traj.records]
    write_csv(out / s.output["csv"], "hydro1d", names, rows)
    mon = hydro1d.invariant_monitors(traj, slack=s.tolerances["hydro_slack"])
    summary: dict[str, Any] = {
        "mode": "hydro1d",
        "threshold": {
            "verdict": report.verdict,
            "minE": list(report.minE),
            "worstCell": list(report.worstCell),
            "epsGrid": list(report.epsGrid),
        },
        "steps": traj.steps,
        "dtMax": traj.dt_max,
        "final": {"t": traj.final.t},
        "qDrift": list(mon.qDrift),
        "minE": mon.minE,
    }
    T_span = max(traj.final.t, 1e-300)
    mom_scale = sum(float(np.max(np.abs(v))) * m for v, m in zip(state.u, state.masses())) or 1.0
    mons = {
        "mass-conservation": monitor(mon.massError <= s.tolerances["mass"], mon.massError, s.tolerances["mass"]),
        "momentum-drift": monitor(
            mon.momentumDrift <= traj.dx * T_span * mom_scale, mon.momentumDrift, traj.dx * T_span * mom_scale
        ),
        "vacuum-free": monitor(mon.noVacuum, None, None),
        "velocity-max-principle": monitor(mon.maxPrinciple, None, mon.eSlack),
    }
    if traj.subcritical0:
        mons["e-invariance"] = monitor(mon.eInvariance, mon.minE, -mon.eSlack)
        mons["gradient-lower-bound"] = monitor(mon.gradientBound, None, -traj.source_bound)
    summary["monitors"] = mons
    if traj.blowup is not None:
        b = traj.blowup
        summary["blowup"] = {"t": b.t, "cell": b.cell, "species": b.species + 1, "reason": b.reason}
        write_json(out / s.output["summary"], summary)
        return EXIT_BLOWUP, summary
    write_json(out / s.output["summary"], summary)
    failed = [k for k, m in mons.items() if not m["passed"]]
    return (EXIT_MONITOR if failed else EXIT_OK), summary


# ---------------------------------------------------------------- threshold2d / spectral


def run_threshold(s: Scenario, fields: threshold2d.Field2D, out: Path) -> tuple[int, dict]:
    tail = None
    d_inf = s.extra["d_inf"]
    summary: dict[str, Any] = {"mode": "threshold2d"}
    if d_inf is None:
        D0 = threshold2d.support_diameter(fields)
        r_max = s.profile["r_max"] or max(10.0 * (D0 + 1.0), 10.0)
        _, tail = tail_fit_for(s.phi, fields.masses(), r_max, s)
        summary["tailFit"] = _fit_dict(tail)
    rep = threshold2d.classify(fields, s.phi, d_inf=d_inf, tail=tail)
    summary["report"] = rep.to_dict()
    summary["verdicts"] = {"threshold": rep.verdict}
    summary["monitors"] = {}
    write_json(out / s.output["summary"], summary)
    return EXIT_OK, summary


def run_spectral(s: Scenario, out: Path) -> tuple[int, dict]:
    w = s.masses
    r_max = s.profile["r_max"] or 10.0
    r_grid = np.linspace(0.0, r_max, s.profile["points"])
    rows, mons_ok, kernel_worst, sandwich_ok = [], True, 0.0, True
    for r in r_grid:
        a = s.phi.offdiagonal_part().array_at(float(r))
        lap = spectral.build_weighted_laplacian(a, w)
        lam = lap.lambda2 if lap.is_connected() else 0.0
        kernel_worst = max(kernel_worst, lap.kernel_residual() / max(lap.norm, 1e-300))
        if w.size >= 2:
            sb = spectral.sandwich_bound(a, w)
            ratio = sb.ratio if sb.ratio is not None else math.nan
            if sb.ratio is not None and not (sb.lower * (1 - 1e-9) <= sb.ratio <= sb.upper * (1 + 1e-9)):
                sandwich_ok = False
            rows.append([r, lam, spectral.dealignment_margin(a, w), sb.lower, ratio, sb.upper])
        else:
            rows.append([r, lam, 0.0, math.nan, math.nan, math.nan])
    names = ["r", "lambda2", "dealignmentMargin", "sandwichLower", "sandwichRatio", "sandwichUpper"]
    write_csv(out / s.output["csv"], "spectral-report", names, rows)
    lam = np.array([row[1] for row in rows])
    inc = float(np.max(np.diff(lam))) if lam.size > 1 else 0.0
    prof = kernels.Profile(r_grid, lam)
    window = tuple(s.profile["window"]) if s.profile["window"] is not None else None
    fit = kernels.estimate_tail_exponent(prof, margin=s.profile["margin"], eps_fit=s.profile["eps_fit"], window=window)
    summary = {
        "mode": "spectral-report",
        "weights": w,
        "zeta": spectral.zeta(w),
        "connectedAtZero": bool(lam[0] > 0),
        "tailFit": _fit_dict(fit),
        "monitors": {
            "laplacian-kernel": monitor(kernel_worst <= 1e-10, kernel_worst, 1e-10),
            "sandwich-bound": monitor(sandwich_ok, None, None),
            "profile-non-increasing": monitor(inc <= 1e-9 * max(float(np.max(lam)), 1e-300), inc, 0.0),
        },
    }
    write_json(out / s.output["summary"], summary)
    failed = [k for k, m in summary["monitors"].items() if not m["passed"]]
    return (EXIT_MONITOR if failed else EXIT_OK), summary


def run_scenario(s: Scenario, out_dir=None, threads: int | None = None) -> tuple[int, dict]:
    """Run a validated scenario, writing the CSV and summary; returns (exit code, summary)."""
    state = validate_scenario(s)
    out = s.out_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = threads or s.threads
    if s.mode == "swarm":
        return run_swarm(s, state, out, threads)
    if s.mode == "aggregate":
        return run_aggregate(s, state, out, threads)
    if s.mode == "hydro1d":
        return run_hydro_scenario(s, state, out, threads)
    if s.mode == "threshold2d":
        return run_threshold(s, state, out)
    return run_spectral(s, out)


def profile_scenario(s: Scenario, out_dir=None) -> dict:
    """Static connectivity profile and tail fit of the scenario's kernel array."""
    state = validate_scenario(s)
    if s.mode == "threshold2d":
        w = state.masses()
        D0 = threshold2d.support_diameter(state)
    elif s.mode in ("swarm", "aggregate"):
        w = np.ones(s.phi.n)
        x = state.flat()[0] if s.mode == "swarm" else state.flat()
        D0 = swarm.max_pair_distance(x)[0]
    elif s.mode == "hydro1d":
        w = state.masses()
        D0 = state.L / 2
    else:
        w = s.masses
        D0 = 0.0
    r_max = s.profile["r_max"] or max(10.0 * (D0 + 1.0), 10.0)
    prof, fit = tail_fit_for(s.phi, w, r_max, s)
    out = s.out_dir(out_dir)
    write_csv(out / "profile.csv", "profile", ["r", "lambda2"], [[r, l] for r, l in zip(prof.r, prof.lambda2)])
    result = {"weights": w, "tailFit": _fit_dict(fit), "rMax": r_max}
    write_json(out / "profile.json", result)
    return result


def report_csv(path) -> dict:
    """Recompute the summary and the column-level monitors from a diagnostics CSV."""
    kind, cols = read_csv(path)
    if kind == "swarm":
        summary = swarm_summary(cols)
        total = None
        # the CSV does not store masses; the consistency monitor needs only
        # the ratio deltaE / deltaV^2, so infer the total mass bound from it
        v = cols["deltaV"]
        ok = v > 0
        total = float(np.sqrt(np.max(cols["deltaE"][ok] / v[ok] ** 2))) if np.any(ok) else 1.0
        mom = np.column_stack([c for k, c in cols.items() if k.startswith("momentum")])
        summary["monitors"] = swarm_monitors(
            cols, DEFAULT_TOLERANCES, total_mass=total, v_scale=max(float(cols["deltaV"][0]), 1e-300)
        )
        summary["monitors"].pop("energy-uniform-consistency")
        summary["momentumDrift"] = float(np.max(np.abs(mom - mom[0]))) if mom.size else 0.0
    elif kind == "aggregate":
        summary = aggregate_summary(cols)
        scale = max(float(np.max(np.abs(np.column_stack([c for k, c in cols.items() if k.startswith("centerOfMass")])))), 1.0)
        summary["monitors"] = aggregate_monitors(cols, DEFAULT_TOLERANCES, x_scale=scale)
    elif kind == "hydro1d":
        mass = np.column_stack([c for k, c in cols.items() if k.startswith("mass")])
        mom = cols["momentum"]
        summary = {
            "samples": int(cols["t"].size),
            "final": {"t": float(cols["t"][-1])},
            "massError": float(np.max(np.abs(mass - mass[0]) / mass[0])),
            "momentumDrift": float(np.max(np.abs(mom - mom[0]))),
            "minE": float(np.min(np.column_stack([c for k, c in cols.items() if k.startswith("minE")]))),
        }
    else:
        summary = {"samples": int(next(iter(cols.values())).size)}
    summary["mode"] = kind
    return summary


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiflock", description="Multi-species collective dynamics toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a scenario and write diagnostics")
    p.add_argument("scenario", type=Path)
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides the scenario)")
    p.add_argument("--threads", type=int, default=None, help="worker threads for force evaluation")
    p = sub.add_parser("check", help="validate a scenario without running it")
    p.add_argument("scenario", type=Path)
    p = sub.add_parser("profile", help="connectivity profile and fat-tail fit only")
    p.add_argument("scenario", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p = sub.add_parser("report", help="recompute a summary from a diagnostics CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("--output", type=Path, default=None, help="write JSON here instead of stdout")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MULTIFLOCK_LOG_LEVEL", "WARNING").upper(), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            summary = report_csv(args.csv)
            text = json.dumps(_jsonable(summary), indent=2, sort_keys=True)
            if args.output:
                args.output.write_text(text + "\n")
            else:
                print(text)
            return EXIT_OK
        scenario = parse_scenario(args.scenario)
        if args.command == "check":
            validate_scenario(scenario)
            print(f"{args.scenario}: ok ({scenario.mode})")
            return EXIT_OK
        if args.command == "profile":
            result = profile_scenario(scenario, args.out)
            print(json.dumps(_jsonable(result), indent=2, sort_keys=True))
            return EXIT_OK
        if args.threads is not None and args.threads < 1:
            raise ConfigError(["--threads: must be >= 1"])
        code, summary = run_scenario(scenario, args.out, args.threads)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if code == EXIT_BLOWUP:
        b = summary.get("blowup", {})
        print(f"blow-up at t={b.get('t')}: {b.get('reason') or b.get('message')}", file=sys.stderr)
    elif code == EXIT_MONITOR:
        failed = [k for k, m in summary["monitors"].items() if not m["passed"]]
        print(f"monitor violation: {', '.join(failed)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
