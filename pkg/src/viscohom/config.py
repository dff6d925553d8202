"""Structured plain-text configuration (TOML).

A run is described by one file with the tables ``geometry``, ``theta``
(optional), ``coefficients``, ``density``, ``loads``, ``time``, ``study``,
``mesh``, ``solver`` and ``output``. :func:`parse_config` validates
everything at load time and names the offending field in every
:class:`ConfigError`; :func:`serialize_config` writes the normalized form, so
``serialize(parse(text))`` is a fixed point.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import tomli_w

from .ap_core import PoreDistribution, TrigPolynomial
from .coefficients import CoefficientField
from .errors import ConfigError, GeometryViolation, ViscohomError
from .fem import check_coercive
from .geometry import CellGeometry, build_cell, mesh_cell
from .homogenizer import REDUCTIONS
from .loads import LoadField
from .memory import MemoryKernel

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:  # pragma: no cover
    import tomli as _toml

TOP_LEVEL = ("geometry", "theta", "coefficients", "density", "loads", "time", "study", "mesh",
             "solver", "output")


def toml_loads(text: str) -> dict:
    return _toml.loads(text)


@dataclass(frozen=True)
class MeshSpec:
    cell: int = 32  # cells per unit length of the reference cell
    macro: int = 64  # cells per axis of the macro mesh
    fine: int = 8  # cells per eps-cell in the fine mesh
    density: int = 512  # midpoint rule resolution for rho0 and load weights


@dataclass(frozen=True)
class SolverSpec:
    tol: float = 1e-10
    saddle_tol: float = 1e-8
    alpha: float = 0.1
    reduction: str = "integrated"
    full_cell: bool = False


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    seed: int = 0
    threads: int = 1
    snapshots: tuple = ()


@dataclass(frozen=True)
class SimConfig:
    geometry: CellGeometry
    A0: CoefficientField
    B0: CoefficientField
    A1: Optional[MemoryKernel] = None
    B1: Optional[MemoryKernel] = None
    rho1: CoefficientField = field(default_factory=lambda: CoefficientField.scalar(1.0))
    rho2: CoefficientField = field(default_factory=lambda: CoefficientField.scalar(1.0))
    f: LoadField = None
    g: LoadField = None
    T: float = 1.0
    dt: float = 1.0 / 64
    eps: tuple = ()
    theta: Optional[PoreDistribution] = None
    A0_matrix: Optional[CoefficientField] = None  # Y2 coefficient in full-cell mode
    mesh: MeshSpec = MeshSpec()
    solver: SolverSpec = SolverSpec()
    output: OutputSpec = OutputSpec()

    @property
    def dimension(self) -> int:
        return self.geometry.dimension

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    def with_output(self, **kw) -> "SimConfig":
        return replace(self, output=replace(self.output, **kw))


def _require_table(data, key, where=""):
    val = data.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(f"{where}{key} must be a table", f"{where}{key}")
    return val


def _check_keys(table: dict, allowed, where: str):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {where}{unknown[0]}", f"{where}{unknown[0]}")


def _number(table, key, where, default=None, kind=float, positive=False):
    if key not in table:
        if default is None:
            raise ConfigError(f"missing {where}{key}", f"{where}{key}")
        return default
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}{key} must be a number, got {val!r}", f"{where}{key}")
    if kind is int and float(val) != int(val):
        raise ConfigError(f"{where}{key} must be an integer", f"{where}{key}")
    val = kind(val)
    if positive and not val > 0:
        raise ConfigError(f"{where}{key} must be positive", f"{where}{key}")
    return val


def _trig(data, where: str, dimension: int) -> TrigPolynomial:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a table", where)
    _check_keys(data, ("dimension", "terms"), where + ".")
    dim = data.get("dimension", dimension)
    terms = data.get("terms", [])
    if not isinstance(terms, list):
        raise ConfigError(f"{where}.terms must be a list", f"{where}.terms")
    for k, term in enumerate(terms):
        name = f"{where}.terms[{k}]"
        if not isinstance(term, dict) or set(term) != {"frequency", "amplitude"}:
            raise ConfigError(f"{name} needs exactly 'frequency' and 'amplitude'", name)
        freq = term["frequency"]
        freq = freq if isinstance(freq, list) else [freq]
        if len(freq) != dim or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
                for v in freq):
            raise ConfigError(f"{name}.frequency must be {dim} finite numbers", f"{name}.frequency")
        amp = term["amplitude"]
        ok = (isinstance(amp, (int, float)) and not isinstance(amp, bool)) or (
            isinstance(amp, list) and len(amp) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in amp))
        if not ok:
            raise ConfigError(f"{name}.amplitude must be a number or [re, im]", f"{name}.amplitude")
    try:
        return TrigPolynomial.from_dict({"dimension": dim, "terms": terms})
    except (ValueError, ViscohomError) as exc:
        raise ConfigError(f"{where}: {exc}", where) from exc


def _coefficient(data, where: str, n: int, scalar: bool = False) -> CoefficientField:
    if isinstance(data, (int, float)) and not isinstance(data, bool):
        data = {"base": data}
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a number or a table", where)
    _check_keys(data, ("base", "modulation"), where + ".")
    if "base" not in data:
        raise ConfigError(f"missing {where}.base", f"{where}.base")
    try:
        base = np.asarray(data["base"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.base is not numeric", f"{where}.base") from exc
    mod = _trig(data["modulation"], where + ".modulation", n) if "modulation" in data else None
    if scalar:
        if base.ndim != 0:
            raise ConfigError(f"{where}.base must be a scalar", f"{where}.base")
        return CoefficientField.scalar(float(base), mod)
    if base.shape not in ((), (n, n), (n * n, n * n)):
        raise ConfigError(f"{where}.base has shape {base.shape}; expected scalar, {n}x{n} "
                          f"or {n * n}x{n * n}", f"{where}.base")
    return CoefficientField.tensor(base, n, mod)


def _kernel(data, where: str, n: int):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a table", where)
    _check_keys(data, ("spatial", "temporal", "fast_samples"), where + ".")
    if "spatial" not in data:
        raise ConfigError(f"missing {where}.spatial", f"{where}.spatial")
    spatial = _coefficient(data["spatial"], where + ".spatial", n)
    temporal = _trig(data["temporal"], where + ".temporal", 1) if "temporal" in data else None
    if temporal is not None and temporal.dimension != 1:
        raise ConfigError(f"{where}.temporal must be one-dimensional", f"{where}.temporal")
    if temporal is not None and temporal.frequencies.size and not np.allclose(
            np.mod(temporal.frequencies / (2 * np.pi) + 0.5, 1.0) - 0.5, 0.0, atol=1e-12):
        raise ConfigError(f"{where}.temporal frequencies must be multiples of 2 pi",
                          f"{where}.temporal")
    samples = _number(data, "fast_samples", where + ".", 16, int)
    if samples < 2:
        raise ConfigError(f"{where}.fast_samples must be >= 2", f"{where}.fast_samples")
    return MemoryKernel(spatial, temporal, samples)


def _load(data, where: str, n: int) -> LoadField:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a table", where)
    _check_keys(data, ("shape", "amplitude", "profile", "period"), where + ".")
    amp = data.get("amplitude", [0.0])
    amp = amp if isinstance(amp, list) else [amp]
    if not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in amp):
        raise ConfigError(f"{where}.amplitude must be numeric", f"{where}.amplitude")
    if len(amp) not in (1, n):
        raise ConfigError(f"{where}.amplitude needs 1 or {n} entries", f"{where}.amplitude")
    try:
        load = LoadField(data.get("shape", "constant"), tuple(amp), data.get("profile", "constant"),
                         _number(data, "period", where + ".", 1.0, positive=True))
    except ConfigError as exc:
        raise ConfigError(str(exc), f"{where}.{exc.field}") from exc
    if load.shape == "curl_bump" and n != 2:
        raise ConfigError("curl_bump loads are two-dimensional", f"{where}.shape")
    return load


def _check_coefficients(cfg: SimConfig):
    """Coercivity and symmetry of the leading coefficients, positivity of densities."""
    g = cfg.geometry
    mesh = mesh_cell(g, 16)
    pairs = [("coefficients.A0", cfg.A0), ("coefficients.B0", cfg.B0)]
    if cfg.A0_matrix is not None:
        pairs.append(("coefficients.A0_matrix", cfg.A0_matrix))
    for name, coeff in pairs:
        try:
            check_coercive(coeff.sample_cells(mesh), name)
        except ValueError as exc:
            raise ConfigError(str(exc), name) from exc
    y = mesh.centroids()
    for name, rho in (("density.rho1", cfg.rho1), ("density.rho2", cfg.rho2)):
        vals = np.asarray(rho.factor(y), dtype=float) * float(rho.base)
        if np.any(vals <= 0):
            raise ConfigError(f"{name} must be positive", name)


def _check_eps(eps, theta: Optional[PoreDistribution], n: int):
    if not eps:
        raise ConfigError("study.eps is empty", "study.eps")
    try:
        per = (1,) * n if theta is None else tuple(theta.period())
    except ViscohomError as exc:
        raise ConfigError(str(exc), "theta.rows") from exc
    for a, b in zip(eps, eps[1:]):
        if not b < a:
            raise ConfigError("study.eps must be strictly decreasing", "study.eps")
    for e in eps:
        if not e > 0:
            raise ConfigError("study.eps entries must be positive", "study.eps")
        m = 1.0 / e
        mi = int(round(m))
        if abs(m - mi) > 1e-9 or any(mi % p for p in per):
            raise ConfigError(f"eps = {e:g} does not tile the unit box with whole pore periods",
                              "study.eps")


def build_config(data: dict) -> SimConfig:
    """Validate a parsed TOML document and build the run configuration."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table")
    _check_keys(data, TOP_LEVEL, "")
    geo = _require_table(data, "geometry")
    if not geo:
        raise ConfigError("missing [geometry]", "geometry")
    _check_keys(geo, ("kind", "dimension", "center", "radius", "corner", "sides", "axis",
                      "thickness"), "geometry.")
    solver_t = _require_table(data, "solver")
    _check_keys(solver_t, ("tol", "saddle_tol", "alpha", "reduction", "full_cell"), "solver.")
    full_cell = solver_t.get("full_cell", False)
    if not isinstance(full_cell, bool):
        raise ConfigError("solver.full_cell must be true or false", "solver.full_cell")
    try:
        geometry = build_cell(geo, for_fluid=not full_cell)
    except (GeometryViolation, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"geometry: {exc}", "geometry") from exc
    n = geometry.dimension

    theta = None
    if "theta" in data:
        th = _require_table(data, "theta")
        _check_keys(th, ("rows", "period"), "theta.")
        try:
            theta = PoreDistribution.from_dict(th)
        except (KeyError, ValueError, ViscohomError) as exc:
            raise ConfigError(f"theta: {exc}", "theta") from exc
        if theta.dimension != n:
            raise ConfigError("theta dimension differs from the geometry", "theta.rows")

    co = _require_table(data, "coefficients")
    _check_keys(co, ("A0", "A1", "B0", "B1", "A0_matrix"), "coefficients.")
    for key in ("A0", "B0"):
        if key not in co:
            raise ConfigError(f"missing coefficients.{key}", f"coefficients.{key}")
    A0 = _coefficient(co["A0"], "coefficients.A0", n)
    B0 = _coefficient(co["B0"], "coefficients.B0", n)
    A1 = _kernel(co["A1"], "coefficients.A1", n) if "A1" in co else None
    B1 = _kernel(co["B1"], "coefficients.B1", n) if "B1" in co else None
    A0m = None
    if "A0_matrix" in co:
        if not full_cell:
            raise ConfigError("coefficients.A0_matrix needs solver.full_cell = true",
                              "coefficients.A0_matrix")
        A0m = _coefficient(co["A0_matrix"], "coefficients.A0_matrix", n)

    de = _require_table(data, "density")
    _check_keys(de, ("rho1", "rho2"), "density.")
    rho1 = _coefficient(de.get("rho1", 1.0), "density.rho1", n, scalar=True)
    rho2 = _coefficient(de.get("rho2", 1.0), "density.rho2", n, scalar=True)

    lo = _require_table(data, "loads")
    _check_keys(lo, ("f", "g"), "loads.")
    f = _load(lo["f"], "loads.f", n) if "f" in lo else LoadField.zero(n)
    g = _load(lo["g"], "loads.g", n) if "g" in lo else LoadField.zero(n)

    tm = _require_table(data, "time")
    _check_keys(tm, ("T", "dt"), "time.")
    T = _number(tm, "T", "time.", 1.0, positive=True)
    dt = _number(tm, "dt", "time.", 1.0 / 64, positive=True)
    if abs(round(T / dt) * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError("time.T must be an integer multiple of time.dt", "time.dt")

    st = _require_table(data, "study")
    _check_keys(st, ("eps",), "study.")
    eps = ()
    if "eps" in st:
        raw = st["eps"]
        if not isinstance(raw, list) or not all(
                isinstance(e, (int, float)) and not isinstance(e, bool) for e in raw):
            raise ConfigError("study.eps must be a list of numbers", "study.eps")
        eps = tuple(float(e) for e in raw)
        _check_eps(eps, theta, n)

    me = _require_table(data, "mesh")
    _check_keys(me, ("cell", "macro", "fine", "density"), "mesh.")
    mesh = MeshSpec(*(_number(me, k, "mesh.", getattr(MeshSpec, k), int, positive=True)
                      for k in ("cell", "macro", "fine", "density")))
    if mesh.cell < 4 or mesh.fine < 4:
        raise ConfigError("mesh resolutions below 4 cells cannot resolve an inclusion", "mesh")

    reduction = solver_t.get("reduction", "integrated")
    if reduction not in REDUCTIONS:
        raise ConfigError(f"solver.reduction must be one of {REDUCTIONS}", "solver.reduction")
    solver = SolverSpec(
        _number(solver_t, "tol", "solver.", SolverSpec.tol, positive=True),
        _number(solver_t, "saddle_tol", "solver.", SolverSpec.saddle_tol, positive=True),
        _number(solver_t, "alpha", "solver.", SolverSpec.alpha, positive=True),
        reduction,
        full_cell,
    )

    ou = _require_table(data, "output")
    _check_keys(ou, ("dir", "seed", "threads", "snapshots"), "output.")
    snaps = ou.get("snapshots", [])
    if not isinstance(snaps, list) or not all(
            isinstance(s, (int, float)) and not isinstance(s, bool) and 0 <= s <= T for s in snaps):
        raise ConfigError("output.snapshots must be times in [0, T]", "output.snapshots")
    out_dir = ou.get("dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output.dir must be a string", "output.dir")
    output = OutputSpec(
        out_dir,
        _number(ou, "seed", "output.", 0, int),
        _number(ou, "threads", "output.", 1, int, positive=True),
        tuple(float(s) for s in snaps),
    )

    cfg = SimConfig(geometry, A0, B0, A1, B1, rho1, rho2, f, g, T, dt, eps, theta, A0m, mesh,
                    solver, output)
    _check_coefficients(cfg)
    return cfg


def parse_config(text: str) -> SimConfig:
    """Parse TOML text; syntax errors keep the parser's line and column."""
    try:
        data = toml_loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}", "syntax") from exc
    return build_config(data)


def load_config(path) -> SimConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}", "path") from exc
    return parse_config(text)


def _coefficient_dict(c: CoefficientField, scalar: bool = False) -> dict:
    d = c.to_dict()
    if scalar:
        d["base"] = float(np.asarray(c.base))
    return d


def config_to_dict(cfg: SimConfig) -> dict:
    co = {"A0": _coefficient_dict(cfg.A0), "B0": _coefficient_dict(cfg.B0)}
    if cfg.A1 is not None:
        co["A1"] = cfg.A1.to_dict()
    if cfg.B1 is not None:
        co["B1"] = cfg.B1.to_dict()
    if cfg.A0_matrix is not None:
        co["A0_matrix"] = _coefficient_dict(cfg.A0_matrix)
    data = {
        "geometry": cfg.geometry.to_dict(),
        "coefficients": co,
        "density": {"rho1": _coefficient_dict(cfg.rho1, True),
                    "rho2": _coefficient_dict(cfg.rho2, True)},
        "loads": {"f": cfg.f.to_dict(), "g": cfg.g.to_dict()},
        "time": {"T": cfg.T, "dt": cfg.dt},
        "study": {"eps": list(cfg.eps)},
        "mesh": {"cell": cfg.mesh.cell, "macro": cfg.mesh.macro, "fine": cfg.mesh.fine,
                 "density": cfg.mesh.density},
        "solver": {"tol": cfg.solver.tol, "saddle_tol": cfg.solver.saddle_tol,
                   "alpha": cfg.solver.alpha, "reduction": cfg.solver.reduction,
                   "full_cell": cfg.solver.full_cell},
        "output": {"dir": cfg.output.dir, "seed": cfg.output.seed,
                   "threads": cfg.output.threads, "snapshots": list(cfg.output.snapshots)},
    }
    if cfg.theta is not None:
        th = cfg.theta.to_dict()
        th["rows"] = np.asarray(th["rows"]).astype(int).tolist()
        data["theta"] = th
    if not cfg.eps:
        del data["study"]["eps"]
    return data


def serialize_config(cfg: SimConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def normalize(text: str) -> str:
    """Canonical text of a configuration."""
    return serialize_config(parse_config(text))
