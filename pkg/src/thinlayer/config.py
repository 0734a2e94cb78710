"""Run configuration: versioned JSON schema, validation and object builders."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import jsonschema

from .errors import ConfigError
from .geometry import FAMILY_KINDS, GeometryFamily
from .magnetics import (
    AmbientField,
    ScalarPotential,
    constant_field,
    polynomial_field,
    polynomial_potential,
    sampled_field,
    sampled_potential,
    zero_field,
    zero_potential,
)

_MONOMIAL = {
    "type": "array",
    "minItems": 2,
    "maxItems": 2,
    "prefixItems": [
        {"type": "number"},
        {"type": "array", "items": {"type": "integer", "minimum": 0}},
    ],
}

_ELECTRIC = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["zero", "polynomial", "sampled"]},
        "terms": {"type": "array", "items": _MONOMIAL},
        "csv": {"type": "string"},
    },
}

_OUTPUTS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "csv": {"type": "string"},
        "json": {"type": "string"},
        "eigenvectors": {"type": "string"},
        "matrix": {"type": "string"},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "geometry"],
    "properties": {
        "schema": {"const": 1},
        "geometry": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": list(FAMILY_KINDS)},
                "params": {
                    "type": "object",
                    "additionalProperties": {"type": "number"},
                },
                "grid": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 2},
                    "minItems": 1,
                    "maxItems": 2,
                },
                "closure": {
                    "type": "array",
                    "items": {"enum": ["periodic", "dirichlet"]},
                    "minItems": 1,
                    "maxItems": 2,
                },
                "csv": {"type": "string"},
                "embedding_epsilon": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "field": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["zero", "constant", "linear-gauge", "sampled"]},
                "b": {
                    "anyOf": [
                        {"type": "number"},
                        {
                            "type": "array",
                            "items": {"type": "number"},
                            "minItems": 3,
                            "maxItems": 3,
                        },
                    ]
                },
                "components": {
                    "type": "array",
                    "items": {"type": "array", "items": _MONOMIAL},
                    "minItems": 2,
                    "maxItems": 3,
                },
                "csv": {"type": "string"},
                "electric": _ELECTRIC,
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_eigenpairs": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "dense_threshold": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "scheme_order": {"enum": [2, 4]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["epsilons"],
            "properties": {
                "epsilons": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 1,
                },
                "m_u": {"type": "integer", "minimum": 3},
                "k": {"type": "number"},
                "slope_window": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "slope_min": {"type": "number"},
                "grid_doubling": {"type": "boolean"},
                "resolvent_iters": {"type": "integer", "minimum": 5},
                "outputs": _OUTPUTS,
            },
        },
        "spectrum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "operator": {
                    "enum": [
                        "h-eff",
                        "full-H",
                        "full-H-renormalized",
                        "H0+",
                        "H0-",
                    ]
                },
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "m_u": {"type": "integer", "minimum": 3},
                "dump_operator": {"type": "boolean"},
                "dump_eigenvectors": {"type": "boolean"},
                "outputs": _OUTPUTS,
            },
        },
        "geometry_outputs": _OUTPUTS,
    },
}


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    path: str

    @property
    def geometry(self) -> dict:
        return self.raw["geometry"]

    @property
    def field(self) -> dict:
        return self.raw.get("field", {"kind": "zero"})

    @property
    def solver(self) -> dict:
        return self.raw.get("solver", {})

    @property
    def sweep(self) -> dict:
        return self.raw.get("sweep", {})

    @property
    def spectrum(self) -> dict:
        return self.raw.get("spectrum", {})

    def solver_opt(self, name, default):
        return self.solver.get(name, default)


def load_config(path) -> RunConfig:
    """Parse and schema-validate a run configuration file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        )
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        spots = "; ".join(
            f"/{'/'.join(str(x) for x in e.absolute_path)}: {e.message}" for e in errors[:4]
        )
        raise ConfigError(f"{p}: config violates schema: {spots}")
    return RunConfig(raw=raw, path=str(p))


# ---------------------------------------------------------------------------
# CSV loaders for user-sampled inputs
# ---------------------------------------------------------------------------


def _load_numeric_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ConfigError(f"cannot read CSV {path}: {exc}")
    except ValueError:
        try:  # tolerate one header row
            return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot parse CSV {path}: {exc}")


def load_sampled_geometry(path, n_index_cols=None) -> np.ndarray:
    """Positions from CSV (chart-index columns then coordinates, row-major)."""
    data = _load_numeric_csv(path)
    ncols = data.shape[1]
    if n_index_cols is None:
        n_index_cols = 1 if ncols == 3 else 2
    d = ncols - n_index_cols
    if d not in (2, 3) or d != n_index_cols + 1:
        raise ConfigError(
            f"sampled geometry CSV must have index columns + d coordinates "
            f"(2d: 1+2, 3d: 2+3 columns), got {ncols} columns"
        )
    idx = data[:, :n_index_cols].astype(int)
    shape = tuple(int(idx[:, k].max()) + 1 for k in range(n_index_cols))
    expected = int(np.prod(shape))
    if data.shape[0] != expected:
        raise ConfigError(
            f"sampled geometry CSV has {data.shape[0]} rows, expected {expected}"
        )
    lin = np.ravel_multi_index(tuple(idx[:, k] for k in range(n_index_cols)), shape)
    if not np.array_equal(np.sort(lin), np.arange(expected)):
        raise ConfigError("sampled geometry CSV does not enumerate the grid")
    pos = np.empty((expected, d))
    pos[lin] = data[:, n_index_cols:]
    return pos.reshape(shape + (d,))


def load_sampled_field_csv(path, dim) -> tuple[list, np.ndarray]:
    """Sampled potential from CSV rows (ambient point, potential components)."""
    data = _load_numeric_csv(path)
    if data.shape[1] != 2 * dim:
        raise ConfigError(
            f"sampled field CSV needs {2 * dim} columns (point, components), "
            f"got {data.shape[1]}"
        )
    axes = []
    idx_cols = []
    for k in range(dim):
        vals = np.unique(data[:, k])
        axes.append(vals)
        idx_cols.append(np.searchsorted(vals, data[:, k]))
    shape = tuple(a.size for a in axes)
    if data.shape[0] != int(np.prod(shape)):
        raise ConfigError("sampled field CSV is not a full rectangular grid")
    lin = np.ravel_multi_index(tuple(idx_cols), shape)
    values = np.empty((int(np.prod(shape)), dim))
    values[lin] = data[:, dim:]
    return axes, values.reshape(shape + (dim,))


# ---------------------------------------------------------------------------
# object builders
# ---------------------------------------------------------------------------


def build_family(cfg: RunConfig) -> tuple[GeometryFamily, tuple]:
    g = cfg.geometry
    kind = g["family"]
    params = dict(g.get("params", {}))
    grid = tuple(g.get("grid", ()))
    if kind == "user-sampled":
        if "csv" not in g:
            raise ConfigError("user-sampled geometry needs a csv entry")
        base = Path(cfg.path).parent
        samples = load_sampled_geometry(base / g["csv"])
        closures = tuple(g["closure"]) if "closure" in g else None
        fam = GeometryFamily(kind, params, samples=samples, closures=closures)
        return fam, samples.shape[:-1]
    if not grid:
        raise ConfigError("built-in geometry families need a grid entry")
    return GeometryFamily(kind, params), grid


def ambient_dim_of(kind: str) -> int:
    return 2 if kind in ("segment", "circle", "ellipse", "catenary-curve") else 3


def build_field(cfg: RunConfig, dim: int) -> AmbientField:
    f = cfg.field
    kind = f.get("kind", "zero")
    if kind == "zero":
        return zero_field(dim)
    if kind == "constant":
        if "b" not in f:
            raise ConfigError("constant field needs the b entry")
        return constant_field(dim, f["b"])
    if kind == "linear-gauge":
        if "components" not in f:
            raise ConfigError("linear-gauge field needs components")
        return polynomial_field(dim, f["components"])
    if kind == "sampled":
        if "csv" not in f:
            raise ConfigError("sampled field needs a csv entry")
        axes, values = load_sampled_field_csv(Path(cfg.path).parent / f["csv"], dim)
        return sampled_field(dim, axes, values)
    raise ConfigError(f"unknown field kind {kind!r}")


def build_electric(cfg: RunConfig, dim: int) -> ScalarPotential | None:
    e = cfg.field.get("electric")
    if e is None:
        return None
    kind = e["kind"]
    if kind == "zero":
        return zero_potential()
    if kind == "polynomial":
        return polynomial_potential(e.get("terms", []))
    if kind == "sampled":
        if "csv" not in e:
            raise ConfigError("sampled electric potential needs a csv entry")
        data = _load_numeric_csv(Path(cfg.path).parent / e["csv"])
        if data.shape[1] != dim + 1:
            raise ConfigError(
                f"sampled electric CSV needs {dim + 1} columns, got {data.shape[1]}"
            )
        axes = []
        idx_cols = []
        for k in range(dim):
            vals = np.unique(data[:, k])
            axes.append(vals)
            idx_cols.append(np.searchsorted(vals, data[:, k]))
        shape = tuple(a.size for a in axes)
        lin = np.ravel_multi_index(tuple(idx_cols), shape)
        values = np.empty(int(np.prod(shape)))
        values[lin] = data[:, dim]
        return sampled_potential(axes, values.reshape(shape))
    raise ConfigError(f"unknown electric potential kind {kind!r}")
