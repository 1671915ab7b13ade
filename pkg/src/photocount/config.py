"""JSON run configuration for the command-line harness.

A config is a single JSON object. Unknown keys are rejected, and every value
is validated (including building the initial field state) before any
simulation starts, so errors name the offending field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from dataclasses import field as dc_field
from pathlib import Path
from typing import Any

from .evolution import TimeGrid
from .fockspace import (
    DensityMatrix,
    TruncationError,
    make_coherent,
    make_fock,
    make_superposition,
    make_thermal,
)
from .jump_models import FieldKind, JumpModel, ModelKind

OBSERVABLES = ("mean_photon", "p0", "trace_residual", "populations")
FIELD_KINDS = ("fock", "thermal", "coherent", "superposition")
METHODS = ("rk4", "exact", "auto")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class TablesSection:
    models: tuple[str, ...] = ("SD", "E")
    fields: tuple[str, ...] = ("fock", "thermal", "coherent")
    nbar: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    fock_m: tuple[int, ...] = (1, 2, 3, 4)
    dim: int = 128
    tolerance: float = 1e-9


@dataclass(frozen=True)
class DeriveSection:
    omega: float = 1.0
    dt: float = 0.01
    halvings: int = 2
    min_order: float = 2.9


@dataclass(frozen=True)
class G2Section:
    window: float = 0.01
    duration: float | None = None
    n_traj: int | str = "auto"
    target_coincidences: int = 300


@dataclass(frozen=True)
class SimConfig:
    model: str = "SD"
    field: dict = dc_field(default_factory=lambda: {"kind": "thermal", "nbar": 1.0})
    gamma: float = 1.0
    dim: int = 64
    tail_tol: float = 1e-12
    grid: dict = dc_field(default_factory=lambda: {"t0": 0.0, "t1": 3.0, "steps": 30})
    n_traj: int = 1000
    seed: int = 0
    outputs: tuple[str, ...] = ("mean_photon", "p0", "trace_residual")
    method: str = "rk4"
    workers: int = 1
    tables: TablesSection = TablesSection()
    derive: DeriveSection = DeriveSection()
    g2: G2Section = G2Section()

    # ------------------------------------------------------------ builders

    def jump_model(self, kind: str | None = None) -> JumpModel:
        return JumpModel(ModelKind(kind or self.model), self.gamma)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(float(self.grid["t0"]), float(self.grid["t1"]), int(self.grid["steps"]))

    def initial_state(self) -> DensityMatrix:
        return build_state(self.field, self.dim, self.tail_tol)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name in SimConfig.__dataclass_fields__:
            v = getattr(self, name)
            if hasattr(v, "__dataclass_fields__"):
                v = {k: _plain(getattr(v, k)) for k in v.__dataclass_fields__}
            out[name] = _plain(v)
        return out


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


# ---------------------------------------------------------------- states


def _num(value, path: str, *, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    if positive and not value > 0.0:
        raise ConfigError(f"{path}: must be > 0, got {value}")
    if nonneg and value < 0.0:
        raise ConfigError(f"{path}: must be >= 0, got {value}")
    return value


def _int(value, path: str, *, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {value}")
    return value


def _keys(d: dict, allowed: set[str], path: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object, got {type(d).__name__}")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}; allowed {sorted(allowed)}")


def build_state(spec: dict, dim: int, tail_tol: float, path: str = "config.field") -> DensityMatrix:
    """Construct the field state described by a ``field`` config object."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{path}: expected an object with a 'kind' key")
    kind = spec["kind"]
    if kind not in FIELD_KINDS:
        raise ConfigError(f"{path}.kind: must be one of {list(FIELD_KINDS)}, got {kind!r}")
    try:
        if kind == "fock":
            _keys(spec, {"kind", "m"}, path)
            return make_fock(_int(spec.get("m"), f"{path}.m", minimum=0), dim)
        if kind == "thermal":
            _keys(spec, {"kind", "nbar"}, path)
            return make_thermal(_num(spec.get("nbar"), f"{path}.nbar", nonneg=True), dim, tail_tol)
        if kind == "coherent":
            _keys(spec, {"kind", "alpha", "nbar"}, path)
            if ("alpha" in spec) == ("nbar" in spec):
                raise ConfigError(f"{path}: give exactly one of 'alpha' or 'nbar'")
            if "nbar" in spec:
                alpha = complex(math.sqrt(_num(spec["nbar"], f"{path}.nbar", nonneg=True)))
            else:
                a = spec["alpha"]
                if isinstance(a, list):
                    if len(a) != 2:
                        raise ConfigError(f"{path}.alpha: expected [re, im]")
                    alpha = complex(_num(a[0], f"{path}.alpha[0]"), _num(a[1], f"{path}.alpha[1]"))
                else:
                    alpha = complex(_num(a, f"{path}.alpha"))
            return make_coherent(alpha, dim, tail_tol)
        _keys(spec, {"kind", "amps"}, path)
        amps = spec.get("amps")
        if not isinstance(amps, list) or not amps:
            raise ConfigError(f"{path}.amps: expected a non-empty list of [level, re] or [level, re, im]")
        pairs = []
        for i, entry in enumerate(amps):
            p = f"{path}.amps[{i}]"
            if not isinstance(entry, list) or len(entry) not in (2, 3):
                raise ConfigError(f"{p}: expected [level, re] or [level, re, im]")
            level = _int(entry[0], f"{p}[0]", minimum=0)
            im = _num(entry[2], f"{p}[2]") if len(entry) == 3 else 0.0
            pairs.append((level, complex(_num(entry[1], f"{p}[1]"), im)))
        return make_superposition(pairs, dim)
    except TruncationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ----------------------------------------------------------------- parse


def _section(cls, raw, path: str, validate):
    if raw is None:
        return cls()
    _keys(raw, set(cls.__dataclass_fields__), path)
    merged = {k: getattr(cls(), k) for k in cls.__dataclass_fields__}
    merged.update(raw)
    validate(merged, path)
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in merged.items()})


def _validate_tables(d, path):
    for i, m in enumerate(d["models"]):
        if m not in ("SD", "E"):
            raise ConfigError(f"{path}.models[{i}]: must be 'SD' or 'E', got {m!r}")
    for i, f in enumerate(d["fields"]):
        if f not in [k.value for k in FieldKind]:
            raise ConfigError(f"{path}.fields[{i}]: must be fock, thermal or coherent, got {f!r}")
    for i, n in enumerate(d["nbar"]):
        _num(n, f"{path}.nbar[{i}]", positive=True)
    for i, m in enumerate(d["fock_m"]):
        _int(m, f"{path}.fock_m[{i}]", minimum=1)
    _int(d["dim"], f"{path}.dim", minimum=2)
    _num(d["tolerance"], f"{path}.tolerance", positive=True)


def _validate_derive(d, path):
    omega = _num(d["omega"], f"{path}.omega", positive=True)
    dt = _num(d["dt"], f"{path}.dt", positive=True)
    _int(d["halvings"], f"{path}.halvings", minimum=1)
    _num(d["min_order"], f"{path}.min_order")
    if omega * dt > 0.1:
        raise ConfigError(f"{path}: Omega*dt = {omega * dt:.3g} must be <= 0.1")


def _validate_g2(d, path):
    _num(d["window"], f"{path}.window", positive=True)
    if d["duration"] is not None:
        _num(d["duration"], f"{path}.duration", positive=True)
    if d["n_traj"] != "auto":
        _int(d["n_traj"], f"{path}.n_traj", minimum=0)
    _int(d["target_coincidences"], f"{path}.target_coincidences", minimum=1)


def parse_config(raw: dict) -> SimConfig:
    _keys(raw, set(SimConfig.__dataclass_fields__), "config")
    d = {k: getattr(SimConfig(), k) for k in SimConfig.__dataclass_fields__}
    d.update({k: v for k, v in raw.items() if k not in ("tables", "derive", "g2")})

    if d["model"] not in ("SD", "E"):
        raise ConfigError(f"config.model: must be 'SD' or 'E', got {d['model']!r}")
    _num(d["gamma"], "config.gamma", positive=True)
    _int(d["dim"], "config.dim", minimum=2)
    _num(d["tail_tol"], "config.tail_tol", positive=True)
    _int(d["n_traj"], "config.n_traj", minimum=1)
    _int(d["seed"], "config.seed", minimum=0)
    _int(d["workers"], "config.workers", minimum=1)
    if d["method"] not in METHODS:
        raise ConfigError(f"config.method: must be one of {list(METHODS)}, got {d['method']!r}")
    outputs = d["outputs"]
    if not isinstance(outputs, (list, tuple)):
        raise ConfigError("config.outputs: expected a list")
    for i, o in enumerate(outputs):
        if o not in OBSERVABLES:
            raise ConfigError(f"config.outputs[{i}]: must be one of {list(OBSERVABLES)}, got {o!r}")
    d["outputs"] = tuple(outputs)

    grid = d["grid"]
    _keys(grid, {"t0", "t1", "steps"}, "config.grid")
    t0 = _num(grid.get("t0", 0.0), "config.grid.t0")
    t1 = _num(grid.get("t1"), "config.grid.t1")
    steps = _int(grid.get("steps"), "config.grid.steps", minimum=1)
    if not t1 > t0:
        raise ConfigError(f"config.grid: needs t1 > t0, got [{t0}, {t1}]")
    d["grid"] = {"t0": t0, "t1": t1, "steps": steps}

    d["tables"] = _section(TablesSection, raw.get("tables"), "config.tables", _validate_tables)
    d["derive"] = _section(DeriveSection, raw.get("derive"), "config.derive", _validate_derive)
    d["g2"] = _section(G2Section, raw.get("g2"), "config.g2", _validate_g2)

    cfg = SimConfig(**d)
    cfg.initial_state()  # eager: Fock level vs dim, truncation tail
    return cfg


def load_config(path: str | Path | None) -> SimConfig:
    if path is None:
        return parse_config({})
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(raw)

