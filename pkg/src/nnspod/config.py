"""JSON run configuration: defaults, strict key checking, resolution."""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .fom import AdvectionField, FomConfig, GaussianIC
from .grid import StructuredGrid
from .nnspod import NNsPodConfig
from .shift import ShiftSpec


class ConfigError(ValueError):
    pass


_FIELD = {"kind": "constant", "velocity": [1.0, -1.0], "name": None}

DEFAULTS = {
    "grid": {"nx": 50, "ny": 50, "x_min": 0.0, "x_max": 1.0, "y_min": 0.0, "y_max": 1.0},
    "fom": {
        "kind": "advection",  # advection | deforming | ingest
        "field": dict(_FIELD),
        "ic": {"center": [0.1, 0.9], "sigma": 0.1, "amplitude": 1.0},
        "T": 0.4,
        "n_steps": 100,
        "include_ic": True,
        "tol": 1e-10,
        "max_iter": 2000,
        "source": None,
    },
    "snapshots": None,
    "pod": {"thresholds": [1e-1, 1e-2, 1e-3]},
    "shift": {"field": dict(_FIELD), "t_ref": 0.0, "ode_steps": 32},
    "nnspod": {
        "reference_candidates": [80],
        "interp": {"hidden": [40, 40], "activation": "sigmoid", "output_activation": "linear",
                   "lr": 1e-2, "eps": 1e-5, "max_epochs": 40000},
        "shift": {"hidden": [20, 20, 20], "activation": "prelu", "output_activation": "linear",
                  "lr": 1e-4, "eps": 1e-3, "max_epochs": 10000},
        "eps_svd": 1e-2,
        "r_target": 1,
        "regrid": {"k": 4, "power": 2.0, "cutoff": 2.0},
        "identity_epochs": 3000,
        "identity_lr": 1e-3,
        "shift_stride": 1,
    },
    "output_dir": "output",
    "seed": 0,
}


def _merge(defaults, user, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    unknown = sorted(set(user) - set(defaults))
    if unknown:
        where = f" in {path}" if path else ""
        raise ConfigError(f"unknown key(s){where}: {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        sub = f"{path}.{key}" if path else key
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], val, sub)
        else:
            out[key] = val
    return out


def resolve(user: dict) -> dict:
    """Fill defaults and validate; raises :class:`ConfigError`."""
    cfg = _merge(DEFAULTS, user)
    fom = cfg["fom"]
    if fom["kind"] not in ("advection", "deforming", "ingest"):
        raise ConfigError(f"fom.kind must be advection, deforming or ingest, got {fom['kind']!r}")
    n = fom["n_steps"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ConfigError(f"fom.n_steps must be an integer >= 1, got {n!r}")
    if fom["kind"] == "deforming" and n < 2:
        raise ConfigError(f"fom.n_steps must be >= 2 for the deforming dataset, got {n}")
    if fom["kind"] == "ingest" and not fom["source"]:
        raise ConfigError("fom.source is required when fom.kind is 'ingest'")
    for key in ("T", "tol"):
        if not isinstance(fom[key], (int, float)) or not fom[key] > 0:
            raise ConfigError(f"fom.{key} must be a positive number, got {fom[key]!r}")
    if not fom["ic"]["sigma"] > 0:
        raise ConfigError(f"fom.ic.sigma must be positive, got {fom['ic']['sigma']!r}")
    ths = cfg["pod"]["thresholds"]
    if not ths or not all(isinstance(t, (int, float)) and 0 < t < 1 for t in ths):
        raise ConfigError(f"pod.thresholds must be a non-empty list in (0, 1), got {ths!r}")
    seed = cfg["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    try:
        build_grid(cfg)
        build_field(cfg["fom"]["field"], "fom.field")
        build_field(cfg["shift"]["field"], "shift.field")
        build_nnspod(cfg)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return cfg


def load(path, overrides: dict | None = None) -> dict:
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if overrides:
        user = {**user, **overrides}
    return resolve(user)


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def build_grid(cfg: dict) -> StructuredGrid:
    g = cfg["grid"]
    return StructuredGrid(g["nx"], g["ny"], g["x_min"], g["x_max"], g["y_min"], g["y_max"])


def build_field(spec: dict, where: str = "field") -> AdvectionField:
    kind = spec.get("kind")
    if kind == "constant":
        return AdvectionField.constant(*spec["velocity"])
    if kind == "analytic":
        return AdvectionField.analytic(spec["name"])
    raise ConfigError(f"{where}.kind must be 'constant' or 'analytic', got {kind!r}")


def build_fom(cfg: dict) -> FomConfig:
    f = cfg["fom"]
    ic = GaussianIC(tuple(f["ic"]["center"]), f["ic"]["sigma"], f["ic"]["amplitude"])
    return FomConfig(build_grid(cfg), build_field(f["field"], "fom.field"), f["T"], f["n_steps"], ic,
                     f["include_ic"], f["tol"], f["max_iter"])


def build_shift(cfg: dict) -> ShiftSpec:
    s = cfg["shift"]
    return ShiftSpec(build_field(s["field"], "shift.field"), s["t_ref"], s["ode_steps"])


def build_nnspod(cfg: dict) -> NNsPodConfig:
    n = copy.deepcopy(cfg["nnspod"])
    return NNsPodConfig(seed=cfg["seed"], **n)


def default_snapshot_path(cfg: dict) -> Path:
    return Path(cfg["snapshots"]) if cfg["snapshots"] else Path(cfg["output_dir"]) / "snapshots.snap"
