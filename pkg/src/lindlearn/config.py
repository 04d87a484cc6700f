"""Experiment configuration: JSON schema, defaults and object construction."""

from __future__ import annotations

import copy
import json
from importlib import resources

import jsonschema
import numpy as np

from .curvefit import FitOptions
from .model import DeviceSpec, Gate, LindbladModel, TopologyGraph, load_model, synthetic_device
from .pauli import PauliString
from .sim import SpamSpec
from .solve import SolveOptions


class ConfigError(ValueError):
    """Configuration does not validate against the schema."""


_NUM = {"type": "number"}
_RANGE = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_PER_QUBIT = {"oneOf": [{"type": "number", "minimum": 0, "maximum": 1},
                        {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "device": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"enum": ["grid_2x3", "grid_3x3", "custom"]},
                "seed": {"type": "integer", "minimum": 0},
                "model_file": {"type": ["string", "null"]},
                "rows": {"type": "integer", "minimum": 1},
                "cols": {"type": "integer", "minimum": 1},
                "edges": {"type": "array", "items": {"type": "array", "items": {"type": "integer"},
                                                     "minItems": 2, "maxItems": 2}},
                "n_qubits": {"type": "integer", "minimum": 1},
                "gates": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["kind", "qubits"],
                        "properties": {
                            "kind": {"enum": ["cx", "x", "s", "rx", "ry", "rz", "rzz"]},
                            "qubits": {"type": "array", "items": {"type": "integer"}},
                            "angle": {"type": ["number", "null"]},
                        },
                    },
                },
                "terms": {
                    "type": "array",
                    "items": {"type": "object", "required": ["pauli", "coeff"],
                              "properties": {"pauli": {"type": "string"}, "coeff": _NUM}},
                },
                "unit_fraction": {"type": "number", "exclusiveMinimum": 0},
                "gate_time_ns": {"type": "number", "exclusiveMinimum": 0},
                "t1_us": _RANGE,
                "t2phi_us": _RANGE,
                "dz_khz": _RANGE,
                "dzz_khz": _RANGE,
                "dissipation": {"type": "boolean"},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_states": {"type": "integer", "minimum": 1},
                "max_depth": {"type": "integer", "minimum": 3},
                "shots": {"type": ["integer", "null"], "minimum": 1},
                "twirl_instances": {"type": "integer", "minimum": 1},
                "evolution": {"enum": ["exact", "trotter"]},
                "trotter_steps": {"type": "integer", "minimum": 1},
                "trotter_order": {"enum": [2, 4, 6]},
            },
        },
        "spam": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"prep": _PER_QUBIT, "meas": _PER_QUBIT},
        },
        "mitigation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["trex", "confusion", "none"]},
                "calibration_shots": {"type": ["integer", "null"], "minimum": 1},
                "with_spe": {"type": "boolean"},
            },
        },
        "fitting": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mu": {"type": "number", "exclusiveMinimum": 0},
                "local_opt": {"type": "boolean"},
                "min_abs_z": {"type": "number", "minimum": 0},
                "max_arg_z": {"type": ["number", "null"]},
                "exact_curves": {"type": "boolean"},
            },
        },
        "assemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"smooth_A": {"type": "boolean"}, "weighting": {"type": "boolean"}},
        },
        "solve": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["ls", "psd", "t1t2"]},
                "eps_abs": {"type": "number", "exclusiveMinimum": 0},
                "eps_rel": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "finetune": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "patches": {"type": "array", "items": {"type": "array",
                                                       "items": {"type": "integer"}}},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "maxiter": {"type": "integer", "minimum": 1},
            },
        },
        "report": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "predictions": {"type": "boolean"},
                "sweep_shots": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "output": "run",
    "device": {"preset": "grid_2x3", "seed": 0, "model_file": None},
    "schedule": {
        "n_states": 20,
        "max_depth": 30,
        "shots": None,
        "twirl_instances": 16,
        "evolution": "exact",
        "trotter_steps": 100,
        "trotter_order": 6,
    },
    "spam": {"prep": 0.0, "meas": 0.0},
    "mitigation": {"method": "trex", "calibration_shots": 10_000, "with_spe": True},
    "fitting": {"mu": 3.0, "local_opt": True, "min_abs_z": 0.1, "max_arg_z": None,
                "exact_curves": False},
    "assemble": {"smooth_A": False, "weighting": False},
    "solve": {"method": "psd", "eps_abs": 1e-9, "eps_rel": 1e-9, "max_iter": 50_000},
    "finetune": {"patches": [], "delta": 1e-7, "maxiter": 500},
    "report": {"predictions": True, "sweep_shots": []},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate(doc):
    """Raise ``ConfigError`` naming the offending field."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(map(str, e.path)) or "<root>"
        raise ConfigError(f"config field {where}: {e.message}")


def load_config(path=None, overrides=None):
    """Read, validate and complete a configuration with defaults."""
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    validate(doc)
    cfg = _merge(DEFAULTS, doc)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate(cfg)
    return cfg


def bundled_config(name="grid_2x3"):
    text = resources.files("lindlearn").joinpath("configs", f"{name}.json").read_text()
    return json.loads(text)


def build_truth(cfg):
    """Ground-truth model described by the ``device`` section."""
    dev = cfg["device"]
    if dev.get("model_file"):
        return load_model(dev["model_file"])
    kw = {k: tuple(dev[k]) for k in ("t1_us", "t2phi_us", "dz_khz", "dzz_khz") if k in dev}
    for k in ("unit_fraction", "gate_time_ns", "dissipation"):
        if k in dev:
            kw[k] = dev[k]
    preset = dev.get("preset", "grid_2x3")
    if preset == "grid_2x3":
        return synthetic_device(DeviceSpec.grid_2x3(dev.get("seed", 0), **_no_fraction(kw)))
    if preset == "grid_3x3":
        return synthetic_device(DeviceSpec.grid_3x3(dev.get("seed", 0), **_no_fraction(kw)))
    topo = _custom_topology(dev)
    if "terms" in dev:
        n = topo.n_qubits
        terms = tuple((PauliString(t["pauli"]), t["coeff"]) for t in dev["terms"])
        return LindbladModel(topo, terms, np.zeros((n, 3, 3)), unit_time_ns=dev.get("gate_time_ns"))
    gates = tuple(Gate(g["kind"], tuple(g["qubits"]), g.get("angle")) for g in dev.get("gates", []))
    spec = DeviceSpec(topo, gates, dev.get("seed", 0), **kw)
    return synthetic_device(spec)


def _no_fraction(kw):
    # presets fix their own unit fraction
    if "unit_fraction" in kw:
        raise ConfigError("device/unit_fraction only applies to custom devices")
    return kw


def _custom_topology(dev):
    if "rows" in dev and "cols" in dev:
        return TopologyGraph.grid(dev["rows"], dev["cols"])
    if "n_qubits" in dev:
        return TopologyGraph(dev["n_qubits"], tuple(map(tuple, dev.get("edges", []))))
    raise ConfigError("device: custom preset needs rows/cols or n_qubits")


def build_spam(cfg, n):
    def per(v):
        return tuple(float(v) for _ in range(n)) if not isinstance(v, list) else tuple(map(float, v))

    prep, meas = per(cfg["spam"]["prep"]), per(cfg["spam"]["meas"])
    if len(prep) != n or len(meas) != n:
        raise ConfigError(f"spam: per-qubit lists must have {n} entries")
    return SpamSpec(prep, meas)


def fit_options(cfg):
    f = cfg["fitting"]
    return FitOptions(mu=f["mu"], local_opt=f["local_opt"], min_abs_z=f["min_abs_z"],
                      max_arg_z=f["max_arg_z"])


def solve_options(cfg):
    s = cfg["solve"]
    return SolveOptions(method=s["method"], eps_abs=s["eps_abs"], eps_rel=s["eps_rel"],
                        max_iter=s["max_iter"], weighting=cfg["assemble"]["weighting"])


__all__ = [
    "ConfigError",
    "SCHEMA",
    "DEFAULTS",
    "validate",
    "load_config",
    "bundled_config",
    "build_truth",
    "build_spam",
    "fit_options",
    "solve_options",
]
