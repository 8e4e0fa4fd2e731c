"""Experiment configuration: a JSON file validated against a schema.

Every default is filled in and echoed back in reports, so a report plus
its config block is enough to rerun the experiment.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 2}

_MODE = {
    "type": "object",
    "required": ["frequency", "coefficient"],
    "additionalProperties": False,
    "properties": {
        "frequency": {"type": "array", "items": {"type": "integer"}, "minItems": 2},
        "coefficient": _VEC,
        "kind": {"enum": ["sin", "cos"]},
    },
}

_MAP = {
    "type": "object",
    "required": ["matrix"],
    "additionalProperties": False,
    "properties": {
        "matrix": {"type": "array", "minItems": 2,
                   "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2}},
        "modes": {"type": "array", "items": _MODE},
        "epsilon": {"type": "number", "minimum": 0},
        "volume_preserving": {"type": "boolean"},
    },
}

_SCALAR_MODE = {
    "type": "object",
    "required": ["frequency", "amplitude"],
    "additionalProperties": False,
    "properties": {
        "frequency": {"type": "array", "items": {"type": "integer"}, "minItems": 2},
        "amplitude": {"type": "number"},
        "kind": {"enum": ["sin", "cos"]},
    },
}

_OBSERVABLE = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["trig", "log_ju", "log_js", "log_jfull", "coboundary"]},
        "modes": {"type": "array", "items": _SCALAR_MODE},
        "constant": {"type": "number"},
        "c": {"type": "number"},
        "u": {"$ref": "#/definitions/observable"},
    },
    "additionalProperties": False,
}

_LEG = {
    "type": "object",
    "required": ["kind", "start", "end"],
    "additionalProperties": False,
    "properties": {"kind": {"enum": ["S", "U"]}, "start": _VEC, "end": _VEC},
}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "definitions": {"observable": _OBSERVABLE},
    "type": "object",
    "required": ["map"],
    "additionalProperties": False,
    "properties": {
        "map": _MAP,
        "map2": {"oneOf": [_MAP, {"type": "null"}]},
        "observable": {"$ref": "#/definitions/observable"},
        "observable2": {"oneOf": [{"$ref": "#/definitions/observable"}, {"type": "null"}]},
        "k_max": {"type": "integer", "minimum": 1, "maximum": 12},
        "grid_size": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "match_tol": {"type": "number", "exclusiveMinimum": 0},
        "kernel_tol": {"type": "number", "exclusiveMinimum": 0},
        "threshold": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "step": {"type": "number", "exclusiveMinimum": 0},
        "epsilons": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "points": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"a": {"oneOf": [_VEC, {"type": "null"}]},
                           "b": {"oneOf": [_VEC, {"type": "null"}]},
                           "x": {"oneOf": [_VEC, {"type": "null"}]}},
        },
        "path": {"oneOf": [{"type": "array", "items": _LEG, "minItems": 1}, {"type": "null"}]},
        "pairs": {"oneOf": [{"type": "array", "minItems": 1,
                             "items": {"type": "array", "items": _VEC, "minItems": 2, "maxItems": 2}},
                            {"type": "null"}]},
        "n_pairs": {"type": "integer", "minimum": 1},
        "kernel_point": {"oneOf": [_VEC, {"type": "null"}]},
        "loops": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_loops": {"type": "integer", "minimum": 1},
                           "n_legs": {"type": "integer", "minimum": 4},
                           "scale": {"type": "number", "exclusiveMinimum": 0}},
        },
    },
}

DEFAULTS = {
    "map2": None,
    "observable": {"type": "log_ju"},
    "observable2": None,
    "k_max": 4,
    "grid_size": 8,
    "tol": 1e-10,
    "match_tol": 1e-8,
    "kernel_tol": 1e-6,
    "threshold": None,
    "step": 1e-5,
    "epsilons": [1e-2, 1e-3, 1e-4],
    "seed": 0,
    "workers": 1,
    "points": {"a": None, "b": None, "x": None},
    "path": None,
    "pairs": None,
    "n_pairs": 3,
    "kernel_point": None,
    "loops": {"n_loops": 4, "n_legs": 6, "scale": 0.2},
}

_MAP_DEFAULTS = {"modes": [], "epsilon": 0.0, "volume_preserving": False}


def _line_of(text: str, path) -> int | None:
    """Best-effort line number of a JSON path inside the source text."""
    pos = 0
    for key in path:
        if isinstance(key, str):
            hit = text.find(f'"{key}"', pos)
            if hit < 0:
                return None
            pos = hit
    return text.count("\n", 0, pos) + 1 if path else None


def _fill(cfg: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for k, v in cfg.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(v)
        else:
            out[k] = v
    for key in ("map", "map2"):
        if out.get(key) is not None:
            out[key] = {**_MAP_DEFAULTS, **out[key]}
    return out


def validate(cfg: dict, text: str | None = None) -> dict:
    """Schema-check ``cfg`` and return it with all defaults filled in."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            field = "/".join(str(p) for p in e.absolute_path) or "<root>"
            line = _line_of(text, list(e.absolute_path)) if text else None
            where = f"line {line}, " if line else ""
            lines.append(f"{where}field {field}: {e.message}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    cfg = _fill(cfg)
    d = len(cfg["map"]["matrix"])
    for key in ("map", "map2"):
        m = cfg[key]
        if m is None:
            continue
        if any(len(r) != len(m["matrix"]) for r in m["matrix"]):
            raise ConfigError(f"field {key}/matrix: matrix must be square")
        for i, mode in enumerate(m["modes"]):
            if len(mode["frequency"]) != d or len(mode["coefficient"]) != d:
                raise ConfigError(f"field {key}/modes/{i}: frequency and coefficient need length {d}")
    if cfg["map2"] is not None and len(cfg["map2"]["matrix"]) != d:
        raise ConfigError("field map2/matrix: both maps need the same dimension")
    return cfg


def load_config(path: str | Path) -> dict:
    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("line 1, field <root>: config must be a JSON object")
    return validate(cfg, text)
