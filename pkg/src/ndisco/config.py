"""Scenario configuration: a JSON document validated against a fixed schema.

Example::

    {
      "schema": 1,
      "name": "ring",
      "engine": "sync",
      "strategy": {"kind": "sync-variable-known", "delta_est": 4},
      "topology": {"generate": {"n": 6, "universal": 4, "density": 0.6, "seed": 1}},
      "epsilon": 0.1,
      "theta": 8,
      "trials": 100,
      "seed": 7
    }

``delta_est`` may be ``"auto"``, meaning the smallest power of two that is at
least the maximum degree.  Offsets are slots (sync) or frame lengths (async).
When no offsets are listed and ``theta`` > 0, each trial draws them uniformly
from [0, theta].
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .impairments import ImpairmentError, JammerConfig, LossModel, check_jamming_topology
from .model import Topology, TopologyError, derive_params, expand_bands, generate_random_topology, load_topology
from .protocols import StrategyKind

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_INT = {"type": "integer"}

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "engine", "strategy", "topology"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "engine": {"enum": ["sync", "async"]},
        "strategy": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": [k.value for k in StrategyKind]},
                "delta_est": {"oneOf": [{"type": "integer", "minimum": 1}, {"const": "auto"}]},
            },
        },
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "inline": {"type": "object"},
                "file": {"type": "string"},
                "generate": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["n", "universal"],
                    "properties": {
                        "n": {"type": "integer", "minimum": 1},
                        "universal": {"type": "integer", "minimum": 1},
                        "density": {"type": "number", "minimum": 0, "maximum": 1},
                        "channel_law": {"type": ["object", "string"]},
                        "seed": _INT,
                    },
                },
            },
        },
        "expand_bands": {"type": "boolean"},
        "symmetric": {"type": "boolean"},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "theta": {"type": "number", "minimum": 0},
        "offsets": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0}},
        "ticks_per_L": {"type": "integer", "minimum": 3},
        "clock": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "law": {"enum": ["constant", "resampled", "scripted"]},
                "values": {"type": "array", "items": _NUM},
                "script": {"type": "array", "items": {"type": "array", "items": _NUM}},
            },
        },
        "loss": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"phi": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
        },
        "jammer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "round_length": {"type": "number", "exclusiveMinimum": 0},
                "round_offset": {"type": "number", "minimum": 0},
            },
        },
        "slot_channels": {"type": ["boolean", "null"]},
        "trials": {"type": "integer", "minimum": 1},
        "budget": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "budget_factor": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
    },
}

DEFAULTS: dict[str, Any] = {
    "name": "scenario",
    "expand_bands": False,
    "symmetric": True,
    "epsilon": 0.1,
    "theta": 0,
    "offsets": None,
    "ticks_per_L": 720_000,
    "clock": {},
    "loss": {},
    "jammer": {},
    "slot_channels": None,
    "trials": 1,
    "budget": None,
    "budget_factor": 4.0,
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def _validate(doc: Mapping[str, Any]) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        where = "/".join(str(p) for p in error.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {error.message}")


def apply_override(doc: dict, assignment: str) -> dict:
    """Apply ``key.sub=value``; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    doc = copy.deepcopy(doc)
    node = doc
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = value
    return doc


@dataclass
class Scenario:
    """A validated configuration with its topology resolved."""

    doc: dict[str, Any]
    topology: Topology
    base_dir: Path | None = None

    @property
    def engine(self) -> str:
        return self.doc["engine"]

    @property
    def kind(self) -> StrategyKind:
        return StrategyKind(self.doc["strategy"]["kind"])

    @property
    def delta_est(self) -> int | None:
        est = self.doc["strategy"].get("delta_est")
        if est == "auto" or (est is None and self.kind.needs_delta_est):
            return max(1, derive_params(self.topology).delta0)
        return est

    @property
    def jammer(self) -> JammerConfig:
        return JammerConfig(**self.doc["jammer"])

    @property
    def loss(self) -> LossModel:
        return LossModel(**self.doc["loss"])

    def __getitem__(self, key: str) -> Any:
        return self.doc[key]


def _resolve_topology(doc: Mapping[str, Any], base_dir: Path | None) -> Topology:
    src = doc["topology"]
    sym = doc["symmetric"]
    if "inline" in src:
        topo = Topology.from_dict(src["inline"], symmetric=sym)
    elif "file" in src:
        path = Path(src["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        topo = load_topology(path, symmetric=sym)
    else:
        g = src["generate"]
        topo = generate_random_topology(g["n"], g["universal"], g.get("density", 1.0),
                                        g.get("channel_law"), g.get("seed", 0))
    if doc["expand_bands"]:
        topo = expand_bands(topo)
    return topo


def load_config(source: str | Path | Mapping[str, Any], overrides: list[str] = (), base_dir=None) -> Scenario:
    """Validate a configuration (path or mapping), apply overrides, resolve the topology."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base_dir = base_dir or path.parent
    else:
        doc = copy.deepcopy(dict(source))
    for o in overrides:
        doc = apply_override(doc, o)
    _validate(doc)
    full = copy.deepcopy(DEFAULTS)
    full.update(doc)
    kind = StrategyKind(full["strategy"]["kind"])
    if kind.is_async != (full["engine"] == "async"):
        raise ConfigError(f"strategy {kind.value} does not run on the {full['engine']} engine")
    if kind.identical_start and (full["theta"] or any(full["offsets"] or [])):
        raise ConfigError(f"strategy {kind.value} requires identical start times")
    try:
        topo = _resolve_topology(full, base_dir)
        if full["offsets"] is not None and len(full["offsets"]) != topo.n:
            raise ConfigError(f"offsets: expected {topo.n} entries, got {len(full['offsets'])}")
        if full["jammer"].get("enabled"):
            check_jamming_topology(topo)
        JammerConfig(**full["jammer"])
        LossModel(**full["loss"])
    except (TopologyError, ImpairmentError) as exc:
        raise ConfigError(str(exc)) from exc
    return Scenario(full, topo, base_dir)
