"""Experiment configuration: JSON schema, loading and translation to a run."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .. import model, sde, stationary
from ..metric import DistortedMetric, build_metric


class ConfigError(ValueError):
    """Schema violation; the message lists every offending field."""


_LAW = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["gaussian", "two_point_mixture", "dirac", "gaussian_random_center"]},
        "mean": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "center_mean": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "cov": {},
        "center_cov": {},
        "points": {"type": "array", "items": {"type": "array", "items": {"type": "number"}},
                   "minItems": 2, "maxItems": 2},
        "weights": {"type": "array", "items": {"type": "number", "minimum": 0},
                    "minItems": 2, "maxItems": 2},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["name", "potential", "sigma", "sigma0", "N", "d", "dt", "t_final",
                 "realizations", "initial", "seed"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "potential": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["quadratic", "double_well_1d", "radial_double_well",
                                  "custom_polynomial"]},
                "center": {"type": "array", "items": {"type": "number"}},
                "curvature": {"type": "number", "exclusiveMinimum": 0},
                "box": {"type": "number", "exclusiveMinimum": 0},
                "d": {"type": "integer", "minimum": 1},
                "coefficients": {"type": "array",
                                 "items": {"type": "array", "items": {"type": "number"}}},
            },
            "additionalProperties": False,
        },
        "interaction": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["none", "quadratic"]},
                "alpha": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "sigma": {"type": "number", "minimum": 0},
        "sigma0": {"type": "number", "minimum": 0},
        "N": {"type": "integer", "minimum": 1},
        "aux_size": {"type": ["integer", "null"], "minimum": 1},
        "d": {"type": "integer", "minimum": 1},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "t_final": {"type": "number", "minimum": 0},
        "realizations": {"type": "integer", "minimum": 1},
        "coupling": {
            "type": "object",
            "required": ["mode"],
            "properties": {
                "mode": {"enum": list(sde.MODES)},
                "delta": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "delta_factor": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "initial": {
            "type": "object",
            "required": ["a"],
            "properties": {
                "a": _LAW,
                "b": _LAW,
                "aux": _LAW,
                "pair": {"type": "boolean"},
                "share_center": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "cadence": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "observers": {"type": "array", "items": {"enum": sorted(sde.OBSERVERS)}},
        "functionals": {"type": "array", "items": {"enum": ["square", "variance", "coordinate"]}},
        "snapshot_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "chunk_size": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "metric": {
            "type": "object",
            "properties": {
                "quad_step": {"type": "number", "exclusiveMinimum": 0},
                "diff": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "enabled": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "fit": {
            "type": "object",
            "properties": {
                "series": {"type": "string"},
                "window": {"enum": ["full", "late"]},
                "floor_hint": {"type": ["number", "null"], "minimum": 0},
            },
            "additionalProperties": False,
        },
        "checks": {
            "type": "object",
            "properties": {
                "rate_min": {"type": "number"},
                "rate_min_c_factor": {"type": "number"},
                "plateau_present": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULTS = {
    "interaction": {"kind": "none"},
    "aux_size": None,
    "coupling": {"mode": "synchronous"},
    "cadence": 10,
    "output_dir": "runs",
    "observers": None,
    "functionals": [],
    "snapshot_times": [],
    "chunk_size": 20,
    "workers": 1,
    "metric": {"quad_step": 1e-3, "diff": None, "enabled": True},
    "fit": {"series": None, "window": "full", "floor_hint": None},
    "checks": {},
}


def _set_path(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``key.path=value`` with the value parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def validate(cfg: dict) -> None:
    """Raise :class:`ConfigError` listing every schema violation."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        lines = []
        for e in errors:
            where = ".".join(str(p) for p in e.path) or "<root>"
            lines.append(f"{where}: {e.message}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    mode = cfg.get("coupling", {}).get("mode", "synchronous")
    if mode in ("reflection_1d", "mean_reflection") and "b" not in cfg["initial"]:
        raise ConfigError("coupling.mode: reflection modes need initial.b")
    if mode == "reflection_1d" and cfg["d"] != 1:
        raise ConfigError("coupling.mode: reflection_1d requires d = 1")
    steps = round(cfg["t_final"] / cfg["dt"])
    if abs(steps * cfg["dt"] - cfg["t_final"]) > 1e-9 * max(1.0, cfg["t_final"]):
        raise ConfigError("t_final: must be a multiple of dt")
    cadence = cfg.get("cadence", DEFAULTS["cadence"])
    if steps % cadence:
        raise ConfigError(f"cadence: {cadence} does not divide the step count {steps}")


def load_config(source, overrides=()) -> dict:
    """Load, merge defaults, apply ``key=value`` overrides and validate."""
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            cfg = json.load(fh)
    else:
        cfg = copy.deepcopy(source)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_path(cfg, key, value)
    validate(cfg)
    merged = copy.deepcopy(DEFAULTS)
    for k, v in cfg.items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k].update(v)
        else:
            merged[k] = v
    return merged


def default_observers(cfg: dict, has_metric: bool) -> list[str]:
    coupled = "b" in cfg["initial"]
    obs = ["spread_a", "m2_a"]
    if coupled:
        obs = ["w2", "w1", "paired_rms", "spread_a", "spread_b", "m2_a", "m2_b"]
        if has_metric:
            obs.insert(0, "df_paired")
        if cfg["coupling"]["mode"] in ("reflection_1d", "mean_reflection"):
            obs.append("pi")
    return obs


_FUNCTIONALS = {
    "square": stationary.square_functional,
    "variance": stationary.VarianceFunctional,
    "coordinate": stationary.coordinate_functional,
}


@dataclass
class Prepared:
    """A validated config turned into simulator objects."""

    config: dict
    V: model.PotentialSpec
    W: model.InteractionSpec
    metric: DistortedMetric | None
    spec: sde.RunSpec
    observers: list = field(default_factory=list)


def prepare(cfg: dict) -> Prepared:
    """Build potentials, metric and the simulator spec from a loaded config."""
    d = cfg["d"]
    V = model.potential_from_config(cfg["potential"], d)
    if V.dim != d:
        raise ConfigError(f"potential: dimension {V.dim} does not match d = {d}")
    W = model.interaction_from_config(cfg["interaction"])
    metric = None
    if cfg["metric"].get("enabled", True) and cfg["sigma0"] > 0:
        metric = build_metric(V, cfg["sigma0"], quad_step=cfg["metric"]["quad_step"],
                              diff=cfg["metric"].get("diff"), W=W)
    observers = cfg["observers"] or default_observers(cfg, metric is not None)
    if metric is None:
        observers = [o for o in observers if o not in ("df_paired", "mean_f_distance")]
    init = cfg["initial"]
    coupling = cfg["coupling"]
    mode = sde.CouplingMode(coupling["mode"], coupling.get("delta"),
                            coupling.get("delta_factor", 1e-3))
    functionals = {}
    for name in cfg["functionals"]:
        fun = _FUNCTIONALS[name]()
        fun.name = name
        functionals[name] = fun
    spec = sde.RunSpec(
        V=V, W=W,
        plan=sde.NoisePlan(cfg["seed"], cfg["dt"], cfg["sigma"], cfg["sigma0"]),
        N=cfg["N"], d=d, t_final=cfg["t_final"],
        law_a=sde.InitialLaw.from_config(init["a"]),
        law_b=sde.InitialLaw.from_config(init["b"]) if "b" in init else None,
        mode=mode if "b" in init else None,
        aux_size=cfg.get("aux_size"),
        law_aux=sde.InitialLaw.from_config(init["aux"]) if "aux" in init else None,
        pair_initial=init.get("pair", True),
        share_center=init.get("share_center", False),
        cadence=cfg["cadence"],
        observers=tuple(observers),
        metric=metric,
        functionals=functionals,
        snapshot_times=tuple(cfg["snapshot_times"]),
    )
    return Prepared(cfg, V, W, metric, spec, list(observers))
