"""Experiment configuration: YAML loading, strict validation, presets.

Configs are nested key/value maps. Unknown keys anywhere are errors; every
known key has a type and a default. Preset names (e.g. ``scr-desk-bp``)
resolve to YAML files shipped under ``qreplay/configs/``.
"""

import copy
import os
from importlib import resources

import yaml

from .errors import ConfigError

EXPERIMENTS = ("pmnist", "scr")
LEARNERS = ("query_only", "full_attention", "maml", "bp", "cbp", "knn_oracle")

# (default, type, allowed) triples; None default means "must be set".
_SCHEMA = {
    "experiment": (None, str, EXPERIMENTS),
    "learner": (None, str, LEARNERS),
    "seeds": ([20, 30, 40], list, None),
    "output_dir": ("results", str, None),
    "task_count": (None, int, None),
    "steps_per_task": (None, int, None),
    "batch_size": (1, int, None),
    "support_size": (100, int, None),
    "buffer_capacity": (100, int, None),
    "learner_params": {
        "lr": (1e-4, float, None),
        "hidden_size": (100, int, None),
        "hidden_layers": (1, int, None),
        "include_labels": (True, bool, None),
        "normalize_scores": (False, bool, None),
        "attention_layers": (1, int, None),
        "attention_heads": (1, int, None),
        "inner_lr": (1e-2, float, None),
        "outer_lr": (1e-4, float, None),
        "inner_support": (10, int, None),
        "inner_query": (10, int, None),
        "tasks_per_iter": (5, int, None),
        "second_order": (False, bool, None),
        "k": (5, int, None),
        "weight_kind": ("uniform", str, ("uniform", "inverse_distance", "exp_decay")),
        "knn_alpha": (1.0, float, None),
        "replacement_rate": (1e-4, float, None),
        "maturity_threshold": (100, int, None),
        "utility_decay": (0.99, float, None),
    },
    "eval": {
        "forward_eval_size": (2000, int, None),
        "backward_probe_lags": ([10, 50], list, None),
        "backward_probe_every": (10, int, None),
        "backward_buffer_per_task": (200, int, None),
        "archive_ring": (100, int, None),
        "window": (10, int, None),
    },
    "diagnostics": {
        "rank_schedule": (0, int, None),
        "probe_size": (256, int, None),
        "spectrum_method": ("auto", str, ("auto", "jacobi", "lapack")),
    },
    "data": {
        "images": ("", str, None),
        "labels": ("", str, None),
    },
    "stream": {
        "input_bits": (20, int, None),
        "flip_bits": (15, int, None),
        "target_hidden": (100, int, None),
        "threshold": (1.5, float, None),
        "output_scale": (1.0, float, None),
    },
}


def _defaults(schema):
    out = {}
    for key, spec in schema.items():
        if isinstance(spec, dict):
            out[key] = _defaults(spec)
        else:
            out[key] = copy.deepcopy(spec[0])
    return out


def _merge(schema, base, incoming, prefix=""):
    for key, value in incoming.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key: {path}")
        spec = schema[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path} must be a mapping")
            _merge(spec, base[key], value, prefix=f"{path}.")
        else:
            base[key] = value
    return base


def _check_types(schema, cfg, prefix=""):
    for key, spec in schema.items():
        path = f"{prefix}{key}"
        value = cfg[key]
        if isinstance(spec, dict):
            _check_types(spec, value, prefix=f"{path}.")
            continue
        default, typ, allowed = spec
        if value is None:
            raise ConfigError(f"config key {path} is required")
        if typ is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
            cfg[key] = value
        if typ is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"config key {path} must be an integer, got {value!r}")
        if not isinstance(value, typ):
            raise ConfigError(
                f"config key {path} must be {typ.__name__}, got {type(value).__name__}"
            )
        if allowed is not None and value not in allowed:
            raise ConfigError(f"config key {path} must be one of {allowed}, got {value!r}")


def validate(cfg):
    """Full structural and semantic validation; raises ConfigError."""
    _check_types(_SCHEMA, cfg)
    if not cfg["seeds"] or not all(isinstance(s, int) for s in cfg["seeds"]):
        raise ConfigError("config key seeds must be a non-empty list of integers")
    for key in ("task_count", "steps_per_task", "batch_size", "support_size", "buffer_capacity"):
        if cfg[key] < 1:
            raise ConfigError(f"config key {key} must be >= 1")
    if cfg["support_size"] > cfg["buffer_capacity"]:
        raise ConfigError(
            f"support_size {cfg['support_size']} exceeds buffer_capacity "
            f"{cfg['buffer_capacity']}"
        )
    ev = cfg["eval"]
    if ev["window"] < 1:
        raise ConfigError("config key eval.window must be >= 1")
    if not all(isinstance(j, int) and j >= 0 for j in ev["backward_probe_lags"]):
        raise ConfigError("config key eval.backward_probe_lags must be non-negative integers")
    if cfg["experiment"] == "pmnist":
        if not cfg["data"]["images"] or not cfg["data"]["labels"]:
            raise ConfigError(
                "pmnist experiments require data.images and data.labels paths"
            )
    st = cfg["stream"]
    if st["flip_bits"] >= st["input_bits"]:
        raise ConfigError("stream.flip_bits must be smaller than stream.input_bits")
    lp = cfg["learner_params"]
    if cfg["learner"] == "maml":
        need = lp["tasks_per_iter"] * (lp["inner_support"] + lp["inner_query"])
        if need > cfg["buffer_capacity"]:
            raise ConfigError(
                f"maml needs tasks_per_iter*(inner_support+inner_query)={need} "
                f"<= buffer_capacity={cfg['buffer_capacity']}"
            )
    return cfg


def from_dict(data):
    cfg = _merge(_SCHEMA, _defaults(_SCHEMA), data)
    return validate(cfg)


def preset_path(name):
    ref = resources.files("qreplay").joinpath("configs", f"{name}.yaml")
    return str(ref) if ref.is_file() else None


def available_presets():
    base = resources.files("qreplay").joinpath("configs")
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".yaml"))


def load(path_or_preset):
    """Load a config from a YAML path or a shipped preset name."""
    path = path_or_preset
    if not os.path.exists(path):
        resolved = preset_path(path_or_preset)
        if resolved is None:
            raise ConfigError(
                f"config not found: {path_or_preset!r} is neither a file nor a "
                f"preset (available presets: {', '.join(available_presets())})"
            )
        path = resolved
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"failed to parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(data)


def apply_override(cfg, assignment):
    """Apply one 'dotted.key=value' override; the value parses as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    node = cfg
    parts = key.split(".")
    schema = _SCHEMA
    for part in parts[:-1]:
        if part not in schema or not isinstance(schema[part], dict):
            raise ConfigError(f"unknown config key: {key}")
        schema = schema[part]
        node = node[part]
    if parts[-1] not in schema:
        raise ConfigError(f"unknown config key: {key}")
    node[parts[-1]] = value
    return validate(cfg)
