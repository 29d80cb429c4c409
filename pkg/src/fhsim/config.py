"""Run-configuration schema: YAML (primary) or JSON, strictly validated.

Unknown keys are rejected with their full path; type errors report the
offending key and the expected type.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid configuration file or schema violation."""


_NUM = (int, float)

# schema nodes: dict -> nested; tuple -> (types, default); "list:*" markers
_SCHEMA = {
    "geometry": {
        "rows": (_NUM, 2),
        "cols": (_NUM, 4),
    },
    "sector": {
        "n_up": (_NUM, None),
        "n_down": (_NUM, None),
    },
    "couplings": {
        "t": (_NUM, 1.0),
        "u": (_NUM, 8.0),
        "v": (_NUM, 0.0),
        "tprime": (_NUM, 0.0),
        "mu0": (_NUM, 10.0),
    },
    "protocol": {
        "name": (str, "exact-gs"),
        "filling": (str, "half"),
        "mode": (str, "fully-variational"),
        "depth": (_NUM, 3),
        "doping": (_NUM, None),
        "empty_columns": (list, None),
        "ramp_times": {
            "stage2": (_NUM, 5.0),
            "stage3": (_NUM, 5.0),
            "link": (_NUM, 10.0),
            "mu": (_NUM, 10.0),
            "link_depth": (_NUM, 2),
        },
        "baseline_time": (_NUM, None),
        "dt": (_NUM, 0.01),
        "dtau": (_NUM, 0.1),
        "n_steps": (_NUM, 20),
        "seed_quench": (list, None),
        "store_states": (bool, False),
        "g_regularization": (_NUM, 1e-6),
        "svd_cutoff": (_NUM, 1e-8),
        "qlanczos": (list, None),          # ["approx", "complete"]
        "trace": (str, None),              # qlanczos post-processing input stem
        "initial_state": (dict, None),     # recipe dict
        "state_file": (str, None),
        "t_trotter": (_NUM, 10.0),
        "trotter_dt": (_NUM, 0.05),
        "compiled_nnn": (bool, True),
        "observables": (list, None),       # measure protocol
        "merit_samples": (_NUM, 50),
    },
    "optimizer": {
        "restarts": (_NUM, None),
        "max_evaluations": (_NUM, None),
        "seed": (_NUM, 0),
        "init_low": (_NUM, None),
        "init_high": (_NUM, None),
        "polish_rounds": (_NUM, None),
    },
    "shots": {
        "enabled": (bool, False),
        "m": (_NUM, 2000),
        "parallel_factor": (_NUM, 10),
        "seed": (_NUM, 0),
    },
    "output": {
        "directory": (str, "run-output"),
    },
}


def _validate(node, schema, path: str, out: dict):
    if not isinstance(node, dict):
        raise ConfigError(f"{path or 'top level'}: expected a mapping")
    for key, val in node.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown key {here!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            out[key] = dict(out.get(key, {}))
            _validate(val, sub, here, out[key])
        else:
            types, _default = sub
            if val is not None and not isinstance(val, types):
                tn = types.__name__ if isinstance(types, type) else "number"
                raise ConfigError(f"{here}: expected {tn}, got {type(val).__name__}")
            out[key] = val


def _defaults(schema) -> dict:
    out = {}
    for key, sub in schema.items():
        if isinstance(sub, dict):
            out[key] = _defaults(sub)
        else:
            out[key] = sub[1]
    return out


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.data[key]

    def section(self, name: str) -> dict:
        return self.data[name]


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix == ".json":
            raw = json.loads(text)
        else:
            raw = yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    if raw is None:
        raw = {}
    return from_dict(raw)


def from_dict(raw: dict) -> RunConfig:
    merged = _defaults(_SCHEMA)
    staged: dict = {}
    _validate(raw, _SCHEMA, "", staged)

    def deep_merge(base, over):
        for k, v in over.items():
            if isinstance(v, dict) and isinstance(base.get(k), dict):
                deep_merge(base[k], v)
            else:
                base[k] = v

    deep_merge(merged, staged)
    return RunConfig(merged)
