"""Experiment configuration: a single versioned JSON document.

Configurations are validated before any work: unknown keys are rejected and
type errors name the offending field path. Presets provide ready-made
configurations for every shipped experiment.
"""

from __future__ import annotations

import copy
import math

from .errors import ConfigError

CONFIG_SCHEMA = "trajrl-config-v1"

_NUMBER = (int, float)


def _check_type(path: str, value, expected) -> None:
    if expected is float:
        if not isinstance(value, _NUMBER) or isinstance(value, bool):
            raise ConfigError(path, f"expected a number, got {type(value).__name__}")
    elif expected is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(path, f"expected an integer, got {type(value).__name__}")
    elif expected is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {type(value).__name__}")
    elif expected is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {type(value).__name__}")
    elif expected == "number_list":
        if not isinstance(value, list) or any(
            not isinstance(v, _NUMBER) or isinstance(v, bool) for v in value
        ):
            raise ConfigError(path, "expected a list of numbers")
    else:  # pragma: no cover - spec table mistakes only
        raise AssertionError(f"unknown field type {expected!r}")


_ENV_FIELDS = {
    "kind": str,
    "horizon": int,
    "dt": float,
    "actuator_lag": bool,
    "lag_time_constant": float,
    "x0": "number_list",
    "target": "number_list",
    "gravity_sign": int,
    "theta0": float,
}

_COST_FIELDS = {
    "kind": str,
    "q_target": "number_list",
    "qpos_target": "number_list",
    "qrot_target": "number_list",
    "q_weight": float,
    "control_weight": float,
    "qpos_weight": float,
    "qrot_weight": float,
    "final_scale": float,
    "lift_height": float,
}

_LEARNER_FIELDS = {
    "iterations": int,
    "rollouts_per_iteration": int,
    "noise_sigma": float,
    "epsilon_per_step": float,
    "robustification_start": int,
    "initial_state_noise": float,
    "init_cov_scale": float,
    "gmm_components": int,
    "gmm_max_iters": int,
    "niw_m": float,
    "niw_n0": float,
    "demo_noise_scale": float,
    "use_demo": bool,
}

_CLONING_FIELDS = {
    "samples_per_policy": int,
    "noise_scale": float,
    "observation_mode": str,
}

_MLP_FIELDS = {
    "hidden_layers": int,
    "width": int,
    "epochs": int,
    "batch": int,
    "lr": float,
}

_SWEEP_FIELDS = {
    "policy": str,
    "conditions": "number_list",
    "trials_per_condition": int,
    "noise": float,
    "condition_halfwidth": float,
    "crossval": bool,
    "crossval_trials": int,
    "reset_to_nearest": bool,
}

_GENERALIZATION_FIELDS = {
    "conditions": "number_list",
    "library_iterations": int,
    "demo_seed": int,
    "cloning": _CLONING_FIELDS,
    "mlp": _MLP_FIELDS,
    "sweep": _SWEEP_FIELDS,
}

_TOP_FIELDS = {
    "schema": str,
    "seed": int,
    "output_dir": str,
    "env": _ENV_FIELDS,
    "cost": _COST_FIELDS,
    "learner": _LEARNER_FIELDS,
    "generalization": _GENERALIZATION_FIELDS,
}

_ENV_KINDS = ("linear", "arm", "pickup")
_COST_KINDS = ("pose", "manipulation", "imitation", "weighted_goal")
_OBS_MODES = ("full", "partial_touch", "proprioceptive")


def _validate_block(path: str, block, fields: dict) -> None:
    if not isinstance(block, dict):
        raise ConfigError(path, f"expected an object, got {type(block).__name__}")
    for key, value in block.items():
        sub_path = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError(sub_path, "unknown key")
        spec = fields[key]
        if isinstance(spec, dict):
            _validate_block(sub_path, value, spec)
        else:
            _check_type(sub_path, value, spec)


def validate_config(config) -> dict:
    """Validate a raw configuration document; returns it unchanged."""
    _validate_block("", config, _TOP_FIELDS)
    if config.get("schema") != CONFIG_SCHEMA:
        raise ConfigError(
            "schema", f"expected {CONFIG_SCHEMA!r}, got {config.get('schema')!r}"
        )
    if "seed" not in config:
        raise ConfigError("seed", "missing required key")
    if "env" not in config:
        raise ConfigError("env", "missing required block")
    kind = config["env"].get("kind")
    if kind not in _ENV_KINDS:
        raise ConfigError("env.kind", f"must be one of {_ENV_KINDS}, got {kind!r}")
    if "cost" in config and config["cost"].get("kind") not in _COST_KINDS:
        raise ConfigError(
            "cost.kind",
            f"must be one of {_COST_KINDS}, got {config['cost'].get('kind')!r}",
        )
    gen = config.get("generalization", {})
    mode = gen.get("cloning", {}).get("observation_mode")
    if mode is not None and mode not in _OBS_MODES:
        raise ConfigError(
            "generalization.cloning.observation_mode",
            f"must be one of {_OBS_MODES}, got {mode!r}",
        )
    return config


# ---------------------------------------------------------------------------
# Presets

_TEN_ANGLES = [round(-math.pi / 2 + i * math.pi / 9, 10) for i in range(10)]
_FOUR_ANGLES = [-1.2, -0.4, 0.4, 1.2]

_PICKUP_LEARNER = {
    "iterations": 10,
    "epsilon_per_step": 0.05,
    "init_cov_scale": 0.05,
    "demo_noise_scale": 0.03,
    "gmm_components": 8,
    "gmm_max_iters": 30,
    "use_demo": True,
}

PRESETS: dict[str, dict] = {
    "linear": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/linear",
        "env": {"kind": "linear", "horizon": 40, "dt": 0.05, "actuator_lag": False},
        "cost": {"kind": "pose", "q_target": [0.0, 0.0]},
        "learner": {"iterations": 15, "init_cov_scale": 1.0},
    },
    "linear-lag": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/linear-lag",
        "env": {"kind": "linear", "horizon": 40, "dt": 0.05, "actuator_lag": True},
        "cost": {"kind": "pose", "q_target": [0.0, 0.0]},
        "learner": {"iterations": 15, "init_cov_scale": 1.0},
    },
    "arm-opposing": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/arm-opposing",
        "env": {"kind": "arm", "gravity_sign": 1},
        "cost": {"kind": "pose", "q_target": [0.35, 0.45]},
        "learner": {"iterations": 15, "init_cov_scale": 0.5},
    },
    "arm-assisted": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/arm-assisted",
        "env": {"kind": "arm", "gravity_sign": -1},
        "cost": {"kind": "pose", "q_target": [0.35, 0.45]},
        "learner": {"iterations": 15, "init_cov_scale": 0.5},
    },
    "arm-robust": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/arm-robust",
        "env": {"kind": "arm", "gravity_sign": 1},
        "cost": {"kind": "pose", "q_target": [0.35, 0.45]},
        "learner": {
            "iterations": 15,
            "init_cov_scale": 0.5,
            "initial_state_noise": 0.05,
            "robustification_start": 10,
        },
    },
    "arm-naive-noise": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/arm-naive-noise",
        "env": {"kind": "arm", "gravity_sign": 1},
        "cost": {"kind": "pose", "q_target": [0.35, 0.45]},
        "learner": {
            "iterations": 15,
            "init_cov_scale": 0.5,
            "initial_state_noise": 0.05,
            "robustification_start": 1,
        },
    },
    "pickup-scratch": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/pickup-scratch",
        "env": {"kind": "pickup", "theta0": 0.35},
        "cost": {
            "kind": "weighted_goal",
            "q_weight": 1.0,
            "control_weight": 0.001,
            "qpos_weight": 50.0,
            "qrot_weight": 10.0,
            "q_target": [-0.08, 0.08, 0.165],
            "qpos_target": [0.12],
            "qrot_target": [0.0],
            "final_scale": 2.0,
        },
        "learner": {
            "iterations": 15,
            "epsilon_per_step": 0.05,
            "init_cov_scale": 0.25,
        },
    },
    "pickup-imitation": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/pickup-imitation",
        "env": {"kind": "pickup", "theta0": 0.35},
        "cost": {"kind": "imitation", "lift_height": 0.12},
        "learner": dict(_PICKUP_LEARNER),
    },
    "library-10": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/library-10",
        "env": {"kind": "pickup"},
        "cost": {"kind": "imitation", "lift_height": 0.12},
        "learner": dict(_PICKUP_LEARNER),
        "generalization": {
            "conditions": _TEN_ANGLES,
            "library_iterations": 10,
            "demo_seed": 11,
        },
    },
    "library-4": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/library-4",
        "env": {"kind": "pickup"},
        "cost": {"kind": "imitation", "lift_height": 0.12},
        "learner": dict(_PICKUP_LEARNER),
        "generalization": {
            "conditions": list(_FOUR_ANGLES),
            "library_iterations": 10,
            "demo_seed": 11,
        },
    },
    "distill-full": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/library-10",
        "env": {"kind": "pickup"},
        "generalization": {
            "cloning": {
                "samples_per_policy": 50,
                "noise_scale": 0.05,
                "observation_mode": "full",
            },
            "mlp": {
                "hidden_layers": 6,
                "width": 150,
                "epochs": 30,
                "batch": 512,
                "lr": 0.015,
            },
        },
    },
    "distill-touch-large": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/library-10",
        "env": {"kind": "pickup"},
        "generalization": {
            "cloning": {
                "samples_per_policy": 50,
                "noise_scale": 0.05,
                "observation_mode": "partial_touch",
            },
            "mlp": {
                "hidden_layers": 6,
                "width": 150,
                "epochs": 30,
                "batch": 512,
                "lr": 0.015,
            },
        },
    },
    "distill-touch-small": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/library-10",
        "env": {"kind": "pickup"},
        "generalization": {
            "cloning": {
                "samples_per_policy": 50,
                "noise_scale": 0.05,
                "observation_mode": "partial_touch",
            },
            "mlp": {
                "hidden_layers": 4,
                "width": 80,
                "epochs": 30,
                "batch": 512,
                "lr": 0.015,
            },
        },
    },
    "distill-proprio": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/library-10",
        "env": {"kind": "pickup"},
        "generalization": {
            "cloning": {
                "samples_per_policy": 50,
                "noise_scale": 0.05,
                "observation_mode": "proprioceptive",
            },
            "mlp": {
                "hidden_layers": 6,
                "width": 150,
                "epochs": 30,
                "batch": 512,
                "lr": 0.015,
            },
        },
    },
    "evaluate-nn": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/library-10",
        "env": {"kind": "pickup"},
        "generalization": {
            "sweep": {
                "policy": "library-nn",
                "conditions": _TEN_ANGLES,
                "trials_per_condition": 100,
                "noise": 0.01,
                "condition_halfwidth": round(math.pi / 18, 10),
            },
        },
    },
    "evaluate-crossval": {
        "schema": CONFIG_SCHEMA,
        "seed": 0,
        "output_dir": "runs/library-4",
        "env": {"kind": "pickup"},
        "generalization": {
            "sweep": {
                "policy": "library-nn",
                "conditions": list(_FOUR_ANGLES),
                "trials_per_condition": 5,
                "noise": 0.01,
                "condition_halfwidth": 0.1,
                "crossval": True,
                "crossval_trials": 10,
            },
        },
    },
}


def preset(name: str, seed: int | None = None, output_dir: str | None = None) -> dict:
    """Deep copy of a named preset, optionally overriding seed/output_dir."""
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    config = copy.deepcopy(PRESETS[name])
    if seed is not None:
        config["seed"] = int(seed)
    if output_dir is not None:
        config["output_dir"] = str(output_dir)
    return validate_config(config)
