"""Deterministic JSON/CSV serialization of every artifact.

Floating-point numbers are rendered with 17 significant digits, which
round-trips IEEE-754 doubles exactly, so re-running a command with the same
seed reproduces artifact files byte for byte. Matrices are stored row-major
as nested lists.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .dynamics import LinearGaussianDynamics
from .generalization import (
    CloningDataset,
    LibraryEntry,
    LocalPolicyLibrary,
    MlpPolicy,
)
from .lqg import DualState, LinearGaussianController
from .trajectory import Demonstration, Trajectory

SCHEMA_VERSION = "trajrl-artifact-v1"


def render_float(x: float) -> str:
    return format(float(x), ".17g")


def _render(value, out: list[str]) -> None:
    if isinstance(value, dict):
        out.append("{")
        for i, (key, item) in enumerate(value.items()):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)))
            out.append(":")
            _render(item, out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _render(item, out)
        out.append("]")
    elif isinstance(value, np.ndarray):
        _render(value.tolist(), out)
    elif isinstance(value, (bool, np.bool_)):
        out.append("true" if value else "false")
    elif isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        out.append(render_float(value))
    elif value is None:
        out.append("null")
    elif isinstance(value, str):
        out.append(json.dumps(value))
    else:
        raise TypeError(f"cannot serialize value of type {type(value).__name__}")


def dumps_json(obj) -> str:
    out: list[str] = []
    _render(obj, out)
    return "".join(out)


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path, header, rows) -> None:
    """CSV with the same deterministic float rendering as the JSON writer."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (bool, np.bool_)):
                cells.append("1" if cell else "0")
            elif isinstance(cell, (float, np.floating)):
                cells.append(render_float(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def config_hash(config: dict) -> str:
    return hashlib.sha256(dumps_json(config).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Artifact payloads


def trajectory_to_json(traj: Trajectory) -> dict:
    payload = {
        "T": traj.horizon,
        "states": traj.states,
        "actions": traj.actions,
    }
    payload["costs"] = traj.step_costs if traj.step_costs is not None else None
    return payload


def trajectory_from_json(payload: dict) -> Trajectory:
    costs = payload.get("costs")
    return Trajectory(
        states=np.asarray(payload["states"], dtype=float),
        actions=np.asarray(payload["actions"], dtype=float),
        step_costs=None if costs is None else np.asarray(costs, dtype=float),
    )


def demonstration_to_json(demo: Demonstration) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "demonstration",
        "source": demo.source,
        "condition": demo.condition,
        "trajectory": trajectory_to_json(demo.trajectory),
    }


def demonstration_from_json(payload: dict) -> Demonstration:
    return Demonstration(
        trajectory=trajectory_from_json(payload["trajectory"]),
        source=payload["source"],
        condition=np.asarray(payload["condition"], dtype=float),
    )


def controller_to_json(ctrl: LinearGaussianController, dual: DualState | None = None) -> dict:
    payload = {
        "schema": SCHEMA_VERSION,
        "kind": "linear_gaussian_controller",
        "T": ctrl.horizon,
        "d_x": ctrl.d_x,
        "d_u": ctrl.d_u,
        "K": ctrl.K,
        "k": ctrl.k,
        "C": ctrl.C,
    }
    if dual is not None:
        payload["dual"] = {
            "eta": dual.eta,
            "eta_low": dual.eta_low,
            "eta_high": dual.eta_high,
            "iterations": dual.iterations,
            "kl": dual.kl,
            "epsilon": dual.epsilon,
            "stalled": dual.stalled,
        }
    return payload


def controller_from_json(payload: dict) -> LinearGaussianController:
    return LinearGaussianController(
        K=np.asarray(payload["K"], dtype=float),
        k=np.asarray(payload["k"], dtype=float),
        C=np.asarray(payload["C"], dtype=float),
    )


def dynamics_to_json(dyn: LinearGaussianDynamics) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "linear_gaussian_dynamics",
        "T": dyn.horizon,
        "d_x": dyn.d_x,
        "d_u": dyn.d_u,
        "f_x": dyn.f_x,
        "f_u": dyn.f_u,
        "f_c": dyn.f_c,
        "F": dyn.F,
        "diagnostics": {"ridge_activations": dyn.ridge_activations},
    }


def dynamics_from_json(payload: dict) -> LinearGaussianDynamics:
    return LinearGaussianDynamics(
        f_x=np.asarray(payload["f_x"], dtype=float),
        f_u=np.asarray(payload["f_u"], dtype=float),
        f_c=np.asarray(payload["f_c"], dtype=float),
        F=np.asarray(payload["F"], dtype=float),
        ridge_activations=np.asarray(
            payload["diagnostics"]["ridge_activations"], dtype=bool
        ),
    )


def library_to_json(lib: LocalPolicyLibrary) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "local_policy_library",
        "key_indices": list(lib.key_indices),
        "entries": [
            {
                "key": entry.key,
                "x0": entry.x0,
                "controller": controller_to_json(entry.controller),
            }
            for entry in lib.entries
        ],
    }


def library_from_json(payload: dict) -> LocalPolicyLibrary:
    entries = tuple(
        LibraryEntry(
            key=np.asarray(item["key"], dtype=float),
            x0=np.asarray(item["x0"], dtype=float),
            controller=controller_from_json(item["controller"]),
        )
        for item in payload["entries"]
    )
    return LocalPolicyLibrary(entries=entries, key_indices=tuple(payload["key_indices"]))


def mlp_to_json(policy: MlpPolicy, observation_mode: str) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "mlp_policy",
        "observation_mode": observation_mode,
        "layer_dims": [policy.weights[0].shape[0]]
        + [w.shape[1] for w in policy.weights],
        "weights": [w for w in policy.weights],
        "biases": [b for b in policy.biases],
        "input_mean": policy.input_mean,
        "input_std": policy.input_std,
        "training": {
            "epochs": policy.epochs,
            "final_loss": policy.final_loss,
            "seed": policy.seed,
        },
    }


def mlp_from_json(payload: dict) -> tuple[MlpPolicy, str]:
    policy = MlpPolicy(
        weights=tuple(np.asarray(w, dtype=float) for w in payload["weights"]),
        biases=tuple(np.asarray(b, dtype=float) for b in payload["biases"]),
        input_mean=np.asarray(payload["input_mean"], dtype=float),
        input_std=np.asarray(payload["input_std"], dtype=float),
        epochs=int(payload["training"]["epochs"]),
        final_loss=float(payload["training"]["final_loss"]),
        seed=int(payload["training"]["seed"]),
    )
    return policy, payload["observation_mode"]


def cloning_dataset_to_json(data: CloningDataset) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "cloning_dataset",
        "observations": data.observations,
        "actions": data.actions,
        "policy_index": data.policy_index,
        "timestep": data.timestep,
    }
