"""Experiment commands: training runs, library building, distillation,
evaluation sweeps, and the solver-vs-oracle gate.

Every command validates its configuration first, derives all randomness from
the master seed through labeled streams, and writes artifacts with the
deterministic serializer, so a re-run with the same configuration produces
byte-identical files. Each run directory gets a manifest embedding the full
configuration.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import __version__, rng
from .config import validate_config
from .costs import (
    expand_cost,
    imitation_cost,
    manipulation_cost,
    pose_cost,
    weighted_goal_cost,
)
from .dynamics import NiwStrength
from .envs import arm_env, generate_demo, linear_env, pickup_env, pickup_grasp_plan
from .errors import ConfigError, DemoFailedError
from .generalization import (
    LibraryEntry,
    LibraryNearestNeighborSource,
    LocalPolicyLibrary,
    MlpSource,
    SingleControllerSource,
    evaluate_sweep,
    generate_cloning_data,
    observation_spec,
    train_mlp,
)
from .learner import CURVE_CSV_HEADER, LearnerConfig, train
from .lqg import backward_pass, expected_cost, forward_pass
from .riccati import oracle_for_env, true_dynamics_model
from .serialize import (
    config_hash,
    controller_to_json,
    demonstration_to_json,
    library_from_json,
    library_to_json,
    mlp_from_json,
    mlp_to_json,
    read_json,
    write_csv,
    write_json,
)
from .trajectory import generate_smoothed_noise, rollout

# Oracle-gate tolerances (exit 4 when exceeded).
ORACLE_GAIN_TOLERANCE = 1e-6
ORACLE_COST_TOLERANCE = 0.05


class GateFailure(RuntimeError):
    """An oracle-gate tolerance was exceeded."""


def build_env(config: dict):
    env_cfg = config["env"]
    kind = env_cfg["kind"]
    if kind == "linear":
        kwargs = {}
        for key in ("horizon", "dt", "actuator_lag", "lag_time_constant", "x0", "target"):
            if key in env_cfg:
                kwargs[key] = env_cfg[key]
        return linear_env(**kwargs)
    if kind == "arm":
        if "gravity_sign" not in env_cfg:
            raise ConfigError("env.gravity_sign", "missing required key for arm env")
        kwargs = {"gravity_sign": env_cfg["gravity_sign"]}
        for key in ("horizon", "dt", "x0"):
            if key in env_cfg:
                kwargs[key] = env_cfg[key]
        if "target" in env_cfg:
            kwargs["q_target"] = env_cfg["target"]
        return arm_env(**kwargs)
    kwargs = {}
    for key in ("horizon", "dt", "theta0"):
        if key in env_cfg:
            kwargs[key] = env_cfg[key]
    return pickup_env(**kwargs)


def build_cost(config: dict, env, demo=None):
    cost_cfg = config.get("cost")
    if cost_cfg is None:
        raise ConfigError("cost", "missing required block")
    kind = cost_cfg["kind"]
    if kind == "pose":
        target = cost_cfg.get("q_target")
        if target is None:
            if env.target is None:
                raise ConfigError("cost.q_target", "missing and env declares no target")
            target = env.target
        return pose_cost(env.layout, target)
    if kind == "manipulation":
        return manipulation_cost(
            env.layout,
            cost_cfg["q_target"],
            cost_cfg["qpos_target"],
            cost_cfg["qrot_target"],
        )
    if kind == "weighted_goal":
        return weighted_goal_cost(
            env.layout,
            q_weight=cost_cfg["q_weight"],
            control_weight=cost_cfg["control_weight"],
            qpos_weight=cost_cfg["qpos_weight"],
            qrot_weight=cost_cfg["qrot_weight"],
            q_target=cost_cfg["q_target"],
            qpos_target=cost_cfg["qpos_target"],
            qrot_target=cost_cfg["qrot_target"],
            final_scale=cost_cfg.get("final_scale", 2.0),
        )
    if demo is None:
        raise ConfigError("cost.kind", "imitation cost requires a demonstration")
    return imitation_cost(
        env.layout, demo, cost_cfg.get("lift_height", 0.12), env.horizon
    )


def learner_config(config: dict) -> LearnerConfig:
    block = dict(config.get("learner", {}))
    block.pop("use_demo", None)
    block.pop("demo_noise_scale", None)
    niw = NiwStrength(block.pop("niw_m", 1.0), block.pop("niw_n0", 1.0))
    return LearnerConfig(seed=config["seed"], niw_strength=niw, **block)


def _write_manifest(out: Path, command: str, config: dict, artifacts: list[str]) -> None:
    write_json(
        out / "manifest.json",
        {
            "schema": "trajrl-manifest-v1",
            "command": command,
            "config": config,
            "config_hash": config_hash(config),
            "seed": config["seed"],
            "package_version": __version__,
            "artifacts": sorted(artifacts),
        },
    )


def _curve_artifacts(out: Path, curve) -> list[str]:
    rows = curve.rows()
    write_csv(out / "curve.csv", CURVE_CSV_HEADER, rows)
    write_json(
        out / "curve.json",
        {
            "schema": "trajrl-curve-v1",
            "header": list(CURVE_CSV_HEADER),
            "rows": [list(r) for r in rows],
            "model_cost_prev": [r.model_cost_prev for r in curve.records],
            "stalled": [r.stalled for r in curve.records],
        },
    )
    return ["curve.csv", "curve.json"]


def _resolve_out(config: dict, out_dir=None) -> Path:
    out = Path(out_dir if out_dir is not None else config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train_local(config: dict, out_dir=None) -> Path:
    """Train one local controller and write controller/curve/manifest files."""
    validate_config(config)
    out = _resolve_out(config, out_dir)
    env = build_env(config)
    demo = None
    artifacts = []
    if config.get("learner", {}).get("use_demo"):
        theta0 = config["env"].get("theta0", 0.0)
        demo = generate_demo(
            env,
            pickup_grasp_plan(theta0, env.horizon, env.dt),
            seed=rng.derive_seed(config["seed"], "harness.demo"),
            condition=[theta0],
        )
        write_json(out / "demo.json", demonstration_to_json(demo))
        artifacts.append("demo.json")
    cost = build_cost(config, env, demo)
    demo_noise = config.get("learner", {}).get("demo_noise_scale", 0.03)
    controller, curve = train(
        env, cost, learner_config(config), demo=demo, demo_noise_scale=demo_noise
    )
    write_json(out / "controller.json", controller_to_json(controller))
    artifacts += ["controller.json"] + _curve_artifacts(out, curve)
    _write_manifest(out, "train-local", config, artifacts)
    return out


def cmd_build_library(config: dict, out_dir=None) -> Path:
    """Train one imitation-bootstrapped controller per condition angle."""
    validate_config(config)
    out = _resolve_out(config, out_dir)
    gen_cfg = config.get("generalization", {})
    conditions = gen_cfg.get("conditions")
    if not conditions:
        raise ConfigError("generalization.conditions", "missing condition list")
    iterations = gen_cfg.get("library_iterations", 10)
    demo_seed = gen_cfg.get("demo_seed", 11)
    master = config["seed"]
    demo_noise = config.get("learner", {}).get("demo_noise_scale", 0.03)

    env_kwargs = {
        key: config["env"][key] for key in ("horizon", "dt") if key in config["env"]
    }
    entries = []
    summary_rows = []
    failed = []
    for i, theta0 in enumerate(conditions):
        env = pickup_env(theta0=float(theta0), **env_kwargs)
        try:
            demo = generate_demo(
                env,
                pickup_grasp_plan(theta0, env.horizon, env.dt),
                seed=rng.derive_seed(demo_seed, "library.demo", i),
                condition=[theta0],
            )
        except DemoFailedError as err:
            failed.append((i, float(theta0), str(err)))
            continue
        cost = build_cost(config, env, demo)
        base = learner_config(config)
        cfg_i = LearnerConfig(
            iterations=iterations,
            rollouts_per_iteration=base.rollouts_per_iteration,
            noise_sigma=base.noise_sigma,
            epsilon_per_step=base.epsilon_per_step,
            robustification_start=base.robustification_start,
            initial_state_noise=base.initial_state_noise,
            init_cov_scale=base.init_cov_scale,
            gmm_components=base.gmm_components,
            gmm_max_iters=base.gmm_max_iters,
            niw_strength=base.niw_strength,
            seed=rng.derive_seed(master, "library.train", i),
        )
        controller, curve = train(env, cost, cfg_i, demo=demo, demo_noise_scale=demo_noise)
        entries.append(
            LibraryEntry(
                key=np.array([float(theta0)]), x0=np.array(env.x0), controller=controller
            )
        )
        summary_rows.append(
            (i, float(theta0), curve.mean_costs[-1], int(sum(curve.records[-1].successes)))
        )
    if failed:
        details = "; ".join(f"condition {i} (angle {a:+.3f}): {m}" for i, a, m in failed)
        raise DemoFailedError(f"demonstrations failed: {details}")

    key_indices = (pickup_env().layout.range_of("qrot")[0],)
    library = LocalPolicyLibrary(entries=tuple(entries), key_indices=key_indices)
    write_json(out / "library.json", library_to_json(library))
    write_csv(
        out / "library_build.csv",
        ("condition", "angle", "final_mean_cost", "final_successes"),
        summary_rows,
    )
    _write_manifest(out, "build-library", config, ["library.json", "library_build.csv"])
    return out


def _mlp_filename(mode: str, hidden_layers: int, width: int) -> str:
    return f"policy-{mode}-{hidden_layers}x{width}.json"


def cmd_distill(config: dict, out_dir=None) -> Path:
    """Clone a policy library into an MLP under an observation mode."""
    validate_config(config)
    out = _resolve_out(config, out_dir)
    library_path = out / "library.json"
    if not library_path.exists():
        raise FileNotFoundError(f"no library artifact at {library_path}")
    library = library_from_json(read_json(library_path))
    env = build_env(config)
    gen_cfg = config.get("generalization", {})
    clone_cfg = gen_cfg.get("cloning", {})
    mlp_cfg = gen_cfg.get("mlp", {})
    mode = clone_cfg.get("observation_mode", "full")
    spec = observation_spec(env, mode)
    data = generate_cloning_data(
        library,
        env,
        spec,
        samples_per_policy=clone_cfg.get("samples_per_policy", 50),
        noise_scale=clone_cfg.get("noise_scale", 0.05),
        seed=rng.derive_seed(config["seed"], "harness.clone"),
    )
    policy = train_mlp(
        data,
        hidden_layers=mlp_cfg.get("hidden_layers", 6),
        width=mlp_cfg.get("width", 150),
        epochs=mlp_cfg.get("epochs", 40),
        batch=mlp_cfg.get("batch", 256),
        lr=mlp_cfg.get("lr", 0.01),
        seed=rng.derive_seed(config["seed"], "harness.mlp"),
    )
    name = _mlp_filename(mode, mlp_cfg.get("hidden_layers", 6), mlp_cfg.get("width", 150))
    write_json(out / name, mlp_to_json(policy, mode))
    loss_name = name.replace(".json", "-loss.csv")
    write_csv(
        out / loss_name,
        ("epoch", "loss"),
        list(enumerate(policy.loss_history)),
    )
    _write_manifest(out, "distill", config, [name, loss_name])
    return out / name


def _sweep_source(policy_name: str, out: Path, env, reset_to_nearest: bool):
    if policy_name == "library-nn":
        library = library_from_json(read_json(out / "library.json"))
        return LibraryNearestNeighborSource(library, reset_to_nearest), library
    if policy_name.startswith("local:"):
        library = library_from_json(read_json(out / "library.json"))
        index = int(policy_name.split(":", 1)[1])
        return SingleControllerSource(library.entries[index].controller), library
    if policy_name.startswith("mlp:"):
        payload = read_json(out / policy_name.split(":", 1)[1])
        policy, mode = mlp_from_json(payload)
        return MlpSource(policy, observation_spec(env, mode)), None
    raise ConfigError("generalization.sweep.policy", f"unknown policy {policy_name!r}")


def cmd_evaluate(config: dict, out_dir=None) -> Path:
    """Run a success-rate sweep (and optionally a cross-validation matrix)."""
    validate_config(config)
    out = _resolve_out(config, out_dir)
    env = build_env(config)
    gen_cfg = config.get("generalization", {})
    sweep_cfg = gen_cfg.get("sweep")
    if not sweep_cfg:
        raise ConfigError("generalization.sweep", "missing sweep block")
    source, library = _sweep_source(
        sweep_cfg.get("policy", "library-nn"),
        out,
        env,
        sweep_cfg.get("reset_to_nearest", False),
    )
    conditions = [[c] for c in sweep_cfg["conditions"]]
    key_indices = (env.layout.range_of("qrot")[0],)
    result = evaluate_sweep(
        source,
        env,
        conditions,
        trials_per_condition=sweep_cfg.get("trials_per_condition", 100),
        noise=sweep_cfg.get("noise", 0.01),
        seed=rng.derive_seed(config["seed"], "harness.sweep"),
        condition_indices=key_indices,
        condition_halfwidth=sweep_cfg.get("condition_halfwidth", 0.0),
    )
    rows = [
        (int(ci), float(result.condition_value[j, 0]), bool(s), float(c))
        for j, (ci, s, c) in enumerate(
            zip(result.condition_index, result.success, result.cost)
        )
    ]
    write_csv(out / "sweep.csv", ("condition", "angle", "success", "cost"), rows)
    summary = {
        "schema": "trajrl-sweep-v1",
        "policy": sweep_cfg.get("policy", "library-nn"),
        "overall_success_rate": result.overall_success_rate,
        "per_condition_success": result.per_condition_success(),
        "conditions": [c[0] for c in conditions],
    }
    artifacts = ["sweep.csv", "summary.json"]

    if sweep_cfg.get("crossval") and library is not None:
        matrix_rows = []
        trials = sweep_cfg.get("crossval_trials", 10)
        for pi, entry in enumerate(library.entries):
            cells = []
            for ci, cond in enumerate(conditions):
                res = evaluate_sweep(
                    SingleControllerSource(entry.controller),
                    env,
                    [cond],
                    trials_per_condition=sweep_cfg.get("trials_per_condition", 5),
                    noise=sweep_cfg.get("noise", 0.01),
                    seed=rng.derive_seed(config["seed"], "harness.crossval", pi, ci),
                    condition_indices=key_indices,
                    condition_halfwidth=sweep_cfg.get("condition_halfwidth", 0.0),
                )
                cells.append(res.overall_success_rate)
            lo = min(c[0] for c in conditions)
            hi = max(c[0] for c in conditions)
            rand = evaluate_sweep(
                SingleControllerSource(entry.controller),
                env,
                [[0.5 * (lo + hi)]],
                trials_per_condition=trials,
                noise=sweep_cfg.get("noise", 0.01),
                seed=rng.derive_seed(config["seed"], "harness.crossval.random", pi),
                condition_indices=key_indices,
                condition_halfwidth=0.5 * (hi - lo),
            )
            matrix_rows.append((f"local-{pi}", *cells, rand.overall_success_rate))
        header = (
            "policy",
            *(f"condition_{i}" for i in range(len(conditions))),
            "random",
        )
        write_csv(out / "crossval.csv", header, matrix_rows)
        artifacts.append("crossval.csv")

    write_json(out / "summary.json", summary)
    _write_manifest(out, "evaluate", config, artifacts)
    return out


def cmd_oracle(config: dict, out_dir=None) -> Path:
    """Compare the solver against the independent Riccati recursion.

    Gain check: the unconstrained backward pass on the true dynamics must
    match the oracle's feedback law. Cost check: a full training run's final
    model-expected cost must land within 5% of the oracle optimum. Exceeding
    either tolerance raises ``GateFailure``.
    """
    validate_config(config)
    out = _resolve_out(config, out_dir)
    env = build_env(config)
    if env.true_affine is None:
        raise ConfigError("env.kind", "oracle command requires the linear env")
    cost = build_cost(config, env)
    oracle = oracle_for_env(env, cost)
    dyn = true_dynamics_model(env)

    # Expansion points are irrelevant for the exactly quadratic task costs.
    probe = rollout(
        env,
        _unit_probe_controller(env),
        env.x0,
        generate_smoothed_noise(env.horizon, env.d_u, 2.0, 0),
    )
    expansion = expand_cost(cost, [probe])
    ctrl, _ = backward_pass(dyn, expansion, prev=None)
    gain_delta = float(np.max(np.abs(ctrl.K - oracle.K)))
    offset_delta = float(np.max(np.abs(ctrl.k - oracle.k)))

    optimal = oracle.optimal_cost(env.x0)
    controller, curve = train(env, cost, learner_config(config))
    final_model_cost = float(curve.model_costs[-1])
    cost_delta = abs(final_model_cost - optimal) / abs(optimal)

    report = {
        "schema": "trajrl-oracle-v1",
        "gain_delta": gain_delta,
        "offset_delta": offset_delta,
        "gain_tolerance": ORACLE_GAIN_TOLERANCE,
        "oracle_optimal_cost": optimal,
        "final_model_cost": final_model_cost,
        "cost_delta_relative": cost_delta,
        "cost_tolerance": ORACLE_COST_TOLERANCE,
        "passed": bool(
            gain_delta < ORACLE_GAIN_TOLERANCE and cost_delta < ORACLE_COST_TOLERANCE
        ),
    }
    write_json(out / "oracle_report.json", report)
    _write_manifest(out, "oracle", config, ["oracle_report.json"])
    if not report["passed"]:
        raise GateFailure(
            f"oracle gate failed: gain_delta={gain_delta:.3g}, "
            f"cost_delta={cost_delta:.3g}"
        )
    return out / "oracle_report.json"


def _unit_probe_controller(env):
    from .lqg import init_controller

    return init_controller(env.horizon, env.d_x, env.d_u, 1.0)


def cmd_export_curves(run_dir) -> Path:
    """Regenerate curve.csv from a run directory's curve.json."""
    run = Path(run_dir)
    payload = read_json(run / "curve.json")
    write_csv(run / "curve.csv", payload["header"], payload["rows"])
    return run / "curve.csv"
