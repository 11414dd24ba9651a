"""Trajectory-centric model-based reinforcement learning toolkit.

Learns time-varying linear-Gaussian controllers from rollouts via
KL-constrained iterative LQG with fitted local linear dynamics, bootstraps
hard tasks from scripted demonstrations, and generalizes libraries of local
controllers through nearest-neighbor selection and MLP distillation. Ships
with analytic benchmark environments and an independent Riccati oracle for
verification.
"""

__version__ = "0.1.0"

from .costs import (
    CostExpansion,
    FunctionCost,
    QuadraticGoalCost,
    expand_cost,
    imitation_cost,
    manipulation_cost,
    pose_cost,
    weighted_goal_cost,
)
from .dynamics import (
    GmmPrior,
    LinearGaussianDynamics,
    NiwStrength,
    condition_gaussian,
    fit_dynamics,
    fit_gmm,
)
from .envs import (
    Environment,
    StateLayout,
    arm_env,
    generate_demo,
    linear_env,
    pickup_env,
    pickup_grasp_plan,
    teleop_map,
)
from .generalization import (
    CloningDataset,
    LocalPolicyLibrary,
    MlpPolicy,
    ObservationSpec,
    evaluate_sweep,
    generate_cloning_data,
    mlp_act,
    nearest_neighbor_select,
    observation_spec,
    observe,
    train_mlp,
)
from .learner import LearnerConfig, LearningCurve, bootstrap_from_demo, train
from .lqg import (
    DualState,
    LinearGaussianController,
    TrajectoryDistribution,
    backward_pass,
    expected_cost,
    forward_pass,
    init_controller,
    kl_trajectory,
    solve_kl_constrained,
)
from .riccati import oracle_for_env, solve_riccati, true_dynamics_model
from .trajectory import (
    Demonstration,
    NoiseMatrix,
    Trajectory,
    generate_smoothed_noise,
    rollout,
    score_trajectory,
    trajectory_total_cost,
)
