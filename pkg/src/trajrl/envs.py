"""Analytic desk-scale environments and the scripted demonstration pipeline.

Three environments cover the verification needs of the learner:

* ``linear_env`` -- a 2-D double integrator (optionally with first-order
  actuator lag), exactly linear so a Riccati oracle applies.
* ``arm_env`` -- a planar two-link arm with configuration-dependent gravity
  that either assists or opposes the target motion.
* ``pickup_env`` -- a gripper toy with a sharply discontinuous grasp
  condition and delayed reward: two fingers on a rail must pinch a rod whose
  graspable ends depend on its orientation, then lift it with the wrist.

Environment ``step`` functions are pure: graspedness in the pickup toy is
re-derived from the state/action each step rather than stored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DemoFailedError
from .trajectory import (
    Demonstration,
    NoiseMatrix,
    Trajectory,
    _frozen_array,
    generate_smoothed_noise,
)

Array = np.ndarray


@dataclass(frozen=True)
class StateLayout:
    """Named index ranges into the state vector, e.g. ``q`` or ``qpos``."""

    d_x: int
    ranges: tuple[tuple[str, int, int], ...]

    def has(self, name: str) -> bool:
        return any(r[0] == name for r in self.ranges)

    def range_of(self, name: str) -> tuple[int, int]:
        for key, start, stop in self.ranges:
            if key == name:
                return start, stop
        raise KeyError(f"layout has no range named {name!r}")

    def indices(self, name: str) -> np.ndarray:
        start, stop = self.range_of(name)
        return np.arange(start, stop)


@dataclass(frozen=True)
class Environment:
    """Immutable environment description with a pure step function."""

    name: str
    d_x: int
    d_u: int
    horizon: int
    dt: float
    x0: Array
    state_range: Array
    layout: StateLayout
    step_fn: Callable[[Array, Array], Array]
    success_fn: Callable[[Trajectory], bool]
    u_min: Array | None = None
    u_max: Array | None = None
    touch_fn: Callable[[Array], Array] | None = None
    target: Array | None = None
    true_affine: tuple[Array, Array, Array] | None = None  # diagnostics only
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "x0", _frozen_array(self.x0))
        object.__setattr__(self, "state_range", _frozen_array(self.state_range))

    def clamp(self, u: Array) -> Array:
        if self.u_min is None and self.u_max is None:
            return u
        return np.clip(u, self.u_min, self.u_max)

    def step(self, x: Array, u: Array) -> Array:
        """Advance one timestep; controls are clamped to the declared bounds."""
        return self.step_fn(np.asarray(x, dtype=float), self.clamp(np.asarray(u, dtype=float)))

    def success(self, traj: Trajectory) -> bool:
        return bool(self.success_fn(traj))

    def touch(self, x: Array) -> Array:
        if self.touch_fn is None:
            raise ValueError(f"environment {self.name!r} has no touch features")
        return self.touch_fn(x)

    @property
    def n_touch(self) -> int:
        return 0 if self.touch_fn is None else len(self.touch_fn(self.x0))


# ---------------------------------------------------------------------------
# Linear benchmark


def linear_env(
    horizon: int = 40,
    dt: float = 0.05,
    actuator_lag: bool = False,
    lag_time_constant: float = 0.020,
    x0=(1.0, 0.5, 0.0, 0.0),
    target=(0.0, 0.0),
) -> Environment:
    """2-D double integrator, optionally with first-order actuator lag.

    Without lag: ``v' = v + dt u``, ``p' = p + dt v'``. With lag the force is
    an extra state pair ``a`` with ``a' = a + (dt / tau) (u - a)`` and the
    velocity integrates ``a'``. Controls are unclamped so the system is
    exactly linear; the true ``(A, B, c)`` triple is exposed for oracle use
    only through ``true_affine``.
    """
    if actuator_lag:
        d_x = 6
        r = dt / lag_time_constant
        A = np.eye(d_x)
        B = np.zeros((d_x, 2))
        I2 = np.eye(2)
        # a' = (1 - r) a + r u ; v' = v + dt a' ; p' = p + dt v'
        A[4:6, 4:6] = (1 - r) * I2
        B[4:6] = r * I2
        A[2:4, 4:6] = dt * (1 - r) * I2
        B[2:4] = dt * r * I2
        A[0:2, 2:4] = dt * I2
        A[0:2, 4:6] = dt * dt * (1 - r) * I2
        B[0:2] = dt * dt * r * I2
        ranges = (("q", 0, 2), ("qdot", 2, 4), ("a", 4, 6))
        x0_full = np.concatenate([np.asarray(x0, dtype=float), np.zeros(2)])
        state_range = np.array([2.0, 2.0, 2.0, 2.0, 2.0, 2.0])
    else:
        d_x = 4
        A = np.eye(d_x)
        B = np.zeros((d_x, 2))
        I2 = np.eye(2)
        A[2:4, 2:4] = I2
        B[2:4] = dt * I2
        A[0:2, 2:4] = dt * I2
        B[0:2] = dt * dt * I2
        ranges = (("q", 0, 2), ("qdot", 2, 4))
        x0_full = np.asarray(x0, dtype=float)
        state_range = np.array([2.0, 2.0, 2.0, 2.0])
    c = np.zeros(d_x)
    target = np.asarray(target, dtype=float)

    def step(x: Array, u: Array) -> Array:
        return A @ x + B @ u + c

    def success(traj: Trajectory) -> bool:
        final = traj.states[-1]
        return bool(
            np.max(np.abs(final[0:2] - target)) <= 0.05
            and np.max(np.abs(final[2:4])) <= 0.05
        )

    return Environment(
        name="linear-lag" if actuator_lag else "linear",
        d_x=d_x,
        d_u=2,
        horizon=horizon,
        dt=dt,
        x0=x0_full,
        state_range=state_range,
        layout=StateLayout(d_x, ranges),
        step_fn=step,
        success_fn=success,
        target=target,
        true_affine=(A, B, c),
        params={"dt": dt, "lag_time_constant": lag_time_constant},
    )


# ---------------------------------------------------------------------------
# Planar two-link arm

_ARM_INERTIA = np.array([1.0, 0.6])
_ARM_GRAVITY_COEFF = (2.0, 0.8)
_ARM_G0 = 2.0
_ARM_U_MAX = 6.0
_ARM_SUCCESS_TOL = 0.1
ARM_SHOULDER_STOP = -1.95  # hard range-of-motion limit below the hanging pose


def arm_env(
    gravity_sign: int,
    horizon: int = 40,
    dt: float = 0.05,
    x0=(-math.pi / 2, 0.0, 0.0, 0.0),
    q_target=(0.35, 0.45),
) -> Environment:
    """Planar 2-link arm under torque control with semi-implicit Euler.

    The arm starts at rest hanging straight down (a gravity equilibrium) and
    must raise itself to the target pose. With ``gravity_sign=+1`` the
    raising motion fights gravity; ``-1`` flips the field so it assists.
    The shoulder has a hard stop below the hanging pose that zeroes its
    velocity on contact. Inertia is constant and diagonal with no friction,
    so with gravity and torque both zero the joint velocities are conserved
    exactly away from the stop.
    """
    if gravity_sign not in (-1, 1):
        raise ValueError(f"gravity_sign must be -1 or +1, got {gravity_sign}")
    q_target = np.asarray(q_target, dtype=float)
    a1, a2 = _ARM_GRAVITY_COEFF
    u_lim = np.full(2, _ARM_U_MAX)

    def gravity_torque(q: Array) -> Array:
        shoulder = a1 * math.cos(q[0]) + a2 * math.cos(q[0] + q[1])
        elbow = a2 * math.cos(q[0] + q[1])
        return gravity_sign * _ARM_G0 * np.array([shoulder, elbow])

    def step(x: Array, u: Array) -> Array:
        q, qd = x[0:2], x[2:4]
        qdd = (u - gravity_torque(q)) / _ARM_INERTIA
        qd_next = qd + dt * qdd
        q_next = q + dt * qd_next
        if q_next[0] < ARM_SHOULDER_STOP:
            q_next = q_next.copy()
            qd_next = qd_next.copy()
            q_next[0] = ARM_SHOULDER_STOP
            qd_next[0] = 0.0
        return np.concatenate([q_next, qd_next])

    def success(traj: Trajectory) -> bool:
        final_q = traj.states[-1][0:2]
        return bool(np.max(np.abs(final_q - q_target)) <= _ARM_SUCCESS_TOL)

    return Environment(
        name=f"arm{'+' if gravity_sign > 0 else '-'}",
        d_x=4,
        d_u=2,
        horizon=horizon,
        dt=dt,
        x0=np.asarray(x0, dtype=float),
        state_range=np.array([2.5, 2.5, 6.0, 6.0]),
        layout=StateLayout(4, (("q", 0, 2), ("qdot", 2, 4))),
        step_fn=step,
        success_fn=success,
        u_min=-u_lim,
        u_max=u_lim,
        target=q_target,
        params={"gravity_sign": float(gravity_sign), "dt": dt},
    )


def arm_pd_oracle(
    env: Environment,
    kp: float = 25.0,
    kd: float = 10.0,
    ramp_fraction: float | None = None,
) -> Trajectory:
    """Gravity-compensated PD tracking of a ramped reference pose.

    Test oracle only: it reads the environment's gravity model through its
    parameters, which the learner never does. The reference ramps from the
    initial pose to the target; the assisted-gravity case defaults to a
    slower ramp because braking authority at the torque clamp is the binding
    constraint there.
    """
    gravity_sign = env.params["gravity_sign"]
    a1, a2 = _ARM_GRAVITY_COEFF
    q_start = np.array(env.x0[0:2])
    q_target = env.target
    if ramp_fraction is None:
        ramp_fraction = 0.75 if gravity_sign > 0 else 0.85
    ramp_steps = max(1, int(ramp_fraction * env.horizon))

    def act(x, t):
        q, qd = x[0:2], x[2:4]
        gravity = gravity_sign * _ARM_G0 * np.array(
            [
                a1 * math.cos(q[0]) + a2 * math.cos(q[0] + q[1]),
                a2 * math.cos(q[0] + q[1]),
            ]
        )
        frac = min(1.0, (t + 1) / ramp_steps)
        q_ref = q_start + frac * (q_target - q_start)
        return kp * (q_ref - q) - kd * qd + gravity

    x = np.array(env.x0)
    states = np.empty((env.horizon + 1, env.d_x))
    actions = np.empty((env.horizon, env.d_u))
    states[0] = x
    for t in range(env.horizon):
        u = act(x, t)
        actions[t] = u
        x = env.step(x, u)
        states[t + 1] = x
    return Trajectory(states, actions)


# ---------------------------------------------------------------------------
# Pickup toy

# State: [f_L, f_R, w, theta, z, fdot_L, fdot_R, wdot, thetadot, zdot]
PICKUP_HALF_LEN = 0.10  # rod half length projected at theta = 0
PICKUP_PIVOT_OFF = 0.12  # perpendicular offset of the rod center from its pivot
PICKUP_ZONE_BASE = 0.025
PICKUP_TOUCH_TOL = 0.05
PICKUP_SQUEEZE_GAIN = 0.05  # commanded closing rate per unit net inward force
PICKUP_SQUEEZE_MIN = 0.004  # closing-rate threshold for a grasp
PICKUP_ALIGN_DECAY = 0.25  # per-step fraction of theta removed while held aloft
PICKUP_ALIGN_MIN_HEIGHT = 0.01  # rod realigns only once clearly off the table
PICKUP_GRAVITY = 2.5
PICKUP_U_MAX = 4.0
PICKUP_LIFT_HEIGHT = 0.12
PICKUP_THETA_TOL = 0.1
PICKUP_VEL_TOL = 0.1
_PICKUP_FINGER_MASS = 0.05
_PICKUP_FINGER_DAMP = 2.0
_PICKUP_WRIST_MASS = 0.08
_PICKUP_WRIST_DAMP = 1.2
_PICKUP_W_MAX = 0.35
_PICKUP_HOLD_GAP = (-0.05, 2 * PICKUP_HALF_LEN + 0.1)


def pickup_rod_ends(theta: float) -> tuple[float, float]:
    """Rail coordinates of the rod's graspable ends at orientation ``theta``.

    The rod is mounted off-center on its pivot, so rotating it both shrinks
    the projected span and translates it along the rail.
    """
    mid = -PICKUP_PIVOT_OFF * math.sin(theta)
    half = PICKUP_HALF_LEN * math.cos(theta)
    return mid - half, mid + half


def pickup_grasp_zone(theta: float) -> float:
    """Half-width of the grasp zone around each end; tighter when rotated."""
    return PICKUP_ZONE_BASE * (0.85 + 0.15 * math.cos(theta))


def _pickup_zone_ok(x: Array) -> bool:
    e_l, e_r = pickup_rod_ends(x[3])
    zone = pickup_grasp_zone(x[3])
    return abs(x[0] - e_l) <= zone and abs(x[1] - e_r) <= zone


def _pickup_squeeze_rate(u: Array) -> float:
    # The fingers are force controlled with saturating compliance: when the
    # rod blocks them, the drive rate below is what "closing" means.
    return PICKUP_SQUEEZE_GAIN * (u[0] - u[1])


def _pickup_grasped(x: Array, u: Array) -> bool:
    if _pickup_squeeze_rate(u) < PICKUP_SQUEEZE_MIN:
        return False
    if _pickup_zone_ok(x):
        return True
    gap = x[1] - x[0]
    return x[4] > 1e-9 and _PICKUP_HOLD_GAP[0] <= gap <= _PICKUP_HOLD_GAP[1]


def pickup_env(horizon: int = 80, dt: float = 0.05, theta0: float = 0.0) -> Environment:
    """Gripper toy with a discontinuous grasp condition and delayed reward.

    Two fingers slide on a rail; the rod is grasped at a step iff both
    fingers are inside the orientation-dependent zones around its ends and
    the commanded closing rate exceeds a threshold (an on-table rod already
    held aloft stays grasped while the squeeze persists). While grasped the
    rod's height rides the wrist, its orientation decays toward zero, and
    the fingers hold their positions against it; otherwise it falls and
    clamps at the table. Success requires the final rod height and alignment
    with near-zero object velocity.
    """

    def step(x: Array, u: Array) -> Array:
        # Damping is integrated implicitly so the viscous term stays stable
        # for any dt * damp / mass.
        nxt = np.empty(10)
        w, wd = x[2], x[7]
        wd_next = (wd + dt * u[2] / _PICKUP_WRIST_MASS) / (
            1.0 + dt * _PICKUP_WRIST_DAMP / _PICKUP_WRIST_MASS
        )
        w_next = w + dt * wd_next
        if w_next < 0.0 or w_next > _PICKUP_W_MAX:
            w_next = min(max(w_next, 0.0), _PICKUP_W_MAX)
            wd_next = 0.0
        nxt[2], nxt[7] = w_next, wd_next

        if _pickup_grasped(x, u):
            # Fingers hold the rod; velocity states report the squeeze drive.
            nxt[0], nxt[1] = x[0], x[1]
            nxt[5], nxt[6] = 0.0, 0.0
            aloft = x[4] > PICKUP_ALIGN_MIN_HEIGHT
            theta_next = x[3] * (1.0 - PICKUP_ALIGN_DECAY) if aloft else x[3]
            nxt[3] = theta_next
            nxt[8] = (theta_next - x[3]) / dt
            z_next = max(0.0, x[4] + (w_next - w))
            nxt[4] = z_next
            nxt[9] = (z_next - x[4]) / dt
        else:
            for i, (f, fd, force) in enumerate(((x[0], x[5], u[0]), (x[1], x[6], u[1]))):
                fd_next = (fd + dt * force / _PICKUP_FINGER_MASS) / (
                    1.0 + dt * _PICKUP_FINGER_DAMP / _PICKUP_FINGER_MASS
                )
                nxt[i] = f + dt * fd_next
                nxt[5 + i] = fd_next
            nxt[3] = x[3]
            nxt[8] = 0.0
            if x[4] > 0.0:
                zd_next = x[9] - dt * PICKUP_GRAVITY
                z_next = x[4] + dt * zd_next
                if z_next <= 0.0:
                    z_next, zd_next = 0.0, 0.0
                nxt[4], nxt[9] = z_next, zd_next
            else:
                nxt[4], nxt[9] = 0.0, 0.0
        return nxt

    def success(traj: Trajectory) -> bool:
        final = traj.states[-1]
        return bool(
            final[4] >= PICKUP_LIFT_HEIGHT
            and abs(final[3]) <= PICKUP_THETA_TOL
            and abs(final[9]) <= PICKUP_VEL_TOL
            and abs(final[8]) <= PICKUP_VEL_TOL
        )

    def touch(x: Array) -> Array:
        e_l, e_r = pickup_rod_ends(x[3])
        return np.array(
            [
                1.0 if abs(x[0] - e_l) <= PICKUP_TOUCH_TOL else 0.0,
                1.0 if abs(x[1] - e_r) <= PICKUP_TOUCH_TOL else 0.0,
            ]
        )

    x0 = np.array([-0.3, 0.3, 0.02, theta0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    u_lim = np.full(3, PICKUP_U_MAX)
    layout = StateLayout(
        10,
        (
            ("q", 0, 3),
            ("qrot", 3, 4),
            ("qpos", 4, 5),
            ("qdot", 5, 8),
            ("qrotdot", 8, 9),
            ("qposdot", 9, 10),
        ),
    )
    return Environment(
        name="pickup",
        d_x=10,
        d_u=3,
        horizon=horizon,
        dt=dt,
        x0=x0,
        state_range=np.array(
            [0.6, 0.6, 0.35, math.pi, 0.3, 2.0, 2.0, 2.0, 2.0, 2.0]
        ),
        layout=layout,
        step_fn=step,
        success_fn=success,
        u_min=-u_lim,
        u_max=u_lim,
        touch_fn=touch,
        params={"dt": dt, "theta0": theta0},
    )


# ---------------------------------------------------------------------------
# Scripted teleoperation expert


def teleop_map(q: Array, q_c: Array, J_tendon: Array, gains: Array) -> Array:
    """Map a joint-space error to actuator commands: ``gains * (J (q - q_c))``.

    For the direct-drive toys ``J_tendon = -I``, which makes positive output
    drive the joints toward the commanded configuration.
    """
    q = np.asarray(q, dtype=float)
    q_c = np.asarray(q_c, dtype=float)
    J_tendon = np.asarray(J_tendon, dtype=float)
    gains = np.asarray(gains, dtype=float)
    return gains * (J_tendon @ (q - q_c))


@dataclass(frozen=True)
class Waypoint:
    """Commanded actuated-joint configuration at a time in seconds."""

    time: float
    q_c: Array

    def __post_init__(self):
        object.__setattr__(self, "q_c", _frozen_array(self.q_c))


def interpolate_waypoints(plan: list[Waypoint], t_query: float) -> Array:
    if t_query <= plan[0].time:
        return plan[0].q_c
    for a, b in zip(plan, plan[1:]):
        if t_query <= b.time:
            frac = (t_query - a.time) / (b.time - a.time)
            return (1 - frac) * a.q_c + frac * b.q_c
    return plan[-1].q_c


def _merge_channels(*channels: list[tuple[float, float]]) -> list[Waypoint]:
    """Combine per-channel piecewise-linear knots into one waypoint list."""
    times = sorted({t for channel in channels for t, _ in channel})

    def value_at(channel, t_query):
        if t_query <= channel[0][0]:
            return channel[0][1]
        for (t0, v0), (t1, v1) in zip(channel, channel[1:]):
            if t_query <= t1:
                frac = (t_query - t0) / (t1 - t0)
                return (1 - frac) * v0 + frac * v1
        return channel[-1][1]

    return [
        Waypoint(t, np.array([value_at(c, t) for c in channels])) for t in times
    ]


def pickup_grasp_plan(theta0: float, horizon: int = 80, dt: float = 0.05) -> list[Waypoint]:
    """Waypoint schedule implementing a touch-style grasp strategy.

    Each finger sweeps inward so that both reach the rod's touch boundary at
    the same moment, then creeps slowly through the grasp zone while keeping
    a gentle closing command; the rod freezes the fingers wherever its zones
    sit. The wrist lift is scheduled from the expected grasp moment. Seen
    through proprioception and touch alone, the behavior is the same for
    every rod orientation: sweep until touch, creep while touching, lift
    once both fingers have stopped.
    """
    e_l, e_r = pickup_rod_ends(theta0)
    total = horizon * dt
    w_low = 0.02
    w_hold = 0.17
    pre = 0.17  # just outside every reachable rod end
    sweep_rate = 0.22
    creep_rate = 0.03
    creep_len = 0.07
    t_pre = 0.45
    boundary_l = e_l - PICKUP_TOUCH_TOL
    boundary_r = e_r + PICKUP_TOUCH_TOL
    t_sync = t_pre + max(boundary_l + pre, pre - boundary_r, 0.02) / sweep_rate
    t_creep_end = t_sync + creep_len / creep_rate
    t_lift = t_sync + (PICKUP_TOUCH_TOL - pickup_grasp_zone(theta0)) / creep_rate + 0.35
    t_lifted = min(t_lift + 0.8, total)

    finger_l = [
        (0.0, -0.3),
        (t_pre, -pre),
        (t_sync, boundary_l),
        (t_creep_end, boundary_l + creep_len),
        (total, boundary_l + creep_len),
    ]
    finger_r = [
        (0.0, 0.3),
        (t_pre, pre),
        (t_sync, boundary_r),
        (t_creep_end, boundary_r - creep_len),
        (total, boundary_r - creep_len),
    ]
    wrist = [(0.0, w_low), (t_lift, w_low), (t_lifted, w_hold), (total, w_hold)]
    return _merge_channels(finger_l, finger_r, wrist)


def run_teleop(
    env: Environment,
    plan: list[Waypoint],
    gains: Array,
    x0: Array | None = None,
    control_noise: NoiseMatrix | None = None,
) -> Trajectory:
    """Execute a waypoint plan through the teleoperation mapping."""
    q_start, q_stop = env.layout.range_of("q")
    J = -np.eye(q_stop - q_start)
    x = env.x0 if x0 is None else np.asarray(x0, dtype=float)
    states = np.empty((env.horizon + 1, env.d_x))
    actions = np.empty((env.horizon, env.d_u))
    states[0] = x
    for t in range(env.horizon):
        q_c = interpolate_waypoints(plan, (t + 1) * env.dt)
        u = teleop_map(x[q_start:q_stop], q_c, J, gains)
        if control_noise is not None:
            u = u + control_noise.values[t]
        actions[t] = u
        x = env.step(x, u)
        states[t + 1] = x
    return Trajectory(states, actions)


def generate_demo(
    env: Environment,
    plan: list[Waypoint],
    seed: int,
    condition: Array | None = None,
    x0: Array | None = None,
    gains: Array | None = None,
    jitter: float = 0.02,
) -> Demonstration:
    """Record a scripted expert demonstration; it must succeed.

    A small smoothed control jitter (scaled by ``jitter``) mimics operator
    variability and is deterministic given ``seed``. Raises
    ``DemoFailedError`` with the achieved final state if the environment's
    success predicate rejects the result.
    """
    if gains is None:
        q_start, q_stop = env.layout.range_of("q")
        gains = np.full(q_stop - q_start, 9.0)
    noise = None
    if jitter > 0:
        noise = generate_smoothed_noise(env.horizon, env.d_u, 2.0, seed).scaled(jitter)
    traj = run_teleop(env, plan, gains, x0=x0, control_noise=noise)
    if not env.success(traj):
        raise DemoFailedError(
            "scripted demonstration failed the success predicate",
            final_state=traj.states[-1],
        )
    cond = np.asarray(condition if condition is not None else [], dtype=float)
    return Demonstration(trajectory=traj, source="scripted-teleop", condition=cond)
