"""Quasi-static robot/contact simulation in the socket frame.

The robot is impedance controlled: a commanded pose tracks the target under
first-order dynamics with velocity clamps, and the actual pose is the
commanded pose resolved against the board surface and the hole walls. Contact
forces are springs between commanded and resolved poses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteState
from .geometry import (
    DEG,
    MM,
    Pose6,
    TaskSpec,
    contact_patch,
    contains_with_clearance,
    rot2,
    wrap_angle,
)

GRASP_SHIFT_BOUND = 2 * MM
GRASP_TILT_BOUND = 3 * DEG
Z_EPS = 1e-9
INSERT_TOLERANCE = 1 * MM


@dataclass(frozen=True)
class WrenchReading:
    f: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, float).reshape(3)
        m = np.asarray(self.m, float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(m))):
            raise NonFiniteState("non-finite wrench")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "m", m)

    @classmethod
    def zero(cls) -> "WrenchReading":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, a) -> "WrenchReading":
        a = np.asarray(a, float)
        return cls(a[:3], a[3:6])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.f, self.m])

    def exceeds(self, f_th: float, m_th: float) -> bool:
        """Capture condition: componentwise max-norm of F or M at threshold."""
        return bool(np.max(np.abs(self.f)) >= f_th or np.max(np.abs(self.m)) >= m_th)


@dataclass(frozen=True)
class RobotState:
    eef_pose: Pose6
    grasp_offset: Pose6 = field(default_factory=Pose6)
    command_pose: Pose6 | None = None
    in_contact: bool = False
    sim_time: float = 0.0

    def __post_init__(self):
        if self.command_pose is None:
            object.__setattr__(self, "command_pose", self.eef_pose)
        g = self.grasp_offset
        if abs(g.x) > GRASP_SHIFT_BOUND + 1e-12 or abs(g.y) > GRASP_SHIFT_BOUND + 1e-12:
            raise ValueError("grasp offset exceeds slippage bounds")
        if np.any(np.abs(g.angles) > GRASP_TILT_BOUND + 1e-12):
            raise ValueError("grasp rotation exceeds slippage bounds")

    @property
    def peg_pose(self) -> Pose6:
        return self.eef_pose.compose(self.grasp_offset)


@dataclass
class SimConfig:
    k_normal: float = 5000.0
    k_lateral: float = 2000.0
    pd_gain: float = 8.0
    v_max: float = 0.05
    omega_max: float = 1.0
    dt: float = 0.01
    command_duration: float = 0.4
    slip_moment_threshold: float = 0.5
    slip_step: Pose6 = field(default_factory=lambda: Pose6(0.05 * MM, 0.05 * MM, 0, 0.1 * DEG, 0.1 * DEG, 0.1 * DEG))
    grasp_tilt_max: float = 2 * DEG
    grasp_shift_max: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name in ("k_normal", "k_lateral", "pd_gain", "v_max", "omega_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        ratio = self.command_duration / self.dt
        if self.command_duration <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("command_duration must be a positive integer multiple of dt")
        if not 0 <= self.grasp_tilt_max <= GRASP_TILT_BOUND or not 0 <= self.grasp_shift_max <= GRASP_SHIFT_BOUND:
            raise ValueError("initial grasp spread exceeds slippage bounds")

    @property
    def ticks_per_command(self) -> int:
        return int(round(self.command_duration / self.dt))


# -- kinematics -----------------------------------------------------------------


def _pd_step(cmd: Pose6, target: Pose6, cfg: SimConfig) -> Pose6:
    dp = cfg.pd_gain * cfg.dt * (target.position - cmd.position)
    n = float(np.linalg.norm(dp))
    if not math.isfinite(n):
        raise NonFiniteState("PD integration produced non-finite pose")
    vlim = cfg.v_max * cfg.dt
    if n > vlim:
        dp *= vlim / n
    da = cfg.pd_gain * cfg.dt * wrap_angle(target.angles - cmd.angles)
    wlim = cfg.omega_max * cfg.dt
    da = np.clip(da, -wlim, wlim)
    out = np.concatenate([cmd.position + dp, cmd.angles + da])
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("PD integration produced non-finite pose")
    return Pose6.from_array(out)


def tilt_geometry(peg: Pose6, task: TaskSpec) -> tuple[float, np.ndarray]:
    """(clearance reduction, patch-centroid shift) for a tilted peg.

    The peg axis leaning by angle t shrinks the usable gap by
    peg_height * sin(t) and moves the contact patch toward the low edge by
    peg_height * tan(t).
    """
    axis = peg.rotation()[:, 2]
    sin_t = math.hypot(axis[0], axis[1])
    if sin_t == 0.0:
        return 0.0, np.zeros(2)
    return task.peg_height * sin_t, task.peg_height * axis[:2] / axis[2]


def compute_wrench(
    task: TaskSpec,
    state: RobotState,
    penetration: float,
    cfg: SimConfig | None = None,
    lateral_force=(0.0, 0.0),
    contained=None,
) -> WrenchReading:
    """Surface contact wrench in the EEF frame for a given penetration depth.

    Normal force is k_normal * penetration applied at the contact-patch
    centroid; ``lateral_force`` (wall reaction, socket frame) is added as is.
    """
    if penetration < 0:
        raise ValueError("penetration must be non-negative")
    cfg = cfg or SimConfig()
    peg = state.peg_pose
    margin, shift = tilt_geometry(peg, task)
    f = np.array([lateral_force[0], lateral_force[1], 0.0])
    m = np.zeros(3)
    if penetration > 0:
        area, centroid = contact_patch(task, (peg.x, peg.y), peg.theta_z, margin, contained)
        if area > 0:
            f[2] = cfg.k_normal * penetration
            r = rot2(peg.theta_z) @ centroid + shift
            m = np.array([r[1] * f[2], -r[0] * f[2], 0.0])
    rt = state.eef_pose.rotation().T
    return WrenchReading(rt @ f, rt @ m)


def _with_z(p: Pose6, z: float) -> Pose6:
    return Pose6(p.x, p.y, z, p.theta_x, p.theta_y, p.theta_z)


def step_towards(state: RobotState, target: Pose6, task: TaskSpec, cfg: SimConfig) -> tuple[RobotState, WrenchReading]:
    """Advance one dt toward ``target``; returns the new state and EEF-frame wrench."""
    cmd = _pd_step(state.command_pose, target, cfg)
    g = state.grasp_offset
    prev = state.eef_pose
    prev_tip_z = prev.compose(g).z
    inside = prev_tip_z < -Z_EPS
    tip_c = cmd.compose(g)
    margin, _ = tilt_geometry(tip_c, task)
    fits = contains_with_clearance(task, (tip_c.x, tip_c.y), tip_c.theta_z, margin)
    floor = -task.depth
    f_lat = np.zeros(2)
    penetration = 0.0
    reaction = 0.0
    if inside:
        lat = cmd if fits else _with_z(prev, cmd.z)
        if not fits:
            f_lat = -cfg.k_lateral * (cmd.position[:2] - prev.position[:2])
        tip_z_cmd = lat.compose(g).z
        if tip_z_cmd >= prev_tip_z:
            tip_z = tip_z_cmd
        elif task.friction_mu * np.linalg.norm(f_lat) >= cfg.k_normal * (prev_tip_z - tip_z_cmd):
            tip_z = prev_tip_z  # jammed against the walls
        else:
            tip_z = tip_z_cmd
        tip_z = max(tip_z, floor)
        reaction = cfg.k_normal * max(0.0, tip_z - tip_z_cmd)
    else:
        lat = cmd
        tip_z_cmd = tip_c.z
        if tip_z_cmd >= 0.0:
            tip_z = tip_z_cmd
        elif fits:
            tip_z = max(tip_z_cmd, floor)
            reaction = cfg.k_normal * max(0.0, tip_z - tip_z_cmd)
        else:
            tip_z = 0.0
            penetration = -tip_z_cmd
    actual = _with_z(lat, lat.z + (tip_z - tip_z_cmd))
    new_state = replace(state, eef_pose=actual, command_pose=cmd, sim_time=state.sim_time + cfg.dt)
    wrench = compute_wrench(task, new_state, penetration, cfg, f_lat, contained=False if penetration > 0 else None)
    if reaction > 0:
        wrench = WrenchReading(wrench.f + actual.rotation().T @ np.array([0, 0, reaction]), wrench.m)
    in_contact = bool(np.any(wrench.f != 0) or np.any(wrench.m != 0))
    return replace(new_state, in_contact=in_contact), wrench


def apply_slippage(state: RobotState, wrench: WrenchReading, cfg: SimConfig, rng: np.random.Generator) -> RobotState:
    """Random grasp perturbation when the contact moment exceeds the slip threshold."""
    if np.linalg.norm(wrench.m) <= cfg.slip_moment_threshold:
        return state
    step = cfg.slip_step.as_array()
    if not np.any(step):
        return state
    g = state.grasp_offset.as_array() + rng.uniform(-1.0, 1.0, 6) * step
    g[0:2] = np.clip(g[0:2], -GRASP_SHIFT_BOUND, GRASP_SHIFT_BOUND)
    g[2] = 0.0
    g[3:6] = np.clip(g[3:6], -GRASP_TILT_BOUND, GRASP_TILT_BOUND)
    return replace(state, grasp_offset=Pose6.from_array(g))


def is_inserted(task: TaskSpec, state: RobotState) -> bool:
    peg = state.peg_pose
    margin, _ = tilt_geometry(peg, task)
    if state.eef_pose.z - task.goal_pose.z >= INSERT_TOLERANCE:
        return False
    return contains_with_clearance(task, (peg.x, peg.y), peg.theta_z, margin)


def sample_grasp(cfg: SimConfig, rng: np.random.Generator) -> Pose6:
    """Fresh grasp misalignment for one approach."""
    s = rng.uniform(-1.0, 1.0, 2) * cfg.grasp_shift_max
    t = rng.uniform(-1.0, 1.0, 2) * cfg.grasp_tilt_max
    return Pose6(s[0], s[1], 0.0, t[0], t[1], 0.0)


class Simulator:
    """One single-threaded simulation owning its state and RNG."""

    def __init__(self, task: TaskSpec, cfg: SimConfig, state: RobotState, rng: np.random.Generator):
        self.task = task
        self.cfg = cfg
        self.state = state
        self.rng = rng
        self.wrench = WrenchReading.zero()

    def tick(self, target: Pose6) -> WrenchReading:
        self.state, self.wrench = step_towards(self.state, target, self.task, self.cfg)
        self.state = apply_slippage(self.state, self.wrench, self.cfg, self.rng)
        return self.wrench

    def inserted(self) -> bool:
        return is_inserted(self.task, self.state)

    def tip_height(self) -> float:
        return self.state.peg_pose.z
