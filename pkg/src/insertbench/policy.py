"""Closed-loop insertion with a base approach and a latched residual correction.

The base policy drives the EEF straight at the (possibly erroneous) target.
The first tick whose wrench crosses the capture threshold switches the trial
to residual mode for good: from then on every command moves the EEF by the
network's correction plus a force-regulated vertical step
``dz = -c (f_desired - f_z)``. The network is only consulted at surface
contacts, i.e. when the wrench is over threshold while the tip rests on the
board; inside the opening, or between contacts, only the vertical term acts.
Corrections are clamped to the sampling box. A trial succeeds as soon as the part is inside
the opening within 1 mm of the goal depth, and fails once sim time passes t_f.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .collector import rdg, trial_rng, CollectConfig
from .geometry import DEG, MM, BoardLayout, Pose6, TaskSpec, apply_correction, single_socket_board
from .regressor import ModelParams, forward
from .sensors import CONTACT_BAND, WRIST_CAMERA, CameraModel, read_wrench, render_tilted
from .sim import RobotState, SimConfig, Simulator, WrenchReading, sample_grasp

BASE, RESIDUAL = "base", "residual"
SURFACE_EPS = 1e-6
EVAL_STREAM = 1  # trial_rng stream for test targets; collection uses stream 0


@dataclass
class PolicyConfig:
    t_f: float = 10.0
    f_desired: float = 5.0
    compliance_c: float = 2e-4
    f_th: float = 3.0
    m_th: float = 0.3
    command_duration: float = 0.4
    approach_height: float = 20 * MM
    wrench_noise: tuple = (0.0, 0.0)
    action_bound: tuple = (10 * MM, 10 * DEG)

    def __post_init__(self):
        if min(self.action_bound) <= 0:
            raise ValueError("action_bound must be positive")
        if self.t_f <= 0 or self.compliance_c <= 0:
            raise ValueError("t_f and compliance_c must be positive")
        if self.f_th <= 0 or self.m_th <= 0 or self.command_duration <= 0:
            raise ValueError("thresholds and command_duration must be positive")
        if self.approach_height < 0:
            raise ValueError("approach_height must be non-negative")


@dataclass
class TrialResult:
    success: bool
    duration: float
    n_commands: int
    residual_activated: bool
    final_pose: Pose6
    target: Pose6 = field(default_factory=Pose6)


def compliance_step(f_z: float, cfg: PolicyConfig) -> float:
    """Vertical move from the force error; negative (down) when pressing too lightly."""
    return -cfg.compliance_c * (cfg.f_desired - f_z)


def residual_action(
    params: ModelParams | None,
    task: TaskSpec,
    board: BoardLayout,
    state: RobotState,
    wrench: WrenchReading,
    socket: int = 0,
    camera: CameraModel = WRIST_CAMERA,
    cfg: PolicyConfig | None = None,
) -> np.ndarray:
    """Clamped network correction at a surface contact, zero otherwise."""
    cfg = cfg or PolicyConfig()
    if params is None or not at_surface_contact(state, wrench, cfg):
        return np.zeros(5)
    image = render_tilted(camera, board, task, state, socket)
    b, c = cfg.action_bound
    bound = np.array([b, b, c, c, c])
    return np.clip(forward(params, image, wrench.as_array()), -bound, bound)


def at_surface_contact(state: RobotState, wrench: WrenchReading, cfg: PolicyConfig) -> bool:
    """Wrench over threshold with the tip on (not below) the board surface."""
    z = state.peg_pose.z
    return wrench.exceeds(cfg.f_th, cfg.m_th) and -SURFACE_EPS <= z < CONTACT_BAND


class _Trace:
    header = ["t", "x", "y", "z", "theta_x", "theta_y", "theta_z", "fx", "fy", "fz", "mx", "my", "mz", "mode"]

    def __init__(self):
        self.rows = []

    def add(self, sim: Simulator, w: WrenchReading, mode: str):
        p = sim.state.eef_pose.as_array()
        self.rows.append([f"{sim.state.sim_time:.6f}", *(f"{v:.9g}" for v in p), *(f"{v:.9g}" for v in w.as_array()), mode])

    def write(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.header)
            wr.writerows(self.rows)


def run_trial(
    task: TaskSpec,
    board: BoardLayout | None,
    target: Pose6,
    params: ModelParams | None,
    cfg: PolicyConfig,
    sim_cfg: SimConfig,
    rng: np.random.Generator,
    socket: int = 0,
    trace_path=None,
) -> TrialResult:
    """One insertion attempt toward ``target`` (socket frame)."""
    board = board or single_socket_board(task)
    start = Pose6(target.x, target.y, target.z + task.depth + cfg.approach_height, *target.angles)
    sim = Simulator(task, sim_cfg, RobotState(start, sample_grasp(sim_cfg, rng)), rng)
    ticks = max(1, int(round(cfg.command_duration / sim_cfg.dt)))
    trace = _Trace() if trace_path else None
    mode = BASE
    n_commands = 0
    success = False
    wrench = WrenchReading.zero()
    goal = target
    while not success and sim.state.sim_time <= cfg.t_f:
        if mode == RESIDUAL:
            delta = residual_action(params, task, board, sim.state, wrench, socket, cfg=cfg)
            dz = compliance_step(float(wrench.f[2]), cfg)
            goal = apply_correction(sim.state.eef_pose, delta, dz)
        n_commands += 1
        for _ in range(ticks):
            wrench = read_wrench(sim.tick(goal), cfg.wrench_noise, rng)
            if trace:
                trace.add(sim, wrench, mode)
            if sim.inserted():
                success = True
                break
            if sim.state.sim_time > cfg.t_f:
                break
            if mode == BASE and wrench.exceeds(cfg.f_th, cfg.m_th):
                mode = RESIDUAL
                break
    if trace:
        trace.write(trace_path)
    duration = sim.state.sim_time if success else max(sim.state.sim_time, cfg.t_f)
    return TrialResult(success, duration, n_commands, mode == RESIDUAL, sim.state.eef_pose, target)


def sample_target(board: BoardLayout, socket: int, b0: float, c0: float, rng: np.random.Generator) -> Pose6:
    """Erroneous target: the goal perturbed uniformly in the world frame, returned in the socket frame."""
    goal_w = board.goal_world_pose(socket)
    r, th = rdg(goal_w.position, goal_w.angles, CollectConfig(b0=b0, c0=c0), rng)
    return board.socket_world_pose(socket).inverse().compose(Pose6(*r, *th))


def _eval_one(args):
    task, board, params, b0, c0, cfg, sim_cfg, seed, i, socket = args
    rng = trial_rng(seed, i, EVAL_STREAM)
    target = sample_target(board, socket, b0, c0, rng)
    return run_trial(task, board, target, params, cfg, sim_cfg, rng, socket)


def evaluate(
    task: TaskSpec,
    board: BoardLayout | None,
    params: ModelParams | None,
    n_test: int,
    error_box=(10 * MM, 10 * DEG),
    cfg: PolicyConfig | None = None,
    sim_cfg: SimConfig | None = None,
    seed: int = 0,
    socket: int = 0,
    threads: int = 1,
):
    """(success_rate, mean_duration, results) over n_test seeded trials.

    ``mean_duration`` averages successful trials only; it is NaN when none succeed.
    """
    if n_test < 1:
        raise ValueError("n_test must be at least 1")
    cfg = cfg or PolicyConfig()
    sim_cfg = sim_cfg or SimConfig()
    board = board or single_socket_board(task)
    b0, c0 = error_box
    jobs = [(task, board, params, b0, c0, cfg, sim_cfg, seed, i, socket) for i in range(n_test)]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(threads) as pool:
            results = list(pool.map(_eval_one, jobs))
    else:
        results = [_eval_one(j) for j in jobs]
    ok = [r.duration for r in results if r.success]
    rate = len(ok) / n_test
    mean = float(np.mean(ok)) if ok else float("nan")
    return rate, mean, results
