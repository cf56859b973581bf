"""Experiment drivers behind the command line: curves, generalization, transfer, assembly.

Every driver is a pure function of (config, seed) and returns a Report whose
rows share one fixed CSV header. Writing a report also writes the config
snapshot next to it so the run can be repeated.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .collector import CollectConfig, Dataset, collect_backward, trial_rng
from .config import BenchConfig
from .geometry import DEG, MM, BoardLayout, Pose6, Socket, TaskSpec, rectangle, resolve_task, single_socket_board
from .localizer import localize, register_reference
from .policy import EVAL_STREAM, evaluate, run_trial
from .regressor import ModelParams, train
from .sensors import LOCALIZER_CAMERA

REPORT_HEADER = ["experiment", "condition", "task_id", "n_samples", "success_rate", "mean_duration", "seed", "trials"]


@dataclass
class Report:
    experiment: str
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    header: list = field(default_factory=lambda: list(REPORT_HEADER))

    def add(self, condition, task_id, n_samples, success_rate, mean_duration, seed, trials):
        if not 0.0 <= success_rate <= 1.0:
            raise ValueError(f"success_rate {success_rate} outside [0, 1]")
        self.rows.append(
            {
                "experiment": self.experiment,
                "condition": condition,
                "task_id": task_id,
                "n_samples": int(n_samples),
                "success_rate": float(success_rate),
                "mean_duration": float(mean_duration),
                "seed": int(seed),
                "trials": int(trials),
            }
        )

    def lookup(self, condition: str, n_samples: int | None = None) -> dict:
        for r in self.rows:
            if r["condition"] == condition and (n_samples is None or r["n_samples"] == n_samples):
                return r
        raise KeyError((condition, n_samples))


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def sidecar_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".config.json")


def write_config_snapshot(config: dict, out) -> None:
    sidecar_path(out).write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


def write_report(report: Report, out) -> None:
    """Rewrite ``out`` as CSV and its config sidecar; never appends."""
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(report.header)
        for r in report.rows:
            w.writerow([_fmt(r[k]) for k in report.header])
    write_config_snapshot(report.config, out)


def read_report_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- building blocks ------------------------------------------------------------


def collect(cfg: BenchConfig, task: TaskSpec | None = None, n: int | None = None, board=None,
            socket: int = 0, threads: int = 1) -> Dataset:
    task = task or cfg.task_spec()
    ccfg = cfg.collect if n is None else replace(cfg.collect, n_p=n)
    return collect_backward(task, board, ccfg, cfg.sim, socket, threads)


def collect_at_least(cfg: BenchConfig, task: TaskSpec, n: int, threads: int = 1) -> Dataset:
    """First ``n`` samples of a collection run long enough to yield them.

    Trials that slide in without a collision produce nothing, so the trial
    count grows until the yield suffices; trial seeds do not depend on the
    count, so the result is a prefix of any longer run.
    """
    trials = n
    while True:
        data = collect(cfg, task, n=trials, threads=threads)
        if len(data) >= n:
            return data.head(n)
        if trials >= 10 * max(n, 1):
            raise ValueError(f"{trials} trials yielded only {len(data)} of {n} samples")
        trials += n - len(data) + max(2, (n - len(data)) // 2)


def fit(cfg: BenchConfig, data: Dataset, init: ModelParams | None = None, steps: int | None = None,
        augment: bool | None = None) -> ModelParams:
    tcfg = cfg.train
    if steps is not None:
        tcfg = replace(tcfg, steps=steps)
    if augment is not None:
        tcfg = replace(tcfg, augment=augment)
    label_scale = np.array([cfg.collect.b0] * 2 + [cfg.collect.c0] * 3)
    params, _ = train(data, cfg.augment, tcfg, init=init, label_scale=label_scale)
    return params


def score(cfg: BenchConfig, task: TaskSpec, params, board=None, trials: int | None = None,
          socket: int = 0, threads: int = 1, seed: int | None = None):
    trials = cfg.eval.trials if trials is None else trials
    rate, mean, _ = evaluate(
        task, board, params, trials, (cfg.eval.b0, cfg.eval.c0), cfg.policy, cfg.sim,
        cfg.seed if seed is None else seed, socket, threads,
    )
    return rate, mean


# -- experiments ------------------------------------------------------------------


def run_eval(cfg: BenchConfig, params, trials: int | None = None, threads: int = 1, condition="trained") -> Report:
    task = cfg.task_spec()
    trials = cfg.eval.trials if trials is None else trials
    rep = Report("eval", config=cfg.to_dict())
    rate, mean = score(cfg, task, params, cfg.board_layout(), trials, threads=threads)
    rep.add(condition, task.task_id, -1, rate, mean, cfg.seed, trials)
    return rep


def run_curve(cfg: BenchConfig, data: Dataset | None = None, trials: int | None = None, threads: int = 1,
              sizes=None) -> Report:
    """Policies trained on dataset prefixes of increasing size."""
    task = cfg.task_spec()
    sizes = list(cfg.curve.sizes if sizes is None else sizes)
    trials = cfg.curve.trials if trials is None else trials
    if data is None:
        data = collect_at_least(cfg, task, max(sizes), threads)
    rep = Report("curve", config=cfg.to_dict())
    for n in sizes:
        if n > len(data):
            raise ValueError(f"curve size {n} exceeds the {len(data)} collected samples")
        params = fit(cfg, data.head(n), steps=cfg.curve.steps)
        rate, mean = score(cfg, task, params, trials=trials, threads=threads)
        rep.add("prefix", task.task_id, n, rate, mean, cfg.seed, trials)
    return rep


def recolored(task: TaskSpec, color) -> TaskSpec:
    return replace(task, peg_color=tuple(float(c) for c in color))


def perturbed_shape(task: TaskSpec, size_mm) -> TaskSpec:
    """Rectangular part of the given (width, height) in the same clearance class."""
    body = rectangle(float(size_mm[0]) * MM, float(size_mm[1]) * MM)
    return replace(
        task, peg=body, hole=body.offset(task.clearance), task_id=f"rect_{size_mm[0]:g}x{size_mm[1]:g}_{task.task_id}"
    )


def run_generalize(cfg: BenchConfig, params_aug=None, params_plain=None, data: Dataset | None = None,
                   trials: int | None = None, threads: int = 1) -> Report:
    """Board placement, peg color and peg shape changes at test time."""
    task = cfg.task_spec()
    g = cfg.generalize
    trials = g.trials if trials is None else trials
    if params_aug is None or params_plain is None:
        data = data if data is not None else collect(cfg, task, threads=threads)
        params_aug = params_aug or fit(cfg, data, augment=True)
        params_plain = params_plain or fit(cfg, data, augment=False)
    rep = Report("generalize", config=cfg.to_dict())
    for i, (x, y, th) in enumerate(g.board_poses):
        board = single_socket_board(task, Pose6(x * MM, y * MM, 0.0, 0.0, 0.0, th * DEG))
        rate, mean = score(cfg, task, params_aug, board, trials, threads=threads)
        rep.add("trained_pose" if i == 0 else f"location_{i}", task.task_id, -1, rate, mean, cfg.seed, trials)
    color_task = recolored(task, g.recolor)
    for name, p in (("color_augmented", params_aug), ("color_plain", params_plain)):
        rate, mean = score(cfg, color_task, p, trials=trials, threads=threads)
        rep.add(name, task.task_id, -1, rate, mean, cfg.seed, trials)
    shape_task = perturbed_shape(task, g.shape_peg_mm)
    rate, mean = score(cfg, shape_task, params_aug, trials=trials, threads=threads)
    rep.add("shape", shape_task.task_id, -1, rate, mean, cfg.seed, trials)
    return rep


def _finetune(cfg: BenchConfig, params, source_data: Dataset | None, target: Dataset) -> ModelParams:
    """Warm start at a reduced learning rate; with rehearsal the k target samples are
    replicated to match the source set so both tasks share each batch about equally."""
    t = cfg.transfer
    data = target
    if t.rehearsal and source_data is not None and len(source_data):
        data = Dataset.concat([source_data] + [target] * -(-len(source_data) // len(target)))
    tuned = replace(cfg, train=replace(cfg.train, lr=t.finetune_lr))
    return fit(tuned, data, init=params, steps=t.steps)


def run_transfer(cfg: BenchConfig, source_params=None, target_data: Dataset | None = None,
                 trials: int | None = None, threads: int = 1) -> Report:
    """Fine-tuning a source-task policy with k target samples versus training from scratch."""
    t = cfg.transfer
    trials = t.trials if trials is None else trials
    src, dst = resolve_task(t.source_task), resolve_task(t.target_task)
    source_data = None
    if source_params is None or t.rehearsal:
        source_data = collect(cfg, src, threads=threads)
    if source_params is None:
        source_params = fit(cfg, source_data)
    need = max(max(t.k_grid), max(t.scratch_sizes))
    if target_data is None:
        target_data = collect_at_least(cfg, dst, need, threads)
    if len(target_data) < need:
        raise ValueError(f"transfer needs {need} target samples, collected {len(target_data)}")
    rep = Report("transfer", config=cfg.to_dict())
    for k in t.k_grid:
        p = source_params if k == 0 else _finetune(cfg, source_params, source_data, target_data.head(k))
        rate, mean = score(cfg, dst, p, trials=trials, threads=threads)
        rep.add("finetune", dst.task_id, k, rate, mean, cfg.seed, trials)
    for n in t.scratch_sizes:
        p = fit(cfg, target_data.head(n), steps=t.steps)
        rate, mean = score(cfg, dst, p, trials=trials, threads=threads)
        rep.add("scratch", dst.task_id, n, rate, mean, cfg.seed, trials)
    return rep


def samples_to_threshold(report: Report, condition: str, threshold: float):
    """Smallest n_samples whose success reaches ``threshold``, or None."""
    hits = [r["n_samples"] for r in report.rows if r["condition"] == condition and r["success_rate"] >= threshold]
    return min(hits) if hits else None


# -- assembly -------------------------------------------------------------------------------


def default_assembly_board() -> BoardLayout:
    suite = {t: resolve_task(t) for t in ("square_1mm", "circle_1mm", "triangle_1mm")}
    sockets = [
        Socket(suite["square_1mm"], Pose6(-40 * MM, 0.0, 0.0)),
        Socket(suite["circle_1mm"], Pose6(0.0, 0.0, 0.0)),
        Socket(suite["triangle_1mm"], Pose6(40 * MM, 0.0, 0.0)),
    ]
    return BoardLayout(Pose6(), sockets, size=(0.14, 0.08))


def train_multitask(cfg: BenchConfig, board: BoardLayout, threads: int = 1) -> ModelParams:
    parts = [
        collect(cfg, s.task, n=cfg.assembly.samples_per_task, board=board, socket=i, threads=threads)
        for i, s in enumerate(board.sockets)
    ]
    return fit(cfg, Dataset.concat(parts))


def run_assembly(cfg: BenchConfig, params=None, board: BoardLayout | None = None, threads: int = 1) -> Report:
    """Localize a displaced board, then insert every part in turn with one policy."""
    a = cfg.assembly
    nominal = board if board is not None else (cfg.board_layout() or default_assembly_board())
    rep = Report("assembly", config=cfg.to_dict())
    if not nominal.sockets:
        return rep
    if params is None:
        params = train_multitask(cfg, nominal, threads)
    ox, oy, oth = a.board_offset
    placed = nominal.with_pose(nominal.board_pose.compose(Pose6(ox * MM, oy * MM, 0.0, 0.0, 0.0, oth * DEG)))
    ref_eef = nominal.board_pose.compose(Pose6(0.0, 0.0, a.reference_height_mm * MM))
    reference = register_reference(nominal, LOCALIZER_CAMERA, ref_eef)
    holes, _ = localize(reference, placed, LOCALIZER_CAMERA, cfg=cfg.localizer)
    total = 0.0
    n_ok = 0
    for i, s in enumerate(placed.sockets):
        # estimated goal, expressed in the true socket frame
        goal_est = holes[i][1].compose(s.task.goal_pose)
        target = placed.socket_world_pose(i).inverse().compose(goal_est)
        res = run_trial(s.task, placed, target, params, cfg.policy, cfg.sim, trial_rng(cfg.seed, i, EVAL_STREAM), i)
        total += res.duration
        if res.success:
            n_ok += 1
            placed.sockets[i].occupied = True
        rep.add(f"socket_{i}", s.task.task_id, -1, float(res.success), res.duration, cfg.seed, 1)
    rep.add("all", "board", -1, n_ok / len(placed.sockets), total, cfg.seed, len(placed.sockets))
    return rep


# -- localization demo --------------------------------------------------------------------

LOCALIZE_HEADER = ["index", "dx_mm", "dy_mm", "dtheta_deg", "err_xy_mm", "err_theta_deg", "iterations", "status"]


def run_localize_demo(cfg: BenchConfig, n: int = 20) -> Report:
    """Random board displacements within the search range and the recovered hole poses."""
    from .errors import LocalizationFailed

    board = cfg.board_layout() or default_assembly_board()
    lc = cfg.localizer
    ref_eef = board.board_pose.compose(Pose6(0.0, 0.0, cfg.assembly.reference_height_mm * MM))
    reference = register_reference(board, LOCALIZER_CAMERA, ref_eef)
    rep = Report("localize-demo", config=cfg.to_dict(), header=list(LOCALIZE_HEADER))
    for i in range(n):
        rng = trial_rng(cfg.seed, i)
        u = rng.uniform(-1.0, 1.0, 3)
        off = Pose6(u[0] * lc.search_xy, u[1] * lc.search_xy, 0.0, 0.0, 0.0, u[2] * lc.search_theta)
        placed = board.with_pose(board.board_pose.compose(off))
        try:
            holes, iters = localize(reference, placed, LOCALIZER_CAMERA, cfg=lc)
            errs = [(holes[j][1].position - placed.socket_world_pose(j).position)[:2] for j in range(len(holes))]
            exy = max(float(np.hypot(*e)) for e in errs)
            eth = max(
                abs(placed.socket_world_pose(j).inverse().compose(holes[j][1]).theta_z) for j in range(len(holes))
            )
            status = "ok"
        except LocalizationFailed:
            exy, eth, iters, status = float("nan"), float("nan"), -1, "failed"
        rep.rows.append(
            {
                "index": i,
                "dx_mm": off.x / MM,
                "dy_mm": off.y / MM,
                "dtheta_deg": off.theta_z / DEG,
                "err_xy_mm": exy / MM,
                "err_theta_deg": eth / DEG,
                "iterations": iters,
                "status": status,
            }
        )
    return rep
