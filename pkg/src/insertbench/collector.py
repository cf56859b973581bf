"""Backward-learning data collection.

Starting from the solved pose L, each trial draws a perturbed target from the
backward box around L, approaches it from straight above and descends. The
first tick whose wrench crosses the capture threshold yields one sample:
the wrist image, the wrench, and the correction leading back to L. Trials
that slide into the hole without a collision are dropped.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, GoalUnreachable, TruncatedFile
from .geometry import DEG, MM, BoardLayout, Pose6, TaskSpec, corrective_label, single_socket_board
from .sensors import WRIST_CAMERA, CameraModel, read_wrench, render_tilted
from .sim import RobotState, SimConfig, Simulator, WrenchReading, is_inserted, sample_grasp

DATASET_MAGIC = b"INBN"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHHHHQ4x")


@dataclass
class CollectConfig:
    n_p: int = 100
    b0: float = 10 * MM
    c0: float = 10 * DEG
    z_max: float = 50 * MM
    f_th: float = 3.0
    m_th: float = 0.3
    wrench_noise: tuple = (0.0, 0.0)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_p < 0:
            raise ValueError("n_p must be non-negative")
        if self.b0 < 0 or self.c0 < 0 or self.z_max <= 0:
            raise ValueError("b0, c0 must be non-negative and z_max positive")
        if self.f_th <= 0 or self.m_th <= 0:
            raise ValueError("capture thresholds must be positive")


@dataclass(eq=False)
class Sample:
    image: np.ndarray
    wrench: WrenchReading
    label: np.ndarray
    task_id: str
    contact_pose: Pose6
    trial_index: int | None = None

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.task_id == other.task_id
            and self.image.shape == other.image.shape
            and np.array_equal(self.image, other.image)
            and np.array_equal(self.wrench.as_array(), other.wrench.as_array())
            and np.array_equal(self.label, other.label)
            and np.array_equal(self.contact_pose.as_array(), other.contact_pose.as_array())
        )

    def quantized(self) -> "Sample":
        """Copy with every scalar rounded to float32, as stored on disk."""
        q = lambda a: np.asarray(a, np.float32).astype(np.float64)  # noqa: E731
        return Sample(
            np.asarray(self.image, np.float32),
            WrenchReading.from_array(q(self.wrench.as_array())),
            q(self.label),
            self.task_id,
            Pose6.from_array(q(self.contact_pose.as_array())),
            self.trial_index,
        )


@dataclass(eq=False)
class Dataset:
    image_shape: tuple = (64, 64, 3)
    records: list = field(default_factory=list)

    def __post_init__(self):
        self.image_shape = tuple(int(v) for v in self.image_shape)
        for r in self.records:
            if r.image.shape != self.image_shape:
                raise FormatError(f"record image {r.image.shape} != dataset {self.image_shape}")

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.image_shape == other.image_shape and self.records == other.records

    @property
    def task_ids(self) -> list[str]:
        return sorted({r.task_id for r in self.records})

    def arrays(self):
        """Stacked (images float32, wrenches (N, 6), labels (N, 5))."""
        if not self.records:
            return (
                np.zeros((0, *self.image_shape), np.float32), np.zeros((0, 6)), np.zeros((0, 5)),
            )
        images = np.stack([r.image for r in self.records]).astype(np.float32)
        wrenches = np.stack([r.wrench.as_array() for r in self.records])
        labels = np.stack([r.label for r in self.records])
        return images, wrenches, labels

    def head(self, n: int) -> "Dataset":
        return Dataset(self.image_shape, list(self.records[:n]))

    def quantized(self) -> "Dataset":
        return Dataset(self.image_shape, [r.quantized() for r in self.records])

    @staticmethod
    def concat(parts) -> "Dataset":
        parts = list(parts)
        if not parts:
            return Dataset()
        shape = parts[0].image_shape
        return Dataset(shape, [r for p in parts for r in p.records])


# -- sampling ----------------------------------------------------------------


def rdg(r0, theta0, cfg: CollectConfig, rng: np.random.Generator):
    """Uniform draw from the backward box: x, y within +-b0, angles within +-c0, z unchanged."""
    r = np.array(r0, float)
    th = np.array(theta0, float)
    u = rng.uniform(-1.0, 1.0, 5)
    r[:2] += cfg.b0 * u[:2]
    th += cfg.c0 * u[2:]
    return r, th


def trial_rng(base_seed: int, i: int, stream: int = 0) -> np.random.Generator:
    """Per-trial generator; distinct streams keep evaluation draws disjoint from collection."""
    key = [int(base_seed), int(i)] + ([int(stream)] if stream else [])
    return np.random.default_rng(key)


def check_goal(task: TaskSpec) -> None:
    if not is_inserted(task, RobotState(task.goal_pose)):
        raise GoalUnreachable(f"{task.task_id}: goal pose is not an inserted configuration")


def descend(sim: Simulator, target: Pose6, f_th: float, m_th: float, max_time: float, noise=(0.0, 0.0)):
    """Tick toward ``target`` until the wrench crosses the threshold.

    Returns the reading at the crossing tick, or None once the target is
    reached (or time runs out) without a collision.
    """
    floor_eps = 1e-6
    while sim.state.sim_time < max_time:
        true_w = sim.tick(target)
        w = read_wrench(true_w, noise, sim.rng)
        if w.exceeds(f_th, m_th):
            return w
        if abs(sim.state.eef_pose.z - target.z) < floor_eps:
            return None
    return None


def collect_trial(
    task: TaskSpec,
    board: BoardLayout,
    cfg: CollectConfig,
    sim_cfg: SimConfig,
    i: int,
    socket: int = 0,
    camera: CameraModel = WRIST_CAMERA,
) -> Sample | None:
    rng = trial_rng(cfg.rng_seed, i)
    goal = task.goal_pose
    r, th = rdg(goal.position, goal.angles, cfg, rng)
    target = Pose6(*r, *th)
    start = Pose6(r[0], r[1], r[2] + cfg.z_max, *th)
    state = RobotState(start, sample_grasp(sim_cfg, rng))
    sim = Simulator(task, sim_cfg, state, rng)
    max_time = cfg.z_max / sim_cfg.v_max + 3.0
    w = descend(sim, target, cfg.f_th, cfg.m_th, max_time, cfg.wrench_noise)
    if w is None:
        return None
    contact = sim.state.eef_pose
    image = render_tilted(camera, board, task, sim.state, socket)
    return Sample(image, w, corrective_label(goal, contact), task.task_id, contact, i)


def collect_backward(
    task: TaskSpec,
    board: BoardLayout | None,
    cfg: CollectConfig,
    sim: SimConfig,
    socket: int = 0,
    threads: int = 1,
) -> Dataset:
    """Run cfg.n_p backward trials; samples come back in trial order."""
    check_goal(task)
    board = board or single_socket_board(task)
    idx = range(cfg.n_p)
    if threads > 1 and cfg.n_p > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(threads) as pool:
            out = list(pool.map(collect_trial, *zip(*[(task, board, cfg, sim, i, socket) for i in idx])))
    else:
        out = [collect_trial(task, board, cfg, sim, i, socket) for i in idx]
    return Dataset(WRIST_CAMERA.resolution, [s for s in out if s is not None])


# -- file format -------------------------------------------------------------


def encode_dataset(d: Dataset) -> bytes:
    h, w, c = d.image_shape
    parts = [_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, h, w, c, len(d.records))]
    for r in d.records:
        tid = r.task_id.encode("utf-8")
        parts += [
            np.ascontiguousarray(r.image, "<f4").tobytes(),
            np.asarray(r.wrench.as_array(), "<f4").tobytes(),
            np.asarray(r.label, "<f4").tobytes(),
            np.asarray(r.contact_pose.as_array(), "<f4").tobytes(),
            struct.pack("<H", len(tid)),
            tid,
        ]
    return b"".join(parts)


def write_dataset(d: Dataset, path) -> None:
    Path(path).write_bytes(encode_dataset(d))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), "<f4").astype(np.float64)


def decode_dataset(buf: bytes, expected_shape=None) -> Dataset:
    rd = _Reader(buf)
    magic, version, h, w, c, count = _HEADER.unpack(rd.take(_HEADER.size))
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    if expected_shape is not None and tuple(expected_shape) != (h, w, c):
        raise FormatError(f"dataset images {(h, w, c)} != expected {tuple(expected_shape)}")
    records = []
    for _ in range(count):
        img = np.frombuffer(rd.take(4 * h * w * c), "<f4").reshape(h, w, c).astype(np.float32)
        wrench = WrenchReading.from_array(rd.floats(6))
        label = rd.floats(5)
        pose = Pose6.from_array(rd.floats(6))
        (n,) = struct.unpack("<H", rd.take(2))
        try:
            tid = rd.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("task id is not valid UTF-8") from exc
        records.append(Sample(img, wrench, label, tid, pose))
    if rd.pos != len(buf):
        raise FormatError(f"{len(buf) - rd.pos} trailing bytes after {count} records")
    return Dataset((h, w, c), records)


def read_dataset(path, expected_shape=None) -> Dataset:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(str(exc)) from exc
    return decode_dataset(buf, expected_shape)


def relabel(d: Dataset, task_id: str) -> Dataset:
    return Dataset(d.image_shape, [replace(r, task_id=task_id) for r in d.records])
