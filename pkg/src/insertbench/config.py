"""One JSON document configuring every stage of the benchmark.

Lengths are millimetres and angles degrees on disk (``*_mm`` / ``*_deg``
keys); everything is converted to SI on load. Unknown keys are rejected so
that a typo cannot silently fall back to a default.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .augment import AugmentConfig
from .collector import CollectConfig
from .errors import FormatError
from .geometry import DEG, MM, Pose6, board_from_dict, board_to_dict, resolve_task, task_to_dict
from .localizer import LocalizerConfig
from .policy import PolicyConfig
from .regressor import TrainConfig
from .sim import SimConfig

# (json key, attribute, scale) for keys stored in display units
_UNITS = {
    "collect": [("b0_mm", "b0", MM), ("c0_deg", "c0", DEG), ("z_max_mm", "z_max", MM)],
    "sim": [("grasp_tilt_max_deg", "grasp_tilt_max", DEG), ("grasp_shift_max_mm", "grasp_shift_max", MM)],
    "policy": [("approach_height_mm", "approach_height", MM)],
    "localizer": [
        ("search_xy_mm", "search_xy", MM), ("search_theta_deg", "search_theta", DEG),
        ("coarse_xy_mm", "coarse_xy", MM), ("coarse_theta_deg", "coarse_theta", DEG),
        ("fine_xy_mm", "fine_xy", MM), ("fine_theta_deg", "fine_theta", DEG),
    ],
}


def _section(cls, name: str, d: dict | None):
    d = dict(d or {})
    kwargs = {}
    for key, attr, scale in _UNITS.get(name, []):
        if key in d:
            kwargs[attr] = float(d.pop(key)) * scale
    if name == "sim" and "slip_step" in d:
        kwargs["slip_step"] = Pose6.from_mm_deg(*d.pop("slip_step"))
    names = {f.name for f in fields(cls)}
    for key, value in d.items():
        if key not in names:
            raise FormatError(f"unknown key {name}.{key}")
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid {name} section: {exc}") from exc


def _dump(obj, name: str) -> dict:
    d = asdict(obj)
    for key, attr, scale in _UNITS.get(name, []):
        d[key] = d.pop(attr) / scale
    if name == "sim":
        d["slip_step"] = obj.slip_step.to_mm_deg()
    # JSON round trip turns nested tuples into lists so snapshots compare equal after reload
    return json.loads(json.dumps(dict(sorted(d.items()))))


@dataclass
class EvalSettings:
    trials: int = 200
    b0: float = 10 * MM
    c0: float = 10 * DEG


@dataclass
class CurveSettings:
    sizes: tuple = (10, 15, 20, 25, 30, 50, 100, 200)
    trials: int = 50
    steps: int | None = None


@dataclass
class GeneralizeSettings:
    trials: int = 50
    board_poses: tuple = (
        (0.0, 0.0, 0.0),
        (150.0, 100.0, 90.0),
        (-150.0, 100.0, 180.0),
        (-150.0, -100.0, -90.0),
        (150.0, -100.0, 45.0),
    )
    recolor: tuple = (0.85, 0.2, 0.15)
    shape_peg_mm: tuple = (20.0, 17.0)


@dataclass
class TransferSettings:
    source_task: str = "square_1mm"
    target_task: str = "plug_1mm"
    k_grid: tuple = (0, 5, 10, 15, 20)
    scratch_sizes: tuple = (10, 20, 30, 40, 50)
    trials: int = 50
    steps: int = 3000
    threshold: float = 0.9
    finetune_lr: float = 1e-4
    rehearsal: bool = True  # mix source samples into fine-tuning batches


@dataclass
class AssemblySettings:
    board_offset: tuple = (10.0, 0.0, 5.0)
    samples_per_task: int = 100
    reference_height_mm: float = 300.0


_EXTRA = {
    "eval": (EvalSettings, [("b0_mm", "b0", MM), ("c0_deg", "c0", DEG)]),
    "curve": (CurveSettings, []),
    "generalize": (GeneralizeSettings, []),
    "transfer": (TransferSettings, []),
    "assembly": (AssemblySettings, []),
}
for _name, (_cls, _units) in _EXTRA.items():
    _UNITS.setdefault(_name, _units)


@dataclass
class BenchConfig:
    task: object = "square_1mm"
    board: dict | None = None
    seed: int = 0
    collect: CollectConfig = field(default_factory=CollectConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    localizer: LocalizerConfig = field(default_factory=LocalizerConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    curve: CurveSettings = field(default_factory=CurveSettings)
    generalize: GeneralizeSettings = field(default_factory=GeneralizeSettings)
    transfer: TransferSettings = field(default_factory=TransferSettings)
    assembly: AssemblySettings = field(default_factory=AssemblySettings)

    def task_spec(self):
        return resolve_task(self.task)

    def board_layout(self):
        return None if self.board is None else board_from_dict(self.board)

    def with_seed(self, seed: int) -> "BenchConfig":
        """Propagate one master seed into every stage."""
        self.seed = int(seed)
        self.collect.rng_seed = self.seed
        self.sim.rng_seed = self.seed
        self.augment.rng_seed = self.seed
        self.train.rng_seed = self.seed
        return self

    def to_dict(self) -> dict:
        task = self.task if isinstance(self.task, str) else task_to_dict(resolve_task(self.task))
        out = {"task": task, "seed": self.seed}
        if self.board is not None:
            out["board"] = board_to_dict(board_from_dict(self.board))
        for name, _ in _SECTIONS:
            out[name] = _dump(getattr(self, name), name)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = [
    ("collect", CollectConfig),
    ("sim", SimConfig),
    ("augment", AugmentConfig),
    ("train", TrainConfig),
    ("policy", PolicyConfig),
    ("localizer", LocalizerConfig),
    ("eval", EvalSettings),
    ("curve", CurveSettings),
    ("generalize", GeneralizeSettings),
    ("transfer", TransferSettings),
    ("assembly", AssemblySettings),
]


def config_from_dict(d: dict) -> BenchConfig:
    if not isinstance(d, dict):
        raise FormatError("config document must be a JSON object")
    d = dict(d)
    known = {"task", "board", "seed"} | {n for n, _ in _SECTIONS}
    extra = set(d) - known
    if extra:
        raise FormatError(f"unknown config keys: {sorted(extra)}")
    kwargs = {n: _section(cls, n, d.get(n)) for n, cls in _SECTIONS}
    cfg = BenchConfig(task=d.get("task", "square_1mm"), board=d.get("board"), **kwargs)
    cfg.task_spec()
    cfg.board_layout()
    if "seed" in d:
        cfg.with_seed(int(d["seed"]))
    return cfg


def load_config(path) -> BenchConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    try:
        return config_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {path} is not valid JSON: {exc}") from exc
