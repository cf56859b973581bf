"""End-to-end acceptance suite: one test per criterion, each printing PASS/FAIL.

Trained parameters and collected datasets are cached under
``.acceptance_cache/`` (or ``$INSERTBENCH_CACHE``) keyed by a hash of the
package sources and the build recipe, so a rerun after a code change
rebuilds everything while an unchanged tree reuses the artifacts. The
recorded build time is used for the runtime criterion.
"""
import hashlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

import insertbench
from conftest import ACCEPTANCE_RESULTS
from insertbench import experiments as ex
from insertbench.cli import main
from insertbench.collector import decode_dataset, encode_dataset, read_dataset, write_dataset
from insertbench.config import BenchConfig
from insertbench.errors import LocalizationFailed
from insertbench.geometry import DEG, MM, Pose6, apply_correction, single_socket_board, wrap_angle
from insertbench.localizer import localize, register_reference
from insertbench.regressor import (
    init_params,
    layer_shapes,
    load_params,
    loss_and_grad,
    loss_and_grad_normalized,
    normalize_label,
    normalize_wrench,
    save_params,
    train,
    TrainConfig,
)
from insertbench.sensors import LOCALIZER_CAMERA

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("INSERTBENCH_CACHE", ROOT / ".acceptance_cache"))
CFG = BenchConfig()


def verdict(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# -- artifact cache --------------------------------------------------------------------


def _source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(insertbench.__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def _key(name: str, recipe: dict) -> Path:
    h = hashlib.sha256((_source_digest() + name + json.dumps(recipe, sort_keys=True)).encode()).hexdigest()
    CACHE.mkdir(parents=True, exist_ok=True)
    return CACHE / f"{name}-{h[:16]}"


def _cached(name, recipe, build, save, load, suffix):
    base = _key(name, recipe)
    path, meta = base.with_suffix(suffix), base.with_suffix(".json")
    if path.exists() and meta.exists():
        return load(path), json.loads(meta.read_text())["seconds"]
    t0 = time.perf_counter()
    obj = build()
    seconds = time.perf_counter() - t0
    save(obj, path)
    meta.write_text(json.dumps({"seconds": seconds, "recipe": recipe}))
    return load(path), seconds


def headline_dataset():
    """100 collection trials on the headline task, as read back from disk."""
    return _cached(
        "data100", {"seed": CFG.seed, "n_p": 100},
        lambda: ex.collect(CFG, n=100), write_dataset, read_dataset, ".bin",
    )


def cached_policy(name, recipe, build):
    return _cached(name, recipe, build, save_params, load_params, ".bin")


@pytest.fixture(scope="module")
def data100():
    return headline_dataset()


@pytest.fixture(scope="module")
def headline(data100):
    data, t_collect = data100
    params, t_train = cached_policy("headline", {"steps": CFG.train.steps}, lambda: ex.fit(CFG, data))
    return params, t_collect + t_train


@pytest.fixture(scope="module")
def plain(data100):
    data, _ = data100
    return cached_policy("plain", {"steps": CFG.train.steps}, lambda: ex.fit(CFG, data, augment=False))[0]


@pytest.fixture(scope="module")
def ten_sample(data100):
    data, _ = data100
    return cached_policy("ten", {"steps": CFG.train.steps}, lambda: ex.fit(CFG, data.head(10)))[0]


# -- criteria ----------------------------------------------------------------------------


def test_criterion_01_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    p = init_params(rng).astype(np.float64)
    for k, v in p.tensors.items():
        if k.startswith("head") or k.endswith(".b"):
            p.tensors[k] = rng.normal(0, 0.1, v.shape)
    images = rng.random((2, 64, 64, 3))
    wn = normalize_wrench(p, rng.normal(0, 3, (2, 6)))
    ln = normalize_label(p, rng.normal(0, 0.005, (2, 5)))
    _, g = loss_and_grad_normalized(p, images, wn, ln)
    kinds = {
        "conv": [k for k in layer_shapes(p.image_shape) if k.startswith("conv")],
        "fully-connected": [k for k in layer_shapes(p.image_shape) if not k.startswith("conv")],
    }
    h, worst = 1e-4, {}
    for kind, names in kinds.items():
        worst[kind] = 0.0
        for i in range(20):
            name = names[i % len(names)]
            t = p.tensors[name]
            idx = tuple(int(rng.integers(0, d)) for d in t.shape)
            orig = t[idx]
            t[idx] = orig + h
            lp, _ = loss_and_grad_normalized(p, images, wn, ln)
            t[idx] = orig - h
            lm, _ = loss_and_grad_normalized(p, images, wn, ln)
            t[idx] = orig
            a = g[name][idx]
            worst[kind] = max(worst[kind], abs(a - (lp - lm) / (2 * h)) / max(1.0, abs(a)))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items())
    verdict(1, ok, f"{detail}; {elapsed:.1f} s")


def test_criterion_02_overfit(data100):
    data = data100[0].head(10)
    t0 = time.perf_counter()
    params, losses = train(data, None, TrainConfig(steps=2000, augment=False))
    elapsed = time.perf_counter() - t0
    images, wrenches, labels = data.arrays()
    loss, _ = loss_and_grad(params, images, wrenches, labels)
    ok = losses[-1] < 1e-3 and loss < 1e-3 and elapsed < 120
    verdict(2, ok, f"final batch loss {losses[-1]:.2e}, full-set loss {loss:.2e}; {elapsed:.1f} s")


def test_criterion_03_headline(headline):
    params, t_build = headline
    task = CFG.task_spec()
    t0 = time.perf_counter()
    rate, mean = ex.score(CFG, task, params, trials=200)
    t_eval = time.perf_counter() - t0
    zero_rate, _ = ex.score(CFG, task, init_params(np.random.default_rng(0)), trials=200)
    total = t_build + t_eval
    ok = rate >= 0.90 and mean < 10.0 and total < 15 * 60 and zero_rate <= 0.05
    verdict(
        3, ok,
        f"success {rate:.3f} (>= 0.90), mean duration {mean:.2f} s, collect+train+eval {total / 60:.1f} min, "
        f"zero-head {zero_rate:.3f} (<= 0.05)",
    )


def test_criterion_04_sample_efficiency(headline, ten_sample):
    task = CFG.task_spec()
    s100, _ = ex.score(CFG, task, headline[0], trials=50)
    s10, _ = ex.score(CFG, task, ten_sample, trials=50)
    ok = s100 >= s10 + 0.3 and s100 >= 0.9
    verdict(4, ok, f"100 samples {s100:.2f}, 10 samples {s10:.2f}")


def test_criterion_05_spatial_invariance(headline, data100):
    task = CFG.task_spec()
    rates = []
    for x, y, th in CFG.generalize.board_poses:
        board = single_socket_board(task, Pose6(x * MM, y * MM, 0, 0, 0, th * DEG))
        rates.append(ex.score(CFG, task, headline[0], board, trials=50)[0])
    base, moved = rates[0], rates[1:]
    within = all(abs(r - base) <= 0.10 for r in moved)
    # exact property: the same collection on a moved board is byte-identical (renders and labels)
    ref = encode_dataset(ex.collect(CFG, n=10))
    same = all(
        encode_dataset(ex.collect(CFG, n=10, board=single_socket_board(task, Pose6(x * MM, y * MM, 0, 0, 0, th * DEG))))
        == ref
        for x, y, th in CFG.generalize.board_poses[1:]
    )
    verdict(5, within and same, f"trained pose {base:.2f}, moved {[round(r, 2) for r in moved]}, bit-identical data {same}")


def test_criterion_06_color_ablation(headline, plain):
    task = ex.recolored(CFG.task_spec(), CFG.generalize.recolor)
    aug, _ = ex.score(CFG, task, headline[0], trials=50)
    noaug, _ = ex.score(CFG, task, plain, trials=50)
    verdict(6, aug >= noaug + 0.2, f"recolored {CFG.generalize.recolor}: augmented {aug:.2f}, plain {noaug:.2f}")


def test_criterion_07_transfer(headline):
    t = CFG.transfer
    base = _key("transfer", {"target": t.target_task, "steps": t.steps, "k": list(t.k_grid), "n": list(t.scratch_sizes)})
    path = base.with_suffix(".csv")
    if not path.exists():
        ex.write_report(ex.run_transfer(CFG, headline[0], trials=t.trials), path)
    rows = ex.read_report_rows(path)
    rep = ex.Report("transfer")
    for r in rows:
        rep.add(r["condition"], r["task_id"], int(r["n_samples"]), float(r["success_rate"]), float(r["mean_duration"]),
                int(r["seed"]), int(r["trials"]))
    ft = ex.samples_to_threshold(rep, "finetune", t.threshold)
    sc = ex.samples_to_threshold(rep, "scratch", t.threshold)
    # when scratch never reaches the threshold it needs more than the largest size tried
    sc_need = sc if sc is not None else max(t.scratch_sizes) + 1
    ok = ft is not None and ft <= sc_need / 2
    table = ", ".join(f"{r['condition'][0]}{r['n_samples']}={float(r['success_rate']):.2f}" for r in rows)
    verdict(7, ok, f"{t.source_task}->{t.target_task}: fine-tune needs {ft}, scratch needs {sc or '>' + str(max(t.scratch_sizes))}; {table}")


def test_criterion_08_collector_invariants(data100):
    data, _ = data100
    fresh = ex.collect(CFG, n=100)
    goal = CFG.task_spec().goal_pose
    cap = all(s.wrench.exceeds(CFG.collect.f_th, CFG.collect.m_th) for s in fresh.records)
    worst = 0.0
    for s in fresh.records:
        back = apply_correction(s.contact_pose, s.label)
        worst = max(worst, abs(back.x - goal.x), abs(back.y - goal.y), *np.abs(wrap_angle(back.angles - goal.angles)))
    raw = encode_dataset(fresh)
    round_trip = encode_dataset(decode_dataset(raw)) == raw and decode_dataset(raw) == fresh.quantized()
    cached = encode_dataset(data) == raw
    ok = cap and worst <= 1e-9 and round_trip and cached
    verdict(8, ok, f"{len(fresh)} samples, capture ok {cap}, max label residual {worst:.1e}, bit-exact round trip {round_trip}")


def test_criterion_09_localizer():
    rep = ex.run_localize_demo(CFG, 20)
    exy = max(r["err_xy_mm"] for r in rep.rows)
    eth = max(r["err_theta_deg"] for r in rep.rows)
    all_ok = all(r["status"] == "ok" for r in rep.rows)
    board = ex.default_assembly_board()
    ref = register_reference(board, LOCALIZER_CAMERA, Pose6(0, 0, CFG.assembly.reference_height_mm * MM))
    outside = [(50, 0, 0), (0, -40, 0), (0, 0, 30), (30, 30, 20)]
    raised = 0
    for x, y, th in outside:
        try:
            localize(ref, board.with_pose(Pose6(x * MM, y * MM, 0, 0, 0, th * DEG)), cfg=CFG.localizer)
        except LocalizationFailed:
            raised += 1
    ok = all_ok and exy <= 1.0 and eth <= 1.0 and raised == len(outside)
    verdict(9, ok, f"20 offsets: max error {exy:.2f} mm / {eth:.2f} deg; {raised}/{len(outside)} out-of-range offsets rejected")


TINY = {
    "task": "square_1mm",
    "seed": 11,
    "collect": {"n_p": 12},
    "train": {"steps": 8, "batch_size": 8},
    "curve": {"sizes": [4, 8], "trials": 2},
    "generalize": {"trials": 1},
    "transfer": {"k_grid": [0, 4], "scratch_sizes": [4, 8], "steps": 4, "trials": 1},
    "assembly": {"samples_per_task": 4},
}


def _cli_run(d: Path, cfg: Path) -> None:
    c = ["--config", str(cfg)]
    steps = [
        ["collect", *c, "--out", str(d / "data.bin")],
        ["train", *c, "--data", str(d / "data.bin"), "--out", str(d / "params.bin")],
        ["eval", *c, "--params", str(d / "params.bin"), "--trials", "3", "--out", str(d / "eval.csv")],
        ["curve", *c, "--data", str(d / "data.bin"), "--out", str(d / "curve.csv")],
        ["generalize", *c, "--out", str(d / "generalize.csv")],
        ["transfer", *c, "--params", str(d / "params.bin"), "--out", str(d / "transfer.csv")],
        ["assembly", *c, "--params", str(d / "params.bin"), "--out", str(d / "assembly.csv")],
        ["localize-demo", *c, "--trials", "3", "--out", str(d / "localize.csv")],
        ["eval", *c, "--params", str(d / "params.bin"), "--trials", "3", "--threads", "2", "--out", str(d / "eval2.csv")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv


def test_criterion_10_cli_determinism(tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    runs = [tmp_path / "a", tmp_path / "b"]
    for d in runs:
        d.mkdir()
        _cli_run(d, cfg)
    names = sorted(p.name for p in runs[0].iterdir())
    differ = [n for n in names if (runs[0] / n).read_bytes() != (runs[1] / n).read_bytes()]
    eval_threads = (runs[0] / "eval.csv").read_bytes() == (runs[0] / "eval2.csv").read_bytes()
    ok = not differ and sorted(p.name for p in runs[1].iterdir()) == names and eval_threads
    verdict(10, ok, f"{len(names)} files compared over 8 commands, differing: {differ or 'none'}, threads-invariant eval {eval_threads}")
