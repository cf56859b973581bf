"""Collect, train and evaluate the headline square-peg policy, with timings.

    python3 scripts/headline.py --out-dir results/headline [--trials 200] [--seed 0]
"""
import argparse
import time
from pathlib import Path

import numpy as np

from insertbench import experiments as ex
from insertbench.collector import write_dataset
from insertbench.config import BenchConfig
from insertbench.regressor import init_params, save_params


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", type=Path, default=Path("results/headline"))
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    cfg = BenchConfig().with_seed(args.seed)
    task = cfg.task_spec()

    t0 = time.perf_counter()
    data = ex.collect(cfg)
    write_dataset(data, args.out_dir / "data.bin")
    t1 = time.perf_counter()
    params = ex.fit(cfg, data)
    save_params(params, args.out_dir / "params.bin")
    t2 = time.perf_counter()
    rate, mean = ex.score(cfg, task, params, trials=args.trials)
    t3 = time.perf_counter()
    zero, _ = ex.score(cfg, task, init_params(np.random.default_rng(0)), trials=args.trials)

    print(f"samples collected   {len(data)} ({t1 - t0:.1f} s)")
    print(f"training            {cfg.train.steps} steps ({t2 - t1:.1f} s)")
    print(f"success rate        {rate:.3f} over {args.trials} trials ({t3 - t2:.1f} s)")
    print(f"mean duration       {mean:.2f} s (successful trials)")
    print(f"zero-head baseline  {zero:.3f}")


if __name__ == "__main__":
    main()
