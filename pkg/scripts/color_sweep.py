"""Success of augmented versus plain policies on recolored pegs.

    python3 scripts/color_sweep.py --params P_AUG --params-plain P_PLAIN [--trials 50]

Both parameter files come from ``insertbench train`` on the same dataset, the
second with ``"train": {"augment": false}`` in the config.
"""
import argparse

from insertbench import experiments as ex
from insertbench.config import BenchConfig
from insertbench.regressor import load_params

COLORS = [(0.1, 0.1, 0.1), (0.95, 0.95, 0.95), (0.85, 0.2, 0.15), (0.2, 0.6, 0.25), (0.5, 0.5, 0.5), (0.1, 0.2, 0.7)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--params", required=True)
    ap.add_argument("--params-plain", required=True)
    ap.add_argument("--trials", type=int, default=50)
    args = ap.parse_args()
    cfg = BenchConfig()
    aug, plain = load_params(args.params), load_params(args.params_plain)
    print("color, augmented, plain")
    for c in COLORS:
        task = ex.recolored(cfg.task_spec(), c)
        a, _ = ex.score(cfg, task, aug, trials=args.trials)
        p, _ = ex.score(cfg, task, plain, trials=args.trials)
        print(f"{c}, {a:.2f}, {p:.2f}", flush=True)


if __name__ == "__main__":
    main()
