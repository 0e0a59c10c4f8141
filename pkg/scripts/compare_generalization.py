"""Paired-seed test loss of standard vs self-balanced dropout on correlated regression.

    python3 scripts/compare_generalization.py --rho 0.95 --keep-prob 0.7 --seeds 20
"""

import argparse

from sbdropout.config import config_from_dict
from sbdropout.experiments import compare_generalization


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rho", type=float, nargs="+", default=[0.0, 0.5, 0.95])
    parser.add_argument("--keep-prob", type=float, default=0.7)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--parallel", type=int, default=1)
    args = parser.parse_args()

    print("  rho  standard  self_bal  sb_wins")
    for rho in args.rho:
        cfg = config_from_dict({"task": "compare", "model": "linear", "epochs": args.epochs,
                                "data": {"rho": rho}, "dropout": {"keep_prob": args.keep_prob},
                                "compare": {"n_seeds": args.seeds}})
        out = compare_generalization(cfg, parallel=args.parallel)
        loss = out["mean_test_loss"]
        print(f"{rho:5.2f}  {loss['standard']:8.4f}  {loss['self_balanced']:8.4f}  {out['win_rate']:7.0%}")


if __name__ == "__main__":
    main()
