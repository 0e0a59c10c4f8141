"""Per-epoch ||x_mask|| and ||w||/||X|| for the linear model and the text CNN.

    python3 scripts/norm_trajectories.py --seeds 5 --epochs 30
"""

import argparse

from sbdropout.config import config_from_dict
from sbdropout.experiments import run_training

RUNS = {
    "linear": {"model": "linear", "data": {"rho": 0.95}, "dropout": {"keep_prob": 0.7}},
    "text_cnn": {"model": "text_cnn", "data": {"rho": 0.95, "n_train": 200, "n_test": 200},
                 "dropout": {"keep_prob_input": 0.8, "keep_prob_hidden": 0.6}},
}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--model", choices=sorted(RUNS), default=None)
    args = parser.parse_args()

    for name, doc in RUNS.items():
        if args.model and name != args.model:
            continue
        grows = falls = 0
        for seed in range(args.seeds):
            records = run_training(config_from_dict(dict(doc, seed=seed, epochs=args.epochs)))
            print(f"{name} seed {seed}")
            print("  epoch  ||x_mask||  ||w||/||X||  test_loss")
            for r in records:
                print(f"  {r.epoch:5d}  {r.norm_x_mask:10.4f}  {r.ratio_w_over_x:11.4f}  {r.test_loss:9.4f}")
            third, last = records[min(2, len(records) - 1)], records[-1]
            grows += last.norm_x_mask > third.norm_x_mask
            falls += last.ratio_w_over_x < third.ratio_w_over_x
        print(f"{name}: mask norm grows in {grows}/{args.seeds}, weight/input ratio falls in "
              f"{falls}/{args.seeds}\n")


if __name__ == "__main__":
    main()
