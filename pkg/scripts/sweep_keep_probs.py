"""Final test loss over a keep-probability grid for both dropout variants.

    python3 scripts/sweep_keep_probs.py --model linear --seed 0
"""

import argparse
import copy

from sbdropout.config import config_from_dict
from sbdropout.experiments import map_ordered, sweep_cells, training_summary

GRIDS = {
    "linear": {"keep_prob": [0.3, 0.5, 0.7, 0.9, 1.0]},
    "text_cnn": {"keep_prob_input": [0.6, 0.8, 1.0], "keep_prob_hidden": [0.4, 0.6, 0.8, 1.0]},
}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", choices=sorted(GRIDS), default="linear")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--parallel", type=int, default=1)
    args = parser.parse_args()

    base = config_from_dict({"task": "sweep", "model": args.model, "seed": args.seed,
                             "epochs": args.epochs, "sweep": GRIDS[args.model]})
    for variant in ("standard", "self_balanced"):
        cfg = copy.deepcopy(base)
        cfg.dropout.variant = variant
        cells = sweep_cells(cfg)
        for cell, summary in zip(cells, map_ordered(training_summary, cells, args.parallel)):
            probs = cell.keep_probs() if args.model == "text_cnn" else (cell.dropout.keep_prob,)
            final = summary["final"]
            shown = "diverged" if final is None else f"test_loss {final['test_loss']:.4f}"
            print(f"{variant:14s} keep {probs}: {shown}")


if __name__ == "__main__":
    main()
