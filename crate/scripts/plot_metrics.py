#!/usr/bin/env python3
"""Plot a metrics.csv written by `dysnet train`."""

import argparse
import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("metrics", help="path to metrics.csv")
    parser.add_argument("-o", "--out", default="metrics.png")
    args = parser.parse_args()

    with open(args.metrics, newline="") as f:
        rows = list(csv.DictReader(f))
    epochs = [int(r["epoch"]) for r in rows]

    fig, (loss_ax, regret_ax) = plt.subplots(1, 2, figsize=(10, 4))
    loss_ax.plot(epochs, [float(r["train_loss"]) for r in rows], label="train")
    loss_ax.plot(epochs, [float(r["val_loss"]) for r in rows], label="validation")
    loss_ax.set_xlabel("epoch")
    loss_ax.set_ylabel("l2 loss")
    loss_ax.legend()
    regret_ax.plot(epochs, [float(r["val_normalized_regret"]) for r in rows])
    regret_ax.set_xlabel("epoch")
    regret_ax.set_ylabel("validation normalized regret")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
