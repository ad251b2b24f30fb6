"""Drive the ablation and reporting CLI on miniature runs.

Shows the self-supervised loss-function ablation (cosine / MSE / softmax-CE
at two temperatures), the pseudo-label on/off pairing, and the summarize
output format, all at a tiny step count so the whole script finishes quickly.

Usage: python demos/04_ablations_and_reporting.py --out-dir /tmp/ablation-demo
"""

import argparse
import glob
import os

from doublematch.cli import main as cli

FAST = ["--set", "total_steps=60", "--set", "eval_interval=20",
        "--set", "feature_dim=16", "--set", "batch_size_labeled=4",
        "--set", "mu=2", "--set", "ema_momentum=0.9", "--quiet"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="ablation-demo")
    args = ap.parse_args()

    loss_dir = os.path.join(args.out_dir, "loss")
    print("== ablate-loss: four self-supervised loss variants on one split")
    assert cli(["ablate-loss", "--preset", "desk-synthetic",
                "--out", loss_dir] + FAST) == 0

    pseudo_dir = os.path.join(args.out_dir, "pseudo")
    print("== ablate-pseudo: paired with/without pseudo-label runs")
    assert cli(["ablate-pseudo", "--preset", "desk-synthetic", "--labels", "12,30",
                "--out", pseudo_dir] + FAST) == 0

    print("== summarize: fold statistics over the four loss-ablation logs")
    logs = sorted(glob.glob(os.path.join(loss_dir, "*", "metrics.csv")))
    assert cli(["summarize"] + logs) == 0

    fig = os.path.join(args.out_dir, "comparison.png")
    labels = [p.split(os.sep)[-2] for p in logs]
    argv = ["plot"] + logs + ["--dataset", "synthetic", "--out", fig]
    for lab in labels:
        argv += ["--label", lab]
    assert cli(argv) == 0


if __name__ == "__main__":
    main()
