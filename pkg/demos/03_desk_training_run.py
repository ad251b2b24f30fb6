"""Train the desk-scale preset end to end and plot the accuracy curve.

Runs a shortened DoubleMatch experiment on the synthetic shapes dataset
(30 labels, the rest unlabeled), then a supervised-only control, and plots
both curves. Takes a few minutes on one CPU core with the default steps.

Usage: python demos/03_desk_training_run.py --out-dir /tmp/desk-demo [--steps 1000]
"""

import argparse
import os

from doublematch.config import preset
from doublematch.data import make_split, synthetic_shapes
from doublematch.metrics import MetricLog, plot_accuracy_curves, run_stats
from doublematch.trainer import run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="desk-demo")
    ap.add_argument("--steps", type=int, default=1000)
    args = ap.parse_args()

    cfg = preset("desk-synthetic").replace(total_steps=args.steps)
    ds = synthetic_shapes(num_classes=cfg.num_classes, seed=0)
    split = make_split(ds, cfg.num_labels, fold_seed=0)
    print("labeled examples: %d of %d (%s per class)"
          % (len(split.labeled_indices), len(ds.train_labels), split.per_class_counts))

    runs = {}
    for name, overrides in [("doublematch", {}),
                            ("supervised", {"w_s": 0.0, "tau": 1.01})]:
        out = os.path.join(args.out_dir, name)
        print("== %s -> %s" % (name, out))
        result = run(cfg.replace(**overrides), ds, split, out, progress=True)
        stats = run_stats(MetricLog.load(result.log_path))
        print("%s: min %.4f  last-20 median %.4f" % (name, stats.min_error,
                                                     stats.last20_median))
        runs[name] = [MetricLog.load(result.log_path)]

    fig = os.path.join(args.out_dir, "curves.png")
    plot_accuracy_curves({"synthetic": runs}, fig)
    print("wrote %s" % fig)


if __name__ == "__main__":
    main()
