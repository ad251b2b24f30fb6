"""Render the synthetic shapes dataset and its weak/strong augmentations.

Writes a contact sheet (raw / weak / strong rows) so you can eyeball what the
teacher and student branches actually see.

Usage: python demos/01_dataset_and_augmentations.py --out /tmp/augs.png
"""

import argparse

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from doublematch.augment import default_policy, strong_augment, weak_augment
from doublematch.data import synthetic_shapes


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="augmentations.png")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = synthetic_shapes(num_classes=3, n_train=60, n_test=9, seed=args.seed)
    policy = default_policy(fill=tuple(ds.image_mean))
    rng = np.random.default_rng(args.seed)

    n = 6
    fig, axes = plt.subplots(3, n, figsize=(1.6 * n, 5.0))
    for col in range(n):
        raw = ds.train_images[col].astype(np.float32) / 255.0
        for row, (title, img) in enumerate([
                ("raw", raw),
                ("weak", weak_augment(raw, rng)),
                ("strong", strong_augment(raw, policy, rng))]):
            ax = axes[row, col]
            ax.imshow(img)
            ax.set_xticks([])
            ax.set_yticks([])
            if col == 0:
                ax.set_ylabel(title)
        axes[0, col].set_title("class %d" % ds.train_labels[col])
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print("wrote %s" % args.out)


if __name__ == "__main__":
    main()
