"""Datasets, labeled/unlabeled splits, and the infinite SSL batch stream.

Images are kept as uint8 (N, H, W, 3) arrays internally and converted to
float32 in [0, 1] at batch-assembly time. The unlabeled pool is the full
training set (labeled images appear there too, as is conventional for this
method family); STL-10 additionally folds in its dedicated unlabeled set.

Stream determinism: the index drawn at stream position p depends only on
(seed, stream-id, p // n) through a per-epoch permutation, so the batch at
step k is a pure function of (seed, k) and resuming at step k needs no
serialized RNG state.
"""

import os
from dataclasses import dataclass

import numpy as np


class DatasetError(RuntimeError):
    pass


@dataclass
class DatasetHandle:
    name: str
    train_images: np.ndarray   # uint8 (N,H,W,3)
    train_labels: np.ndarray   # int64 (N,)
    test_images: np.ndarray
    test_labels: np.ndarray
    num_classes: int
    extra_unlabeled: np.ndarray = None  # e.g. STL-10's unlabeled split

    @property
    def image_mean(self):
        """Per-channel mean in [0,1]; Cutout fill color."""
        return self.train_images.astype(np.float64).mean(axis=(0, 1, 2)) / 255.0

    @property
    def unlabeled_pool(self):
        if self.extra_unlabeled is not None:
            return np.concatenate([self.train_images, self.extra_unlabeled])
        return self.train_images


def load_dataset(name, root):
    """Load one of the published benchmark datasets from its standard layout."""
    try:
        import torchvision.datasets as tvd
    except ImportError as exc:
        raise DatasetError("torchvision is required for benchmark datasets") from exc

    def _fail(exc):
        raise DatasetError(
            "dataset %r not found under %r (%s); download it in its standard "
            "published layout and point --data-root at it" % (name, root, exc))

    try:
        if name == "cifar10":
            tr = tvd.CIFAR10(root, train=True, download=False)
            te = tvd.CIFAR10(root, train=False, download=False)
            return DatasetHandle(name, tr.data, np.asarray(tr.targets, dtype=np.int64),
                                 te.data, np.asarray(te.targets, dtype=np.int64), 10)
        if name == "cifar100":
            tr = tvd.CIFAR100(root, train=True, download=False)
            te = tvd.CIFAR100(root, train=False, download=False)
            return DatasetHandle(name, tr.data, np.asarray(tr.targets, dtype=np.int64),
                                 te.data, np.asarray(te.targets, dtype=np.int64), 100)
        if name == "svhn":
            tr = tvd.SVHN(root, split="train", download=False)
            te = tvd.SVHN(root, split="test", download=False)
            to_hwc = lambda d: np.transpose(d, (0, 2, 3, 1))
            return DatasetHandle(name, to_hwc(tr.data), tr.labels.astype(np.int64),
                                 to_hwc(te.data), te.labels.astype(np.int64), 10)
        if name == "stl10":
            tr = tvd.STL10(root, split="train", download=False)
            te = tvd.STL10(root, split="test", download=False)
            un = tvd.STL10(root, split="unlabeled", download=False)
            to_hwc = lambda d: np.transpose(d, (0, 2, 3, 1))
            return DatasetHandle(name, to_hwc(tr.data), tr.labels.astype(np.int64),
                                 to_hwc(te.data), te.labels.astype(np.int64), 10,
                                 extra_unlabeled=to_hwc(un.data))
    except (RuntimeError, FileNotFoundError) as exc:
        _fail(exc)
    raise DatasetError("unknown dataset %r" % name)


# ---------------------------------------------------------------------------
# Synthetic shapes: procedurally rendered triangle / square / disc images with
# background-color, shape-color, position, size, and rotation jitter plus
# pixel noise. Augmentation-sensitive like natural images, but generable in CI.

_SHAPE_NAMES = ("disc", "square", "triangle", "ring")  # ring = distractor class


def _render_shape(kind, size, rng):
    # foreground always brighter than background, but both with free hue:
    # enough intra-class variety that a handful of labels underdetermines the
    # task while the unlabeled pool still covers the color space
    bg = rng.uniform(0.0, 0.45, size=3)
    fg = rng.uniform(0.55, 1.0, size=3)
    cx = rng.uniform(size * 0.34, size * 0.66)
    cy = rng.uniform(size * 0.34, size * 0.66)
    radius = rng.uniform(size * 0.20, size * 0.32)
    angle = rng.uniform(0.0, 2.0 * np.pi)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    x = xx - cx
    y = yy - cy
    xr = np.cos(angle) * x + np.sin(angle) * y
    yr = -np.sin(angle) * x + np.cos(angle) * y

    if kind == "disc":
        dist = np.hypot(x, y) - radius
    elif kind == "square":
        dist = np.maximum(np.abs(xr), np.abs(yr)) - radius * 0.9
    elif kind == "triangle":
        # equilateral triangle as intersection of three half-planes
        d1 = yr - radius * 0.5
        d2 = (-yr - np.sqrt(3.0) * xr) / 2.0 - radius * 0.5
        d3 = (-yr + np.sqrt(3.0) * xr) / 2.0 - radius * 0.5
        dist = np.maximum(np.maximum(d1, d2), d3)
    elif kind == "ring":
        dist = np.abs(np.hypot(x, y) - radius) - radius * 0.25
    else:
        raise ValueError(kind)

    alpha = 1.0 / (1.0 + np.exp(np.clip(dist * 2.5, -30, 30)))  # soft edge
    img = bg[None, None, :] * (1.0 - alpha[:, :, None]) + fg[None, None, :] * alpha[:, :, None]
    img = img + rng.normal(0.0, 0.04, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def synthetic_shapes(num_classes=3, n_train=6000, n_test=600, size=32, seed=0,
                     distractor_in_unlabeled=False):
    """Deterministic procedurally generated shape-classification dataset.

    With distractor_in_unlabeled=True an extra out-of-distribution class is
    appended to the unlabeled pool only (mimicking a wider unlabeled
    distribution).
    """
    if not (1 <= num_classes <= 3):
        raise DatasetError("synthetic shapes supports 1..3 classes")

    def _gen(n, rng):
        labels = np.arange(n) % num_classes
        imgs = np.stack([_render_shape(_SHAPE_NAMES[c], size, rng) for c in labels])
        return (imgs * 255.0).round().astype(np.uint8), labels.astype(np.int64)

    train_rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    test_rng = np.random.default_rng(np.random.SeedSequence([seed, 202]))
    train_images, train_labels = _gen(n_train, train_rng)
    test_images, test_labels = _gen(n_test, test_rng)
    extra = None
    if distractor_in_unlabeled:
        extra_rng = np.random.default_rng(np.random.SeedSequence([seed, 303]))
        n_extra = max(1, n_train // 10)
        extra = np.stack([_render_shape("ring", size, extra_rng) for _ in range(n_extra)])
        extra = (extra * 255.0).round().astype(np.uint8)
    return DatasetHandle("synthetic", train_images, train_labels,
                         test_images, test_labels, num_classes, extra_unlabeled=extra)


# ---------------------------------------------------------------------------
# Labeled splits

@dataclass
class LabeledSplit:
    labeled_indices: np.ndarray  # unique dataset indices, sorted
    fold_seed: int
    per_class_counts: dict


def make_split(dataset, num_labels, fold_seed):
    """Deterministic class-balanced labeled index set (balanced when divisible)."""
    n = len(dataset.train_labels)
    if num_labels > n:
        raise DatasetError("num_labels %d exceeds dataset size %d" % (num_labels, n))
    c = dataset.num_classes
    if num_labels < c:
        raise DatasetError("num_labels %d < %d classes; balanced split impossible"
                           % (num_labels, c))
    rng = np.random.default_rng(np.random.SeedSequence([int(fold_seed), 7]))
    per_class = num_labels // c
    remainder = num_labels - per_class * c
    chosen = []
    classes = np.arange(c)
    extra_classes = set(rng.choice(classes, size=remainder, replace=False)) if remainder else set()
    for cls in classes:
        pool = np.flatnonzero(dataset.train_labels == cls)
        want = per_class + (1 if cls in extra_classes else 0)
        if want > len(pool):
            raise DatasetError("class %d has only %d examples, need %d" % (cls, len(pool), want))
        chosen.append(rng.choice(pool, size=want, replace=False))
    idx = np.sort(np.concatenate(chosen)).astype(np.int64)
    counts = {int(cls): int((dataset.train_labels[idx] == cls).sum()) for cls in classes}
    return LabeledSplit(idx, int(fold_seed), counts)


def save_split(split, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# fold_seed = %d\n" % split.fold_seed)
        for i in split.labeled_indices:
            fh.write("%d\n" % i)


def load_split(path, dataset=None):
    fold_seed = 0
    idx = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                if "fold_seed" in line:
                    fold_seed = int(line.split("=", 1)[1])
                continue
            if line:
                idx.append(int(line))
    idx = np.asarray(sorted(idx), dtype=np.int64)
    counts = {}
    if dataset is not None:
        counts = {int(c): int((dataset.train_labels[idx] == c).sum())
                  for c in range(dataset.num_classes)}
    return LabeledSplit(idx, fold_seed, counts)


# ---------------------------------------------------------------------------
# Batch stream

@dataclass
class SslBatch:
    labeled_images: np.ndarray    # float32 (B,H,W,3) in [0,1], raw (unaugmented)
    labels_onehot: np.ndarray     # float32 (B,C)
    unlabeled_images: np.ndarray  # float32 (mu*B,H,W,3), raw
    step: int


_LABELED_STREAM, _UNLABELED_STREAM = 11, 22


def _stream_indices(n, start_pos, count, seed, stream_id):
    """Indices at positions [start_pos, start_pos+count) of an epoch-shuffled stream."""
    out = np.empty(count, dtype=np.int64)
    perm_epoch, perm = -1, None
    for j in range(count):
        pos = start_pos + j
        epoch, offset = divmod(pos, n)
        if epoch != perm_epoch:
            rng = np.random.default_rng(np.random.SeedSequence([seed, stream_id, epoch]))
            perm = rng.permutation(n)
            perm_epoch = epoch
        out[j] = perm[offset]
    return out


def batch_at(dataset, split, cfg, seed, k):
    """The SslBatch for step k; a pure function of (dataset, split, seed, k)."""
    b, m = cfg.batch_size_labeled, cfg.batch_size_labeled * cfg.mu
    lab = split.labeled_indices
    lab_idx = lab[_stream_indices(len(lab), k * b, b, seed, _LABELED_STREAM)]
    pool = dataset.unlabeled_pool
    unlab_idx = _stream_indices(len(pool), k * m, m, seed, _UNLABELED_STREAM)
    labels = dataset.train_labels[lab_idx]
    onehot = np.zeros((b, cfg.num_classes), dtype=np.float32)
    onehot[np.arange(b), labels] = 1.0
    return SslBatch(
        labeled_images=dataset.train_images[lab_idx].astype(np.float32) / 255.0,
        labels_onehot=onehot,
        unlabeled_images=pool[unlab_idx].astype(np.float32) / 255.0,
        step=k,
    )


def batch_stream(dataset, split, cfg, seed, start_step=0):
    """Infinite deterministic stream of SslBatch, starting at start_step."""
    k = start_step
    while True:
        yield batch_at(dataset, split, cfg, seed, k)
        k += 1
