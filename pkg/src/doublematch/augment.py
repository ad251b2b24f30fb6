"""Weak and strong augmentation pipelines.

Images are numpy float32 arrays of shape (H, W, 3) with values in [0, 1].
The weak pipeline is a random horizontal flip followed by a random integer
translation of at most 1/8 of the image height per axis (edge-replication
padding). The strong pipeline stacks the weak pipeline, a fixed
RandAugment-style policy, and Cutout.

All functions are pure given an explicit numpy Generator, so the same
(image, seed) pair always yields a bit-identical output.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageEnhance, ImageOps


def weak_augment(img, rng):
    """Random horizontal flip (p=0.5) + random translation up to 0.125*H."""
    h = img.shape[0]
    flip = rng.random() < 0.5
    max_off = int(round(0.125 * h))
    dx = int(rng.integers(-max_off, max_off + 1))
    dy = int(rng.integers(-max_off, max_off + 1))
    out = img[:, ::-1, :] if flip else img
    return translate(out, dx, dy)


def translate(img, dx, dy):
    """Shift by integer pixels (dx right, dy down) with edge replication."""
    if dx == 0 and dy == 0:
        return np.ascontiguousarray(img)
    h, w = img.shape[:2]
    pad = max(abs(dx), abs(dy))
    padded = np.pad(img, ((pad, pad), (pad, pad), (0, 0)), mode="edge")
    y0 = pad - dy
    x0 = pad - dx
    return np.ascontiguousarray(padded[y0:y0 + h, x0:x0 + w, :])


# ---------------------------------------------------------------------------
# Strong policy: fixed list of label-preserving transforms, RandAugment-style.
# Each transform maps (PIL image, magnitude) -> PIL image, with the magnitude
# drawn uniformly from the declared range.

def _fill_rgb(fill):
    return tuple(int(round(255 * c)) for c in fill)


def _affine(pil, coeffs, fill):
    return pil.transform(pil.size, Image.AFFINE, coeffs, resample=Image.BILINEAR,
                         fillcolor=_fill_rgb(fill))


def _apply_transform(pil, name, mag, fill):
    if name == "identity":
        return pil
    if name == "autocontrast":
        return ImageOps.autocontrast(pil)
    if name == "equalize":
        return ImageOps.equalize(pil)
    if name == "brightness":
        return ImageEnhance.Brightness(pil).enhance(mag)
    if name == "color":
        return ImageEnhance.Color(pil).enhance(mag)
    if name == "contrast":
        return ImageEnhance.Contrast(pil).enhance(mag)
    if name == "sharpness":
        return ImageEnhance.Sharpness(pil).enhance(mag)
    if name == "posterize":
        return ImageOps.posterize(pil, int(round(mag)))
    if name == "solarize":
        return ImageOps.solarize(pil, int(round(mag)))
    if name == "rotate":
        return pil.rotate(mag, resample=Image.BILINEAR, fillcolor=_fill_rgb(fill))
    if name == "shear_x":
        return _affine(pil, (1, mag, 0, 0, 1, 0), fill)
    if name == "shear_y":
        return _affine(pil, (1, 0, 0, mag, 1, 0), fill)
    if name == "translate_x":
        return _affine(pil, (1, 0, mag * pil.size[0], 0, 1, 0), fill)
    if name == "translate_y":
        return _affine(pil, (1, 0, 0, 0, 1, mag * pil.size[1]), fill)
    raise ValueError("unknown transform %r" % name)


DEFAULT_OPS = (
    ("identity", (0.0, 0.0)),
    ("autocontrast", (0.0, 0.0)),
    ("equalize", (0.0, 0.0)),
    ("brightness", (0.05, 1.95)),
    ("color", (0.05, 1.95)),
    ("contrast", (0.05, 1.95)),
    ("sharpness", (0.05, 1.95)),
    ("posterize", (4.0, 8.0)),
    ("solarize", (0.0, 255.0)),
    ("rotate", (-30.0, 30.0)),
    ("shear_x", (-0.3, 0.3)),
    ("shear_y", (-0.3, 0.3)),
    ("translate_x", (-0.3, 0.3)),
    ("translate_y", (-0.3, 0.3)),
)


@dataclass(frozen=True)
class AugPolicy:
    """Fixed strong-augmentation policy: op list + Cutout parameters."""
    op_list: tuple = DEFAULT_OPS
    ops_per_image: int = 2
    cutout_fraction: float = 0.5
    fill: tuple = (0.5, 0.5, 0.5)  # Cutout / geometric fill, per-channel mean

    def __post_init__(self):
        if not (0.0 <= self.cutout_fraction < 1.0):
            raise ValueError("cutout_fraction must lie in [0,1)")
        if self.ops_per_image < 0:
            raise ValueError("ops_per_image must be >= 0")

    def to_json(self):
        return json.dumps({
            "op_list": [[name, list(rng)] for name, rng in self.op_list],
            "ops_per_image": self.ops_per_image,
            "cutout_fraction": self.cutout_fraction,
            "fill": list(self.fill),
        }, indent=2)

    @staticmethod
    def from_json(text):
        d = json.loads(text)
        return AugPolicy(
            op_list=tuple((name, tuple(rng)) for name, rng in d["op_list"]),
            ops_per_image=d["ops_per_image"],
            cutout_fraction=d["cutout_fraction"],
            fill=tuple(d["fill"]),
        )


def default_policy(fill=(0.5, 0.5, 0.5), ops_per_image=2, cutout_fraction=0.5):
    return AugPolicy(ops_per_image=ops_per_image, cutout_fraction=cutout_fraction,
                     fill=tuple(float(c) for c in fill))


def cutout(img, fraction, rng, fill):
    """Blank a random square of side fraction*H (clipped at borders)."""
    h, w = img.shape[:2]
    side = int(round(fraction * h))
    if side <= 0:
        return img
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    y0, y1 = max(0, cy - side // 2), min(h, cy - side // 2 + side)
    x0, x1 = max(0, cx - side // 2), min(w, cx - side // 2 + side)
    out = img.copy()
    out[y0:y1, x0:x1, :] = np.asarray(fill, dtype=img.dtype)
    return out


def strong_augment(img, policy, rng):
    """weak_augment + ops_per_image policy transforms + Cutout, clamped to [0,1]."""
    out = weak_augment(img, rng)
    if policy.ops_per_image > 0 and len(policy.op_list) > 0:
        pil = Image.fromarray((np.clip(out, 0.0, 1.0) * 255.0).round().astype(np.uint8))
        for _ in range(policy.ops_per_image):
            idx = int(rng.integers(0, len(policy.op_list)))
            name, (lo, hi) = policy.op_list[idx]
            mag = float(rng.uniform(lo, hi))
            pil = _apply_transform(pil, name, mag, policy.fill)
        out = np.asarray(pil, dtype=np.float32) / 255.0
    out = cutout(out, policy.cutout_fraction, rng, policy.fill)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment_batch(images, fn, rng):
    """Apply fn(image, rng) to each image in a (N,H,W,3) batch, in order."""
    return np.stack([fn(images[i], rng) for i in range(images.shape[0])])
