"""Shared fixtures: synthetic shadow composites in ISTD directory layout."""
from pathlib import Path

import cv2
import numpy as np
from PIL import Image


def smooth_texture(rng, size, low=60, high=220):
    """Low-frequency random texture so the nets have structure to learn."""
    small = rng.uniform(low, high, (6, 6, 3))
    img = cv2.resize(small, (size, size), interpolation=cv2.INTER_CUBIC)
    return np.clip(img, 0, 255).astype(np.uint8)


def random_blob_mask(rng, size, frac_lo=0.08, frac_hi=0.25):
    """A filled ellipse covering roughly frac_lo..frac_hi of the pixels."""
    mask = np.zeros((size, size), np.uint8)
    target = rng.uniform(frac_lo, frac_hi) * size * size
    # ellipse area ~ pi*a*b
    a = int(np.sqrt(target / np.pi) * rng.uniform(0.7, 1.4))
    b = max(int(target / (np.pi * max(a, 1))), 2)
    cx = int(rng.integers(a, size - a)) if size - 2 * a > 0 else size // 2
    cy = int(rng.integers(b, size - b)) if size - 2 * b > 0 else size // 2
    cv2.ellipse(mask, (cx, cy), (a, b), float(rng.uniform(0, 180)), 0, 360, 1, -1)
    return mask


def apply_shadow(img, mask, factor=0.35):
    """Darken the masked region by a multiplicative factor."""
    out = img.astype(np.float64)
    out[mask.astype(bool)] *= factor
    return np.clip(out, 0, 255).astype(np.uint8)


def make_synthetic_istd(root, n=20, size=160, seed=0, splits=("train",), factor=0.35):
    """Write n synthetic (shadow, mask, shadow-free) triplets per split."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    for split in splits:
        base = root / split
        for sub in (f"{split}_A", f"{split}_B", f"{split}_C"):
            (base / sub).mkdir(parents=True, exist_ok=True)
        for i in range(n):
            free = smooth_texture(rng, size)
            mask = random_blob_mask(rng, size)
            shadow = apply_shadow(free, mask, factor)
            stem = f"{split}-{i:03d}"
            Image.fromarray(shadow).save(base / f"{split}_A" / f"{stem}.png")
            Image.fromarray(mask * 255).save(base / f"{split}_B" / f"{stem}.png")
            Image.fromarray(free).save(base / f"{split}_C" / f"{stem}.png")
    return root
