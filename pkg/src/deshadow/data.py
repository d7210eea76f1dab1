"""Dataset indexing, region-pair sampling, mask morphology and augmentation.

Training is weakly supervised: only shadow images and shadow masks are read.
Ground-truth shadow-free images are indexed when present but used solely by
evaluation (and by the supervised training variant).
"""
import os
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image
from scipy.ndimage import maximum_filter

from .colorspace import rgb_to_norm

# directory conventions of the ISTD release
_SUBDIR = {"train": ("train_A", "train_B", "train_C"), "test": ("test_A", "test_B", "test_C")}

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")

# bounded search before relaxing the area-ratio acceptance
MAX_SAMPLE_RETRIES = 50


class DatasetError(RuntimeError):
    pass


class SampleImpossibleError(RuntimeError):
    """The image has no non-shadow pixels to sample a region from."""


@dataclass(frozen=True)
class DatasetRecord:
    image: Path
    mask: Path
    gt: Path | None = None

    @property
    def stem(self):
        return self.image.stem


@dataclass(frozen=True)
class DatasetIndex:
    records: tuple
    split: str
    mask_pool: tuple

    def __len__(self):
        return len(self.records)


@dataclass
class RegionPair:
    """One constructed training sample.

    `shadow_region` is the image restricted to its own shadow mask,
    `nonshadow_region` the image restricted to the sampled mask; both are
    exactly zero outside their masks.
    """

    shadow_region: np.ndarray
    nonshadow_region: np.ndarray
    sample_mask: np.ndarray
    source_image: np.ndarray
    source_mask: np.ndarray
    fallback_used: bool


def load_image(path):
    """Read an image file as 8-bit RGB (H, W, 3)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_mask(path):
    """Read a mask file and binarize at >127 of full range."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)


def _list_images(directory):
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_EXTS)


def load_dataset(root, split):
    """Index an ISTD-style directory tree for the given split.

    Accepts either `root/<split>/<split>_A` or `root/<split>_A` layouts.
    Every image must have a filename-matched mask; GT shadow-free images
    are optional.
    """
    if split not in _SUBDIR:
        raise ValueError(f"split must be one of {sorted(_SUBDIR)}, got {split!r}")
    root = Path(root)
    img_name, mask_name, gt_name = _SUBDIR[split]
    base = root / split if (root / split / img_name).is_dir() else root
    img_dir = base / img_name
    mask_dir = base / mask_name
    gt_dir = base / gt_name
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DatasetError(f"missing {img_name}/{mask_name} under {base}")

    masks = {p.stem: p for p in _list_images(mask_dir)}
    gts = {p.stem: p for p in _list_images(gt_dir)} if gt_dir.is_dir() else {}

    records = []
    missing = []
    for img_path in _list_images(img_dir):
        mask_path = masks.get(img_path.stem)
        if mask_path is None:
            missing.append(img_path.stem)
            continue
        records.append(DatasetRecord(img_path, mask_path, gts.get(img_path.stem)))
    if missing:
        raise DatasetError(f"images without a matching mask: {', '.join(missing)}")
    if not records:
        raise DatasetError(f"no images found under {img_dir}")

    pool = tuple(r.mask for r in records) if split == "train" else ()
    return DatasetIndex(records=tuple(records), split=split, mask_pool=pool)


def mask_region(img, mask):
    """Keep pixels where mask == 1, set everything else to exactly 0."""
    img = np.asarray(img)
    mask = np.asarray(mask)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    keep = mask.astype(bool)
    if img.ndim == 3:
        keep = keep[..., None]
    return np.where(keep, img, 0.0)


def dilate_mask(mask, tau):
    """Binary dilation by a tau x tau square structuring element.

    tau of 0 or 1 is the identity. The element is anchored so pixel (i, j)
    sees offsets [-tau//2, tau - 1 - tau//2] in each axis.
    """
    mask = np.asarray(mask)
    if tau < 0 or int(tau) != tau:
        raise ValueError(f"kernel size must be a nonnegative integer, got {tau}")
    if tau <= 1:
        return mask.copy()
    out = maximum_filter(mask.astype(np.uint8), size=int(tau), mode="constant", cval=0)
    return out.astype(mask.dtype)


def _resize_mask(mask, shape):
    if mask.shape == shape:
        return mask
    resized = cv2.resize(mask.astype(np.uint8), (shape[1], shape[0]), interpolation=cv2.INTER_NEAREST)
    return (resized > 0).astype(np.uint8)


def sample_region_pair(image, source_mask, pool, alpha, rng):
    """Build a RegionPair by sampling a non-shadow region mask from the pool.

    Candidates are drawn uniformly, intersected with the complement of the
    image's own shadow mask, and accepted when the region-area ratio falls in
    (1 - alpha, 1 + alpha). When the shadow covers more than half the image
    the ratio constraint is dropped; after MAX_SAMPLE_RETRIES rejections the
    nearest-ratio candidate is accepted. Both relaxations set fallback_used.

    Pool entries may be mask arrays or paths to mask files.
    """
    if not pool:
        raise ValueError("mask pool is empty")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    image = np.asarray(image)
    source_mask = np.asarray(source_mask)
    h, w = source_mask.shape
    area_s = int(source_mask.sum())
    if area_s == h * w:
        raise SampleImpossibleError("image is entirely shadow; no region to sample")

    def draw():
        cand = pool[int(rng.integers(len(pool)))]
        if not isinstance(cand, np.ndarray):
            cand = load_mask(cand)
        cand = _resize_mask(cand, (h, w))
        return cand & (1 - source_mask)

    shadow_region = mask_region(image, source_mask)
    drop_ratio = area_s > (h * w) / 2

    chosen = None
    fallback = drop_ratio
    best = None
    best_dist = np.inf
    for _ in range(MAX_SAMPLE_RETRIES):
        cand = draw()
        area_n = int(cand.sum())
        if area_n == 0:
            continue
        if drop_ratio:
            chosen = cand
            break
        ratio = area_n / area_s
        if 1 - alpha < ratio < 1 + alpha:
            chosen = cand
            break
        dist = abs(ratio - 1.0)
        if dist < best_dist:
            best, best_dist = cand, dist
    if chosen is None:
        if best is None:
            raise SampleImpossibleError("no pool mask yields a nonempty non-shadow region")
        chosen = best
        fallback = True

    return RegionPair(
        shadow_region=shadow_region,
        nonshadow_region=mask_region(image, chosen),
        sample_mask=chosen,
        source_image=image,
        source_mask=source_mask,
        fallback_used=fallback,
    )


def augment(image, mask, rng, load_size=448, crop_size=400):
    """Scale, random-crop and random-flip an image together with its mask.

    The image is resized bilinearly, the mask with nearest-neighbor and
    re-binarized, then an identical crop window and horizontal flip are
    applied to both.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    img_r = cv2.resize(image, (load_size, load_size), interpolation=cv2.INTER_LINEAR)
    mask_r = _resize_mask(mask, (load_size, load_size))
    max_off = load_size - crop_size
    top = int(rng.integers(max_off + 1)) if max_off > 0 else 0
    left = int(rng.integers(max_off + 1)) if max_off > 0 else 0
    img_c = img_r[top : top + crop_size, left : left + crop_size]
    mask_c = mask_r[top : top + crop_size, left : left + crop_size]
    if rng.random() < 0.5:
        img_c = img_c[:, ::-1]
        mask_c = mask_c[:, ::-1]
    return np.ascontiguousarray(img_c), np.ascontiguousarray(mask_c)


def compose_embed(region, image, mask):
    """Splice a processed region back into its image and stack the mask.

    Channels 1-3 take the region where mask == 1 and the image elsewhere;
    channel 4 is the mask itself. The region must be zero outside the mask.
    """
    region = np.asarray(region)
    image = np.asarray(image)
    mask = np.asarray(mask)
    if region.shape != image.shape:
        raise ValueError(f"shape mismatch: {region.shape} vs {image.shape}")
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    keep = mask.astype(bool)
    if np.any(region[~keep] != 0):
        raise ValueError("region has nonzero values outside the mask")
    spliced = np.where(keep[..., None], region, image)
    return np.concatenate([spliced, mask[..., None].astype(spliced.dtype)], axis=-1)


def load_normalized(record):
    """Load a record's image into working space together with its mask."""
    return rgb_to_norm(load_image(record.image)), load_mask(record.mask)
