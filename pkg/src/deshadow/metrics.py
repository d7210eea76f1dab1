"""Evaluation metrics: region LAB errors, PSNR, SSIM, and the video protocol.

The shadow-removal literature reports a metric it calls "RMSE" that is in
fact the mean absolute LAB difference per pixel; `lab_mae_region` implements
that convention and `true_rmse_region` the mathematically literal one.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate

PSNR_CAP_DB = 99.0

# canonical SSIM constants: 11x11 Gaussian window, sigma 1.5
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


class EmptyRegionError(ValueError):
    """Raised when a metric is requested over an empty mask region."""


def _check_pair(pred, gt, mask=None):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if mask is not None:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != pred.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} does not match image {pred.shape[:2]}")
    return pred, gt, mask


def lab_mae_region(pred, gt, mask):
    """Mean absolute LAB difference over masked pixels, channel-averaged.

    This is the quantity reported as "RMSE" in shadow-removal papers.
    """
    pred, gt, mask = _check_pair(pred, gt, mask)
    if not mask.any():
        raise EmptyRegionError("empty mask region")
    diff = np.abs(pred.astype(np.float64) - gt.astype(np.float64))
    return float(diff[mask].mean())


def true_rmse_region(pred, gt, mask):
    """Literal root-mean-square LAB difference over masked pixels."""
    pred, gt, mask = _check_pair(pred, gt, mask)
    if not mask.any():
        raise EmptyRegionError("empty mask region")
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    return float(np.sqrt((diff[mask] ** 2).mean()))


def psnr(pred, gt, mask=None):
    """PSNR in dB over 8-bit RGB images; identical images return PSNR_CAP_DB."""
    pred, gt, mask = _check_pair(pred, gt, mask)
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    if mask is not None:
        if not mask.any():
            raise EmptyRegionError("empty mask region")
        diff = diff[mask]
    mse = float((diff**2).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(255.0**2 / mse), PSNR_CAP_DB)


def _gaussian_kernel(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _ssim_map_channel(x, y, kernel):
    c1 = (SSIM_K1 * 255.0) ** 2
    c2 = (SSIM_K2 * 255.0) ** 2
    pad = kernel.shape[0] // 2

    def win(a):
        return correlate(a, kernel, mode="constant")[pad:-pad, pad:-pad]

    mu_x = win(x)
    mu_y = win(y)
    sxx = win(x * x) - mu_x**2
    syy = win(y * y) - mu_y**2
    sxy = win(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return num / den


def ssim(pred, gt, mask=None):
    """Channel-averaged SSIM with the canonical Gaussian window.

    Computed over valid (fully interior) windows; when `mask` is given the
    SSIM map is averaged only where the window center is inside the mask.
    """
    pred, gt, mask = _check_pair(pred, gt, mask)
    if pred.ndim != 3 or pred.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {pred.shape}")
    h, w = pred.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than SSIM window {SSIM_WINDOW}")
    kernel = _gaussian_kernel()
    pad = SSIM_WINDOW // 2
    x = pred.astype(np.float64)
    y = gt.astype(np.float64)
    maps = [_ssim_map_channel(x[..., c], y[..., c], kernel) for c in range(3)]
    smap = np.mean(maps, axis=0)
    if mask is None:
        return float(smap.mean())
    inner = mask[pad:-pad, pad:-pad]
    if not inner.any():
        raise EmptyRegionError("mask empty inside the SSIM-valid region")
    return float(smap[inner].mean())


def vmax(frames):
    """Per-pixel, per-channel maximum over a stack of frames."""
    frames = [np.asarray(f) for f in frames]
    if len(frames) == 0:
        raise ValueError("empty frame sequence")
    shape = frames[0].shape
    for f in frames[1:]:
        if f.shape != shape:
            raise ValueError("frames have differing dimensions")
    return np.max(np.stack(frames, axis=0), axis=0)


def grayscale(img):
    """BT.601 luma of an 8-bit RGB image, float64."""
    return np.asarray(img).astype(np.float64) @ _LUMA


def moving_shadow_mask(frames, vmax_img, threshold):
    """Per-frame shadow masks plus the aggregate moving-shadow mask.

    A pixel is shadow in a frame when luma(vmax) - luma(frame) > threshold;
    it belongs to the moving-shadow mask when it is shadow in at least one
    frame and non-shadow in at least one frame.
    """
    if not 0 < threshold < 255:
        raise ValueError(f"threshold must lie in (0, 255), got {threshold}")
    vmax_img = np.asarray(vmax_img)
    gray_ref = grayscale(vmax_img)
    per_frame = []
    for f in frames:
        f = np.asarray(f)
        if f.shape != vmax_img.shape:
            raise ValueError(f"frame shape {f.shape} != vmax shape {vmax_img.shape}")
        per_frame.append(gray_ref - grayscale(f) > threshold)
    stack = np.stack(per_frame, axis=0)
    moving = stack.any(axis=0) & ~stack.all(axis=0)
    return per_frame, moving


@dataclass
class MetricsReport:
    """Per-image metric records plus their aggregates.

    `rmse_*` follows the literature convention (mean absolute LAB error per
    image, averaged over images); `pixel_averaged_rmse` pools all shadow
    pixels of the whole set first (the RMSE* variant).
    """

    per_image: list = field(default_factory=list)
    rmse_shadow: float = float("nan")
    rmse_nonshadow: float = float("nan")
    rmse_all: float = float("nan")
    psnr_shadow: float = float("nan")
    psnr_nonshadow: float = float("nan")
    psnr_all: float = float("nan")
    ssim_shadow: float = float("nan")
    ssim_nonshadow: float = float("nan")
    ssim_all: float = float("nan")
    pixel_averaged_rmse: float = float("nan")
    skipped: list = field(default_factory=list)

    FIELDS = (
        "rmse_shadow",
        "rmse_nonshadow",
        "rmse_all",
        "psnr_shadow",
        "psnr_nonshadow",
        "psnr_all",
        "ssim_shadow",
        "ssim_nonshadow",
        "ssim_all",
    )

    def finalize(self):
        """Fill aggregate fields as the mean of the per-image records."""
        for name in self.FIELDS:
            vals = [rec[name] for rec in self.per_image if name in rec]
            setattr(self, name, float(np.mean(vals)) if vals else float("nan"))
        return self

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image", *self.FIELDS])
            for rec in self.per_image:
                writer.writerow([rec["image"], *[f"{rec[n]:.6f}" for n in self.FIELDS]])
            writer.writerow(["aggregate", *[f"{getattr(self, n):.6f}" for n in self.FIELDS]])

    def to_json(self, path):
        doc = {
            "per_image": self.per_image,
            "aggregate": {n: getattr(self, n) for n in self.FIELDS},
            "pixel_averaged_rmse": self.pixel_averaged_rmse,
            "skipped": self.skipped,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
