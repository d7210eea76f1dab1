"""Test-time shadow removal and the image/video evaluation protocols.

At test time only the removal and refinement networks run: mask the shadow
region, deshadow it, splice it back with the mask as a fourth channel, and
refine. No generator is involved.
"""
import warnings
from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image

from . import metrics as M
from . import networks
from .colorspace import norm_to_lab, norm_to_rgb, rgb_to_lab, rgb_to_norm
from .data import load_image, load_mask, mask_region
from .trainer import TrainConfig, _mask_tensor, _to_tensor, compose_embed_t

TEST_SIZE = 256

VMAX_FILENAME = "vmax.png"
MASK_SUBDIR = "masks"


class CheckpointError(RuntimeError):
    pass


def load_removal_networks(checkpoint_path):
    """Instantiate the removal and refinement networks from a checkpoint."""
    state = torch.load(checkpoint_path, weights_only=False)
    for key in ("remover", "refiner"):
        if key not in state:
            raise CheckpointError(f"checkpoint is missing the '{key}' parameters")
    remover = networks.build_backbone(3, networks.NetworkRole.REMOVER)
    refiner = networks.build_backbone(4, networks.NetworkRole.REFINER)
    remover.load_state_dict(state["remover"])
    refiner.load_state_dict(state["refiner"])
    remover.eval()
    refiner.eval()
    return remover, refiner


def _resize_rgb(img, size):
    return cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)


def _resize_mask(mask, size):
    out = cv2.resize(mask.astype(np.uint8), (size, size), interpolation=cv2.INTER_NEAREST)
    return (out > 0).astype(np.uint8)


def remove_shadow_arrays(img_rgb, mask, remover, refiner, size=TEST_SIZE):
    """Run the two-network removal path on in-memory arrays; returns RGB."""
    if img_rgb.shape[:2] != mask.shape:
        raise ValueError(f"image {img_rgb.shape[:2]} and mask {mask.shape} differ in size")
    img_rgb = _resize_rgb(img_rgb, size)
    mask = _resize_mask(mask, size)
    s = rgb_to_norm(img_rgb)
    shadow_region = mask_region(s, mask)
    with torch.no_grad():
        s_t = _to_tensor(s)
        m_t = _mask_tensor(mask)
        r_f = networks.forward_remove(remover, _to_tensor(shadow_region), m_t)
        r_e = compose_embed_t(r_f, s_t, m_t)
        r_r = networks.forward_refine(refiner, r_e)
    out_norm = r_r[0].permute(1, 2, 0).numpy().astype(np.float64)
    return norm_to_rgb(out_norm)


def remove_shadow(image_path, mask_path, checkpoint, out_path, size=TEST_SIZE):
    """File-level wrapper: read image+mask, deshadow, write a PNG."""
    remover, refiner = load_removal_networks(checkpoint)
    img = load_image(image_path)
    mask = load_mask(mask_path)
    if mask.shape != img.shape[:2]:
        mask = cv2.resize(mask, (img.shape[1], img.shape[0]), interpolation=cv2.INTER_NEAREST)
    result = remove_shadow_arrays(img, mask, remover, refiner, size=size)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(result).save(out_path)
    return result


def _region_metrics(pred_rgb, gt_rgb, mask):
    pred_lab = rgb_to_lab(pred_rgb)
    gt_lab = rgb_to_lab(gt_rgb)
    full = np.ones_like(mask)
    rec = {}
    for region, rmask in (("shadow", mask), ("nonshadow", 1 - mask), ("all", full)):
        rmask = rmask.astype(bool)
        rec[f"rmse_{region}"] = M.lab_mae_region(pred_lab, gt_lab, rmask)
        rec[f"psnr_{region}"] = M.psnr(pred_rgb, gt_rgb, rmask)
        rec[f"ssim_{region}"] = M.ssim(pred_rgb, gt_rgb, rmask)
    abs_diff = np.abs(pred_lab - gt_lab)[mask.astype(bool)]
    return rec, float(abs_diff.sum()), int(abs_diff.size)


def evaluate(index, checkpoint, mask_source="gt", mask_dir=None, size=TEST_SIZE,
             out_dir=None):
    """Per-image removal + metrics over a split with GT shadow-free images.

    Metric regions always come from the GT shadow masks; `mask_source`
    controls only which mask drives inference ("gt" or "provided", the
    latter read from `mask_dir` by filename stem).
    """
    if mask_source not in ("gt", "provided"):
        raise ValueError(f"mask_source must be 'gt' or 'provided', got {mask_source!r}")
    if mask_source == "provided" and mask_dir is None:
        raise ValueError("mask_source='provided' requires mask_dir")
    remover, refiner = load_removal_networks(checkpoint)
    report = M.MetricsReport()
    pixel_sum = 0.0
    pixel_count = 0
    for record in index.records:
        if record.gt is None:
            warnings.warn(f"no GT shadow-free image for {record.stem}; skipped")
            report.skipped.append(record.stem)
            continue
        img = load_image(record.image)
        gt_mask = load_mask(record.mask)
        if mask_source == "provided":
            cand = [p for p in Path(mask_dir).iterdir() if p.stem == record.stem]
            if not cand:
                warnings.warn(f"no provided mask for {record.stem}; skipped")
                report.skipped.append(record.stem)
                continue
            infer_mask = load_mask(cand[0])
        else:
            infer_mask = gt_mask
        pred = remove_shadow_arrays(img, infer_mask, remover, refiner, size=size)
        gt_img = _resize_rgb(load_image(record.gt), size)
        eval_mask = _resize_mask(gt_mask, size)
        rec, psum, pcount = _region_metrics(pred, gt_img, eval_mask)
        rec["image"] = record.stem
        report.per_image.append(rec)
        pixel_sum += psum
        pixel_count += pcount
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            Image.fromarray(pred).save(out_dir / f"{record.stem}.png")
    report.finalize()
    if pixel_count:
        report.pixel_averaged_rmse = pixel_sum / pixel_count
    return report


def _video_dirs(video_root):
    return sorted(d for d in Path(video_root).iterdir() if d.is_dir())


def _video_frames(video_dir):
    frames = [
        p
        for p in sorted(video_dir.iterdir())
        if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp") and p.name != VMAX_FILENAME
    ]
    return frames


def evaluate_video(video_root, checkpoint, threshold=80, alt_threshold=40,
                   size=TEST_SIZE, out_dir=None):
    """Video protocol: per-frame removal scored against the Vmax reference.

    Each subdirectory of `video_root` is one video of frames; an optional
    `vmax.png` inside it overrides the computed per-pixel maximum, and an
    optional `masks/` subdirectory provides per-frame inference masks
    (otherwise the threshold-derived shadow masks are used). Metrics are
    restricted to the aggregate moving-shadow mask; the alternate threshold
    yields the rmse_alt_threshold column. Videos whose moving-shadow mask is
    empty are excluded.
    """
    remover, refiner = load_removal_networks(checkpoint)
    report = M.MetricsReport()
    for video_dir in _video_dirs(video_root):
        frame_paths = _video_frames(video_dir)
        if not frame_paths:
            continue
        frames = [_resize_rgb(load_image(p), size) for p in frame_paths]
        vmax_path = video_dir / VMAX_FILENAME
        if vmax_path.exists():
            vmax_img = _resize_rgb(load_image(vmax_path), size)
        else:
            vmax_img = M.vmax(frames)
        per_frame, moving = M.moving_shadow_mask(frames, vmax_img, threshold)
        _, moving_alt = M.moving_shadow_mask(frames, vmax_img, alt_threshold)
        if not moving.any():
            warnings.warn(f"video {video_dir.name} has an empty moving-shadow mask; excluded")
            report.skipped.append(video_dir.name)
            continue
        mask_dir = video_dir / MASK_SUBDIR
        vmax_lab = rgb_to_lab(vmax_img)
        for path, frame, shadow in zip(frame_paths, frames, per_frame):
            if mask_dir.is_dir() and (mask_dir / path.name).exists():
                infer_mask = _resize_mask(load_mask(mask_dir / path.name), size)
            else:
                infer_mask = shadow.astype(np.uint8)
            if not infer_mask.any():
                infer_mask = np.ones_like(infer_mask)
            pred = remove_shadow_arrays(frame, infer_mask, remover, refiner, size=size)
            pred_lab = rgb_to_lab(pred)
            rec = {
                "image": f"{video_dir.name}/{path.stem}",
                "rmse_shadow": M.lab_mae_region(pred_lab, vmax_lab, moving),
                "rmse_nonshadow": float("nan"),
                "rmse_all": float("nan"),
                "psnr_shadow": M.psnr(pred, vmax_img, moving),
                "psnr_nonshadow": float("nan"),
                "psnr_all": float("nan"),
                "ssim_shadow": M.ssim(pred, vmax_img, moving),
                "ssim_nonshadow": float("nan"),
                "ssim_all": float("nan"),
                "rmse_alt_threshold": (
                    M.lab_mae_region(pred_lab, vmax_lab, moving_alt) if moving_alt.any() else float("nan")
                ),
            }
            report.per_image.append(rec)
            if out_dir is not None:
                dest = Path(out_dir) / video_dir.name
                dest.mkdir(parents=True, exist_ok=True)
                Image.fromarray(pred).save(dest / f"{path.stem}.png")
    report.finalize()
    return report


def metrics_over_dirs(pred_dir, gt_dir, mask_dir, size=None):
    """Direct metric computation between two image directories plus masks."""
    pred_dir, gt_dir, mask_dir = Path(pred_dir), Path(gt_dir), Path(mask_dir)
    preds = {p.stem: p for p in sorted(pred_dir.iterdir()) if p.suffix.lower() in (".png", ".jpg", ".jpeg")}
    report = M.MetricsReport()
    pixel_sum = 0.0
    pixel_count = 0
    for stem, pred_path in sorted(preds.items()):
        gt_cand = [p for p in gt_dir.iterdir() if p.stem == stem]
        mask_cand = [p for p in mask_dir.iterdir() if p.stem == stem]
        if not gt_cand or not mask_cand:
            warnings.warn(f"missing GT or mask for {stem}; skipped")
            report.skipped.append(stem)
            continue
        pred = load_image(pred_path)
        gt = load_image(gt_cand[0])
        mask = load_mask(mask_cand[0])
        if size is not None:
            pred, gt, mask = _resize_rgb(pred, size), _resize_rgb(gt, size), _resize_mask(mask, size)
        if gt.shape != pred.shape:
            gt = cv2.resize(gt, (pred.shape[1], pred.shape[0]), interpolation=cv2.INTER_LINEAR)
        if mask.shape != pred.shape[:2]:
            mask = cv2.resize(mask, (pred.shape[1], pred.shape[0]), interpolation=cv2.INTER_NEAREST)
        rec, psum, pcount = _region_metrics(pred, gt, mask)
        rec["image"] = stem
        report.per_image.append(rec)
        pixel_sum += psum
        pixel_count += pcount
    report.finalize()
    if pixel_count:
        report.pixel_averaged_rmse = pixel_sum / pixel_count
    return report
