"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criterion 9 (full-scale benchmark reproduction) is a long-running target,
not a desk-scale gate; see the README.
"""
import csv

import numpy as np
import pytest
import torch

from deshadow import inference
from deshadow import metrics as M
from deshadow.colorspace import rgb_to_lab
from deshadow.data import (
    RegionPair,
    compose_embed,
    dilate_mask,
    load_dataset,
    load_image,
    load_mask,
    mask_region,
    sample_region_pair,
)
from deshadow.losses import (
    LossWeights,
    loss_area,
    loss_dis,
    loss_full,
    loss_gen,
    loss_identity,
    loss_removal,
    total_loss,
)
from deshadow.trainer import TrainConfig, Trainer, lr_at, train
from helpers import make_synthetic_istd
from test_data import dilate_oracle
from test_losses import central_diff_grad
from test_metrics import mae_oracle, psnr_oracle, rmse_oracle, ssim_oracle
from test_trainer import fixed_sample


def report(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
    assert ok, f"{name} {detail}"


def rel_err(got, want):
    return abs(got - want) / max(abs(want), 1e-12)


def test_criterion_1_metric_oracle_equivalence():
    rng = np.random.default_rng(101)
    worst = {"mae": 0.0, "rmse": 0.0, "psnr": 0.0, "ssim": 0.0, "vmax": 0, "dilate": 0}
    for _ in range(50):
        lab_a = rng.uniform(0, 100, (16, 16, 3))
        lab_b = rng.uniform(0, 100, (16, 16, 3))
        mask = rng.integers(0, 2, (16, 16)).astype(np.uint8)
        mask[0, 0] = 1
        worst["mae"] = max(worst["mae"], rel_err(M.lab_mae_region(lab_a, lab_b, mask), mae_oracle(lab_a, lab_b, mask)))
        worst["rmse"] = max(worst["rmse"], rel_err(M.true_rmse_region(lab_a, lab_b, mask), rmse_oracle(lab_a, lab_b, mask)))

        rgb_a = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        rgb_b = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        worst["psnr"] = max(worst["psnr"], rel_err(M.psnr(rgb_a, rgb_b), psnr_oracle(rgb_a, rgb_b)))
        worst["ssim"] = max(worst["ssim"], rel_err(M.ssim(rgb_a, rgb_b), ssim_oracle(rgb_a, rgb_b)))

        frames = [rng.integers(0, 256, (16, 16, 3), dtype=np.uint8) for _ in range(3)]
        got = M.vmax(frames)
        expect = np.stack(frames).max(axis=0)
        worst["vmax"] = max(worst["vmax"], int(np.abs(got.astype(int) - expect.astype(int)).max()))

        tau = int(rng.integers(2, 9))
        dm = (rng.random((16, 16)) < 0.15).astype(np.uint8)
        worst["dilate"] = max(worst["dilate"], int(np.abs(dilate_mask(dm, tau).astype(int) - dilate_oracle(dm, tau).astype(int)).max()))

    ok = (
        worst["mae"] < 1e-6
        and worst["rmse"] < 1e-6
        and worst["psnr"] < 1e-6
        and worst["ssim"] < 1e-5
        and worst["vmax"] == 0
        and worst["dilate"] == 0
    )
    report("criterion 1 (metric oracle equivalence)", ok, f"worst rel errors {worst}")


def test_criterion_2_loss_unit_values():
    checks = [
        loss_gen(torch.full((1, 1, 4, 4), 0.5, dtype=torch.float64)).item() == 0.125,
        loss_gen(torch.ones(1, 1, 4, 4, dtype=torch.float64)).item() == 0.0,
        loss_dis(torch.zeros(2, 2, dtype=torch.float64), torch.ones(2, 2, dtype=torch.float64)).item() == 0.0,
        loss_dis(torch.ones(2, 2, dtype=torch.float64), torch.zeros(2, 2, dtype=torch.float64)).item() == 1.0,
        loss_identity(torch.full((4,), 0.5, dtype=torch.float64), torch.zeros(4, dtype=torch.float64)).item() == 0.5,
        total_loss(1.0, 1.0, 1.0, 1.0, 1.0, LossWeights()).total == 9.0,
        total_loss(0.0, 0.0, 0.0, 0.0, 0.0, LossWeights()).total == 0.0,
    ]
    report("criterion 2 (loss unit values exact at 64-bit)", all(checks), f"{checks}")


def test_criterion_3_gradient_checks():
    other = torch.rand(1, 3, 4, 4, generator=torch.Generator().manual_seed(32), dtype=torch.float64)
    mask = (torch.rand(1, 1, 4, 4, generator=torch.Generator().manual_seed(33)) < 0.5).double()
    losses = {
        "gen": (lambda x: loss_gen(x), (1, 1, 4, 4)),
        "dis": (lambda x: loss_dis(x, other[:, :1]), (1, 1, 4, 4)),
        "iden": (lambda x: loss_identity(x, other), (1, 3, 4, 4)),
        "rem": (lambda x: loss_removal(x, other), (1, 3, 4, 4)),
        "full": (lambda x: loss_full(x, other), (1, 3, 4, 4)),
        "area": (lambda x: loss_area(x, other, mask, 3), (1, 3, 4, 4)),
    }
    worst = 0.0
    for i, (name, (fn, shape)) in enumerate(losses.items()):
        x = (torch.rand(shape, generator=torch.Generator().manual_seed(40 + i), dtype=torch.float64) * 2 - 1).requires_grad_(True)
        fn(x).backward()
        numeric = central_diff_grad(fn, x.detach().clone())
        rel = ((x.grad - numeric).abs().max() / numeric.abs().max().clamp(min=1e-8)).item()
        worst = max(worst, rel)

    tr = Trainer(TrainConfig(seed=5, load_size=48, crop_size=48, tau=5))
    bd, r_ps = tr.forward_losses(fixed_sample())
    bd.total.backward()
    l_dis = loss_dis(tr.dis(r_ps.detach()), tr.dis(torch.zeros_like(r_ps)))
    l_dis.backward()
    finite = all(
        p.grad is None or torch.isfinite(p.grad).all()
        for net in (tr.gen, tr.remover, tr.refiner, tr.dis)
        for p in net.parameters()
    )
    covered = all(
        any(p.grad is not None for p in net.parameters())
        for net in (tr.gen, tr.remover, tr.refiner, tr.dis)
    )
    ok = worst < 1e-4 and finite and covered
    report("criterion 3 (gradient checks)", ok, f"worst loss-grad rel err {worst:.2e}")


def test_criterion_4_detach_matrix():
    configs = [
        # (detach_G_from_I, detach_I_from_R, full->G, full->I, rem->G)
        (True, True, False, False, False),
        (True, False, False, True, False),
        (False, True, False, False, True),
        (False, False, True, True, True),
    ]
    ok = True
    for dgi, dir_, fg, fi, rg in configs:
        tr = Trainer(TrainConfig(seed=6, load_size=48, crop_size=48, tau=5,
                                 detach_G_from_I=dgi, detach_I_from_R=dir_))
        bd, _ = tr.forward_losses(fixed_sample())

        def norms(loss):
            tr.opt_g.zero_grad(set_to_none=True)
            loss.backward(retain_graph=True)
            return tuple(
                sum(float(p.grad.abs().sum()) for p in net.parameters() if p.grad is not None)
                for net in (tr.gen, tr.remover)
            )

        g_full, i_full = norms(bd.full)
        g_rem, i_rem = norms(bd.rem)
        row_ok = (
            (g_full > 0) == fg and (i_full > 0) == fi and (g_rem > 0) == rg
            and i_rem > 0
            and (fg or g_full == 0.0) and (fi or i_full == 0.0) and (rg or g_rem == 0.0)
        )
        ok = ok and row_ok
    report("criterion 4 (detach-matrix gradient flow, 4 configurations)", ok)


def test_criterion_5_sampling_constraint():
    rng = np.random.default_rng(55)
    size = 32
    half = size * size / 2
    n_fallback_expected = 0
    ok = True
    for k in range(1000):
        step_rng = np.random.default_rng(np.random.SeedSequence((55, k)))
        big_shadow = k % 5 == 0
        m_s = np.zeros((size, size), np.uint8)
        if big_shadow:
            m_s[:, : int(size * 0.7)] = 1
        else:
            a = int(step_rng.integers(6, 14))
            m_s[2 : 2 + a, 2 : 2 + a] = 1
        area = int(m_s.sum())
        # pool guarantees an in-tolerance disjoint candidate for small shadows
        pool = []
        for _ in range(4):
            m = np.zeros((size, size), np.uint8)
            side = max(int(np.sqrt(area * step_rng.uniform(0.85, 1.15))), 2)
            r0 = int(step_rng.integers(16, size - side)) if size - side > 16 else 16
            c0 = int(step_rng.integers(16, size - side)) if size - side > 16 else 16
            m[r0 : r0 + side, c0 : c0 + side] = 1
            pool.append(m)
        img = step_rng.uniform(-1, 1, (size, size, 3))
        pair = sample_region_pair(img, m_s, pool, 0.2, step_rng)

        overlap = int((pair.sample_mask & m_s).sum())
        ok = ok and overlap == 0
        if area > half:
            ok = ok and pair.fallback_used
            n_fallback_expected += 1
        if not pair.fallback_used:
            ratio = pair.sample_mask.sum() / area
            ok = ok and 0.8 < ratio < 1.2
        ok = ok and np.all(pair.nonshadow_region[pair.sample_mask == 0] == 0)
    report("criterion 5 (sampling constraint over 1000 draws)", ok,
           f"{n_fallback_expected} over-half fallbacks")


def test_criterion_6_composition_exactness():
    rng = np.random.default_rng(66)
    ok = True
    for _ in range(100):
        img = rng.uniform(-1, 1, (12, 12, 3))
        mask = rng.integers(0, 2, (12, 12)).astype(np.uint8)
        region = mask_region(rng.uniform(-1, 1, (12, 12, 3)), mask)
        out = compose_embed(region, img, mask)
        outside = mask == 0
        ok = ok and np.array_equal(out[..., :3][outside], img[outside])
    report("criterion 6 (compose_embed bit-exact outside mask, 100 cases)", ok)


def test_criterion_7_learning_rate_schedule():
    cfg = TrainConfig()
    rates = [lr_at(e, cfg) for e in range(cfg.epochs)]
    ok = (
        lr_at(0, cfg) == 2e-4
        and lr_at(49, cfg) == 2e-4
        and abs(lr_at(75, cfg) - 1e-4) < 1e-18
        and abs(lr_at(99, cfg) - 4e-6) < 1e-18
        and all(a >= b for a, b in zip(rates, rates[1:]))
    )
    report("criterion 7 (learning-rate schedule)", ok)


@pytest.mark.slow
def test_criterion_8_desk_scale_training_smoke(tmp_path):
    make_synthetic_istd(tmp_path / "data", n=20, size=128, seed=7)
    index = load_dataset(tmp_path / "data", "train")
    cfg = TrainConfig(seed=7, load_size=128, crop_size=128, epochs=10,
                      decay_start_epoch=10, max_steps=200)
    final = train(index, cfg, tmp_path / "run")

    with open(tmp_path / "run" / "training_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    first10 = np.mean([float(r["total"]) for r in rows[:10]])
    last10 = np.mean([float(r["total"]) for r in rows[-10:]])
    loss_ok = last10 < 0.7 * first10

    remover, refiner = inference.load_removal_networks(final)
    wins = 0
    for rec in index.records:
        img = load_image(rec.image)
        mask = load_mask(rec.mask)
        gt = load_image(rec.gt)
        pred = inference.remove_shadow_arrays(img, mask, remover, refiner, size=128)
        m = mask.astype(bool)
        baseline = M.lab_mae_region(rgb_to_lab(img), rgb_to_lab(gt), m)
        model = M.lab_mae_region(rgb_to_lab(pred), rgb_to_lab(gt), m)
        wins += model < baseline
    ok = loss_ok and wins >= 15
    report(
        "criterion 8 (desk-scale smoke: 20 images, 200 steps at 128x128)",
        ok,
        f"loss ratio {last10 / first10:.3f} (< 0.7), shadow-MAE wins {wins}/20 (>= 15)",
    )


def test_criterion_9_full_scale_note():
    print(
        "NOTE criterion 9 (full-scale benchmark reproduction) is a documented "
        "long-running target, not a desk-scale gate; see README."
    )
