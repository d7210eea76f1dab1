"""Joint optimization of the generation, removal, refinement and
discriminator networks.

One generator-side step (single Adam over the union of the three image
networks) followed by one discriminator step per sample. Gradient barriers
between the sub-networks are controlled by the two detach flags.
"""
import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import networks
from .data import (
    DatasetIndex,
    augment,
    load_image,
    load_mask,
    load_normalized,
    mask_region,
    sample_region_pair,
)
from .colorspace import rgb_to_norm
from .losses import (
    LossBreakdown,
    LossWeights,
    loss_area,
    loss_dis,
    loss_full,
    loss_gen,
    loss_identity,
    loss_removal,
    total_loss,
)

REAL_SHADOW_POLICIES = ("same_image", "any_image")

LOG_FIELDS = ("step", "epoch", "gan", "iden", "rem", "full", "area", "total", "dis")


@dataclass
class TrainConfig:
    epochs: int = 100
    lr_base: float = 2e-4
    decay_start_epoch: int = 50
    momentum1: float = 0.5
    momentum2: float = 0.999
    batch_size: int = 1
    init_std: float = 0.02
    alpha: float = 0.2
    tau: int = 50
    weights: LossWeights = field(default_factory=LossWeights)
    detach_G_from_I: bool = False
    detach_I_from_R: bool = False
    seed: int = 0
    supervised_mode: bool = False
    real_shadow_policy: str = "any_image"
    load_size: int = 448
    crop_size: int = 400
    checkpoint_keep: int = 5
    max_steps: int | None = None

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        for name in ("epochs", "lr_base", "momentum1", "momentum2", "batch_size",
                     "init_std", "alpha", "tau", "load_size", "crop_size"):
            if getattr(self, name) <= 0 and name != "tau":
                raise ValueError(f"{name} must be positive")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.decay_start_epoch > self.epochs:
            raise ValueError("decay_start_epoch must not exceed epochs")
        if self.real_shadow_policy not in REAL_SHADOW_POLICIES:
            raise ValueError(
                f"real_shadow_policy must be one of {REAL_SHADOW_POLICIES}, "
                f"got {self.real_shadow_policy!r}"
            )
        if self.crop_size > self.load_size:
            raise ValueError("crop_size must not exceed load_size")

    def to_dict(self):
        return asdict(self)


def lr_at(epoch, cfg):
    """Base rate until decay_start_epoch, then linear decay to 0 at epochs."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.decay_start_epoch:
        return cfg.lr_base
    return cfg.lr_base * (cfg.epochs - epoch) / (cfg.epochs - cfg.decay_start_epoch)


def _to_tensor(img):
    # HWC float -> 1CHW float32
    return torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1)[None].float()


def _mask_tensor(mask):
    return torch.from_numpy(np.ascontiguousarray(mask))[None, None].float()


def compose_embed_t(region, image, mask):
    """Differentiable splice-and-stack; region must already be masked."""
    spliced = region * mask + image * (1.0 - mask)
    return torch.cat([spliced, mask], dim=1)


def _detached(breakdown):
    return {
        k: float(v.detach()) if torch.is_tensor(v) else float(v)
        for k, v in vars(breakdown).items()
    }


def _set_requires_grad(net, flag):
    for p in net.parameters():
        p.requires_grad_(flag)


class Trainer:
    """Owns the four networks, their optimizers and the step logic."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        torch_rng = torch.Generator().manual_seed(cfg.seed)
        self.gen = networks.build_backbone(3, networks.NetworkRole.GENERATOR)
        self.remover = networks.build_backbone(3, networks.NetworkRole.REMOVER)
        self.refiner = networks.build_backbone(4, networks.NetworkRole.REFINER)
        self.dis = networks.build_discriminator()
        for net in (self.gen, self.remover, self.refiner, self.dis):
            networks.init_weights(net, cfg.init_std, torch_rng)
        gen_side = (
            list(self.gen.parameters())
            + list(self.remover.parameters())
            + list(self.refiner.parameters())
        )
        betas = (cfg.momentum1, cfg.momentum2)
        self.opt_g = torch.optim.Adam(gen_side, lr=cfg.lr_base, betas=betas)
        self.opt_d = torch.optim.Adam(self.dis.parameters(), lr=cfg.lr_base, betas=betas)
        self.epoch = 0
        self.step = 0

    def set_epoch_lr(self, epoch):
        lr = lr_at(epoch, self.cfg)
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr
        return lr

    def forward_losses(self, sample):
        """Run the generator-side forward chain and build the loss graph.

        Returns a LossBreakdown of live tensors plus the pseudo-shadow
        tensor (needed for the discriminator step). Gradient barriers per
        the detach flags are already in place.
        """
        cfg = self.cfg
        s = _to_tensor(sample.source_image)
        r_s = _to_tensor(sample.shadow_region)
        r_n = _to_tensor(sample.nonshadow_region)
        m = _mask_tensor(sample.sample_mask)
        m_s = _mask_tensor(sample.source_mask)

        r_ps = networks.forward_generate(self.gen, r_n, m)
        iden_out = networks.forward_generate(self.gen, r_s, m_s)

        score_fake = networks.forward_discriminate(self.dis, r_ps)
        l_gan = loss_gen(score_fake)
        l_iden = loss_identity(iden_out, r_s)

        r_ps_in = r_ps.detach() if cfg.detach_G_from_I else r_ps
        r_f = networks.forward_remove(self.remover, r_ps_in, m)
        l_rem = loss_removal(r_f, r_n)

        r_f_in = r_f.detach() if cfg.detach_I_from_R else r_f
        r_e = compose_embed_t(r_f_in, s, m)
        r_r = networks.forward_refine(self.refiner, r_e)
        l_full = loss_full(r_r, s)
        l_area = loss_area(r_r, s, m, cfg.tau)

        breakdown = total_loss(l_gan, l_iden, l_rem, l_full, l_area, cfg.weights)
        return breakdown, r_ps

    def train_step(self, sample, real_shadow):
        """One generator-side update followed by one discriminator update.

        `sample` is a RegionPair in working space; `real_shadow` the masked
        real shadow region shown to the discriminator.
        """
        _set_requires_grad(self.dis, False)
        breakdown, r_ps = self.forward_losses(sample)
        self.opt_g.zero_grad(set_to_none=True)
        breakdown.total.backward()
        self.opt_g.step()

        _set_requires_grad(self.dis, True)
        real = _to_tensor(real_shadow)
        score_fake_d = networks.forward_discriminate(self.dis, r_ps.detach())
        score_real = networks.forward_discriminate(self.dis, real)
        l_dis = loss_dis(score_fake_d, score_real)
        self.opt_d.zero_grad(set_to_none=True)
        l_dis.backward()
        self.opt_d.step()

        self.step += 1
        return LossBreakdown(**_detached(breakdown) | {"dis": float(l_dis.detach())})

    def train_step_supervised(self, image, gt_image, mask, tau=None):
        """Paired variant: remove the real shadow, compare against GT.

        No generation branch; the adversarial and identity terms are zero.
        """
        cfg = self.cfg
        s = _to_tensor(image)
        gt = _to_tensor(gt_image)
        m = _mask_tensor(mask)
        zero = torch.zeros(())

        shadow_region = s * m
        target_region = gt * m
        r_f = networks.forward_remove(self.remover, shadow_region, m)
        l_rem = loss_removal(r_f, target_region)

        r_f_in = r_f.detach() if cfg.detach_I_from_R else r_f
        r_e = compose_embed_t(r_f_in, s, m)
        r_r = networks.forward_refine(self.refiner, r_e)
        l_full = loss_full(r_r, gt)
        l_area = loss_area(r_r, gt, m, cfg.tau if tau is None else tau)

        breakdown = total_loss(zero, zero, l_rem, l_full, l_area, cfg.weights)
        self.opt_g.zero_grad(set_to_none=True)
        breakdown.total.backward()
        self.opt_g.step()
        self.step += 1
        return LossBreakdown(**_detached(breakdown))

    # --- checkpointing ---

    def state_dict(self):
        return {
            "generator": self.gen.state_dict(),
            "remover": self.remover.state_dict(),
            "refiner": self.refiner.state_dict(),
            "discriminator": self.dis.state_dict(),
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "epoch": self.epoch,
            "step": self.step,
            "config": self.cfg.to_dict(),
        }

    def load_state_dict(self, state):
        self.gen.load_state_dict(state["generator"])
        self.remover.load_state_dict(state["remover"])
        self.refiner.load_state_dict(state["refiner"])
        self.dis.load_state_dict(state["discriminator"])
        self.opt_g.load_state_dict(state["opt_g"])
        self.opt_d.load_state_dict(state["opt_d"])
        self.epoch = state["epoch"]
        self.step = state["step"]

    def save_checkpoint(self, path):
        torch.save(self.state_dict(), path)


def _step_rng(seed, epoch, index):
    return np.random.default_rng(np.random.SeedSequence((seed, epoch, index)))


def _shuffle_order(seed, epoch, n):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5F5F, epoch)))
    return rng.permutation(n)


def _prepare_sample(index: DatasetIndex, record_idx, cfg: TrainConfig, rng):
    record = index.records[record_idx]
    img, mask = load_normalized(record)
    img, mask = augment(img, mask, rng, cfg.load_size, cfg.crop_size)
    sample = sample_region_pair(img, mask, index.mask_pool, cfg.alpha, rng)

    if cfg.real_shadow_policy == "same_image":
        real_shadow = sample.shadow_region
    else:
        other = index.records[int(rng.integers(len(index.records)))]
        o_img, o_mask = load_normalized(other)
        o_img, o_mask = augment(o_img, o_mask, rng, cfg.load_size, cfg.crop_size)
        real_shadow = mask_region(o_img, o_mask)
    return sample, real_shadow


def train(index: DatasetIndex, cfg: TrainConfig, run_dir, resume=None, progress=None):
    """Full training loop: epochs x records, per-epoch shuffle, checkpoints.

    Writes `training_log.csv` (one LossBreakdown row per step), per-epoch
    checkpoints with a keep-last-N policy, `checkpoint_final.pt`, and a run
    manifest JSON. Returns the path of the final checkpoint.
    """
    if len(index) == 0:
        raise ValueError("dataset is empty")
    if cfg.supervised_mode and any(r.gt is None for r in index.records):
        raise ValueError("supervised_mode requires GT shadow-free images for every record")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    trainer = Trainer(cfg)
    if resume is not None:
        trainer.load_state_dict(torch.load(resume, weights_only=False))

    manifest = {
        "config": cfg.to_dict(),
        "dataset_size": len(index),
        "split": index.split,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (run_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2))

    log_path = run_dir / "training_log.csv"
    log_mode = "a" if resume is not None and log_path.exists() else "w"
    kept = []
    t0 = time.time()
    stop = False
    with open(log_path, log_mode, newline="") as log_fh:
        writer = csv.writer(log_fh)
        if log_mode == "w":
            writer.writerow(LOG_FIELDS)
        for epoch in range(trainer.epoch, cfg.epochs):
            trainer.epoch = epoch
            lr = trainer.set_epoch_lr(epoch)
            order = _shuffle_order(cfg.seed, epoch, len(index))
            for record_idx in order:
                rng = _step_rng(cfg.seed, epoch, int(record_idx))
                if cfg.supervised_mode:
                    record = index.records[record_idx]
                    img, mask = load_normalized(record)
                    gt = rgb_to_norm(load_image(record.gt))
                    # identical crop/flip for the triple
                    state = rng.bit_generator.state
                    img, mask = augment(img, mask, rng, cfg.load_size, cfg.crop_size)
                    rng.bit_generator.state = state
                    gt, _ = augment(gt, mask_like := np.zeros(gt.shape[:2], np.uint8), rng, cfg.load_size, cfg.crop_size)
                    bd = trainer.train_step_supervised(img, gt, mask)
                else:
                    sample, real_shadow = _prepare_sample(index, int(record_idx), cfg, rng)
                    bd = trainer.train_step(sample, real_shadow)
                row = bd.scalars()
                writer.writerow(
                    [trainer.step, epoch]
                    + [f"{row[k]:.6f}" for k in LOG_FIELDS[2:]]
                )
                if progress is not None:
                    progress(trainer.step, epoch, row)
                if cfg.max_steps is not None and trainer.step >= cfg.max_steps:
                    stop = True
                    break
            trainer.epoch = epoch + 1
            ckpt = run_dir / f"checkpoint_epoch{epoch:03d}.pt"
            trainer.save_checkpoint(ckpt)
            kept.append(ckpt)
            while len(kept) > cfg.checkpoint_keep:
                old = kept.pop(0)
                old.unlink(missing_ok=True)
            if stop:
                break

    final = run_dir / "checkpoint_final.pt"
    trainer.save_checkpoint(final)
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    manifest["wall_clock_seconds"] = round(time.time() - t0, 3)
    manifest["steps"] = trainer.step
    manifest["final_checkpoint"] = final.name
    (run_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2))
    return final
