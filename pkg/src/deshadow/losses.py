"""Loss terms for joint training, as pure functions of network outputs.

All L1 terms average over every pixel of the full frame so that the loss
weights stay comparable across mask sizes and image resolutions. Works on
torch tensors (differentiable) and plain floats alike.
"""
from dataclasses import dataclass

import torch
import torch.nn.functional as F


class NonFiniteLossError(RuntimeError):
    """A loss term became non-finite during training."""


@dataclass
class LossWeights:
    """Weights for the adversarial, identity, removal, full and area terms."""

    w_gan: float = 1.0
    w_iden: float = 5.0
    w_rem: float = 1.0
    w_full: float = 1.0
    w_area: float = 1.0

    def __post_init__(self):
        for name, v in vars(self).items():
            v = float(v)
            if not (v >= 0 and v == v and v != float("inf")):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    gan: object
    iden: object
    rem: object
    full: object
    area: object
    total: object
    dis: object = 0.0

    def scalars(self):
        return {k: float(v) for k, v in vars(self).items()}


def loss_gen(score_fake):
    """Least-squares generator loss: half the mean squared gap to label 1."""
    return 0.5 * ((score_fake - 1.0) ** 2).mean()


def loss_dis(score_fake, score_real):
    """Least-squares discriminator loss against labels 0 (fake) / 1 (real)."""
    return 0.5 * (score_fake**2).mean() + 0.5 * ((score_real - 1.0) ** 2).mean()


def loss_identity(gen_out_on_shadow, shadow_region):
    """L1 between the generator's output on a real shadow and that shadow."""
    return (gen_out_on_shadow - shadow_region).abs().mean()


def loss_removal(removed, nonshadow_region):
    """Cycle-style L1 between the deshadowed region and the original region."""
    return (removed - nonshadow_region).abs().mean()


def loss_full(refined, image):
    """Whole-frame L1 between the refined image and the input image."""
    return (refined - image).abs().mean()


def dilate_mask_t(mask, tau):
    """Torch twin of data.dilate_mask: max-pool with the same anchoring."""
    if tau < 0 or int(tau) != tau:
        raise ValueError(f"kernel size must be a nonnegative integer, got {tau}")
    if tau <= 1:
        return mask
    tau = int(tau)
    squeeze = mask.dim() == 2
    m = mask[None, None] if squeeze else mask
    lo = tau // 2
    hi = tau - 1 - lo
    m = F.pad(m.float(), (lo, hi, lo, hi), value=0.0)
    m = F.max_pool2d(m, kernel_size=tau, stride=1)
    return m[0, 0] if squeeze else m


def loss_area(refined, image, mask, tau):
    """Dilated-mask-weighted L1 focusing on the region and its surroundings.

    Per pixel the channel-averaged absolute difference is weighted by the
    dilated mask; the sum is normalized by the full pixel count.
    """
    if not torch.is_tensor(mask):
        mask = torch.as_tensor(mask)
    psi = dilate_mask_t(mask.to(refined.dtype), tau)
    if psi.dim() == 2:
        psi = psi[None, None]
    elif psi.dim() == 3:
        psi = psi[:, None]
    per_pixel = (refined - image).abs().mean(dim=-3, keepdim=True)
    return (psi * per_pixel).mean()


def total_loss(gan, iden, rem, full, area, weights, dis=0.0):
    """Weighted sum of the generator-side terms; dis is reported separately."""
    terms = {"gan": gan, "iden": iden, "rem": rem, "full": full, "area": area, "dis": dis}
    for name, v in terms.items():
        val = float(v.detach()) if torch.is_tensor(v) else float(v)
        if val != val or val in (float("inf"), float("-inf")):
            raise NonFiniteLossError(f"loss term '{name}' is non-finite ({val})")
    total = (
        weights.w_gan * gan
        + weights.w_iden * iden
        + weights.w_rem * rem
        + weights.w_full * full
        + weights.w_area * area
    )
    return LossBreakdown(gan=gan, iden=iden, rem=rem, full=full, area=area, total=total, dis=dis)
