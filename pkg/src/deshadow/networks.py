"""The four sub-networks: generator, remover, refiner, and discriminator.

Generator/remover/refiner share one residual backbone and differ only in
input channel count (the refiner takes the mask as a fourth channel). The
discriminator is the 70x70-receptive-field patch discriminator.
"""
from enum import Enum

import torch
import torch.nn as nn


class NetworkRole(str, Enum):
    GENERATOR = "generator"
    REMOVER = "remover"
    REFINER = "refiner"
    DISCRIMINATOR = "discriminator"


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.block(x)


class ResnetBackbone(nn.Module):
    """7x7 head, two stride-2 downs, nine residual blocks, symmetric ups.

    Outputs 3 channels through tanh; preserves resolution for inputs with
    sides divisible by 4. Reflection padding in head and tail.
    """

    def __init__(self, in_channels=3, base_channels=64, n_blocks=9):
        super().__init__()
        if in_channels not in (3, 4):
            raise ValueError(f"in_channels must be 3 or 4, got {in_channels}")
        self.in_channels = in_channels
        ch = base_channels
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(in_channels, ch, 7),
            nn.InstanceNorm2d(ch, affine=True),
            nn.ReLU(inplace=True),
        ]
        for _ in range(2):
            layers += [
                nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(ch * 2, affine=True),
                nn.ReLU(inplace=True),
            ]
            ch *= 2
        layers += [ResidualBlock(ch) for _ in range(n_blocks)]
        for _ in range(2):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(ch // 2, affine=True),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        layers += [
            nn.ReflectionPad2d(3),
            nn.Conv2d(ch, 3, 7),
            nn.Tanh(),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        return self.model(x)


class PatchDiscriminator(nn.Module):
    """70x70 patch discriminator: one score per overlapping patch."""

    def __init__(self, in_channels=3):
        super().__init__()
        self.in_channels = in_channels

        def block(cin, cout, stride, norm=True):
            layers = [nn.Conv2d(cin, cout, 4, stride=stride, padding=1)]
            if norm:
                layers.append(nn.InstanceNorm2d(cout, affine=True))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            return layers

        self.model = nn.Sequential(
            *block(in_channels, 64, 2, norm=False),
            *block(64, 128, 2),
            *block(128, 256, 2),
            *block(256, 512, 1),
            nn.Conv2d(512, 1, 4, stride=1, padding=1),
        )

    def forward(self, x):
        return self.model(x)


def build_backbone(in_channels, role=None):
    net = ResnetBackbone(in_channels=in_channels)
    net.role = role or (NetworkRole.REFINER if in_channels == 4 else NetworkRole.GENERATOR)
    return net


def build_discriminator():
    net = PatchDiscriminator()
    net.role = NetworkRole.DISCRIMINATOR
    return net


def init_weights(net, std, generator=None):
    """Gaussian init: conv weights N(0, std^2), norm scales N(1, std^2), biases 0."""
    if std <= 0:
        raise ValueError(f"init std must be positive, got {std}")
    for m in net.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            m.weight.data.normal_(0.0, std, generator=generator)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            m.weight.data.normal_(1.0, std, generator=generator)
            m.bias.data.zero_()


def _as_mask_tensor(mask, like):
    if not torch.is_tensor(mask):
        mask = torch.as_tensor(mask)
    mask = mask.to(like.dtype)
    if mask.dim() == 2:
        mask = mask[None, None]
    elif mask.dim() == 3:
        mask = mask[:, None]
    return mask


def forward_generate(gen, region, mask):
    """Run the generator and re-mask so output exists only on the region."""
    mask = _as_mask_tensor(mask, region)
    return gen(region) * mask


def forward_remove(remover, region, mask):
    mask = _as_mask_tensor(mask, region)
    return remover(region) * mask


def forward_refine(refiner, embed):
    if embed.shape[1] != 4:
        raise ValueError(f"refiner expects 4 input channels, got {embed.shape[1]}")
    return refiner(embed)


def forward_discriminate(dis, region):
    return dis(region)
