"""Translation networks: a residual encoder-decoder generator and a patch
discriminator, both fully convolutional over 2D slices in [-1, 1].

The generator predicts a residual on top of its input and saturates with a
hard clamp, so zeroing the residual head yields an exact identity mapping.
Any plane size divisible by 4 is shape-preserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class GeneratorConfig:
    n_res_blocks: int = 9
    base_channels: int = 64
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.n_res_blocks < 1 or self.base_channels < 1:
            raise ValueError(f"invalid generator config: {self}")


@dataclass
class DiscriminatorConfig:
    n_layers: int = 3
    base_channels: int = 64
    in_channels: int = 1


def desk_generator_config() -> GeneratorConfig:
    return GeneratorConfig(n_res_blocks=2, base_channels=8)


def desk_discriminator_config() -> DiscriminatorConfig:
    return DiscriminatorConfig(n_layers=3, base_channels=8)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


def _conv_in_relu(c_in, c_out, kernel, stride=1, padding=0, padding_mode="zeros"):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=padding, padding_mode=padding_mode),
        nn.InstanceNorm2d(c_out, affine=True),
        nn.ReLU(),
    )


def _upsample_conv(c_in, c_out):
    return nn.Sequential(
        nn.Upsample(scale_factor=2, mode="nearest"),
        nn.Conv2d(c_in, c_out, 3, padding=1),
        nn.InstanceNorm2d(c_out, affine=True),
        nn.ReLU(),
    )


class ResnetGenerator(nn.Module):
    """7x7 head, two stride-2 encoders, residual blocks, two upsampling
    decoders, 7x7 residual head; output = clamp(input + residual, -1, 1)."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.head = _conv_in_relu(cfg.in_channels, c, 7, padding=3, padding_mode="reflect")
        self.down1 = _conv_in_relu(c, 2 * c, 3, stride=2, padding=1)
        self.down2 = _conv_in_relu(2 * c, 4 * c, 3, stride=2, padding=1)
        self.res_blocks = nn.ModuleList(ResidualBlock(4 * c) for _ in range(cfg.n_res_blocks))
        self.up1 = _upsample_conv(4 * c, 2 * c)
        self.up2 = _upsample_conv(2 * c, c)
        self.tail = nn.Conv2d(c, cfg.out_channels, 7, padding=3, padding_mode="reflect")

    def encode(self, x) -> list[torch.Tensor]:
        """Encoder tap activations used for patch-contrastive feature matching:
        head, both downsampling stages, and the middle residual block."""
        taps = []
        x = self.head(x)
        taps.append(x)
        x = self.down1(x)
        taps.append(x)
        x = self.down2(x)
        taps.append(x)
        mid = len(self.res_blocks) // 2
        for i, block in enumerate(self.res_blocks):
            x = block(x)
            if i == mid:
                taps.append(x)
        return taps

    def _residual(self, x):
        h = self.head(x)
        d = self.down2(self.down1(h))
        for block in self.res_blocks:
            d = block(d)
        u = self.up2(self.up1(d))
        return self.tail(u)

    def forward(self, x):
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ValueError(f"plane size {tuple(x.shape[-2:])} not divisible by 4")
        return torch.clamp(x + self._residual(x), -1.0, 1.0)

    def zero_residual_head(self):
        """Make the generator an exact identity on [-1, 1] inputs."""
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)
        return self


class PatchDiscriminator(nn.Module):
    """Stacked stride-2 convolutions emitting a spatial grid of realness
    scores, one per receptive-field patch."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        layers = [nn.Conv2d(cfg.in_channels, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        mult = 1
        for i in range(1, cfg.n_layers):
            prev, mult = mult, min(2**i, 8)
            layers += [
                nn.Conv2d(c * prev, c * mult, 4, stride=2, padding=1),
                nn.InstanceNorm2d(c * mult, affine=True),
                nn.LeakyReLU(0.2),
            ]
        prev, mult = mult, min(2**cfg.n_layers, 8)
        layers += [
            nn.Conv2d(c * prev, c * mult, 4, stride=1, padding=1),
            nn.InstanceNorm2d(c * mult, affine=True),
            nn.LeakyReLU(0.2),
        ]
        layers.append(nn.Conv2d(c * mult, 1, 4, stride=1, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return self.body(x)


def build_generator(cfg: GeneratorConfig, seed: int | None = None) -> ResnetGenerator:
    if seed is not None:
        torch.manual_seed(seed)
    return ResnetGenerator(cfg)


def build_discriminator(cfg: DiscriminatorConfig, seed: int | None = None) -> PatchDiscriminator:
    if seed is not None:
        torch.manual_seed(seed)
    return PatchDiscriminator(cfg)
