"""Hybrid 2D/3D segmentation network for anisotropic volumes.

A U-shaped trunk where every level runs a parallel in-plane branch
(3x3x1 convolutions) and a volumetric branch (3x3x3 convolutions), merged by
an element-wise-subtraction feature merging unit (FMU). The first
downsampling halves only the plane (2x2x1); deeper transitions halve all
axes (2x2x2), so a plane divisible by 2^depth and a slice count divisible by
2^(depth-1) are required. The decoder mirrors the encoder with
nearest-neighbor upsampling, a convolution, and FMU fusion with the skip.

Tensors are laid out (N, C, W, H, D); kernel tuples follow the same axis
order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .volume import LabelMap

FMU_MODES = ("subtract", "abs_subtract")
LEAKY_SLOPE = 0.01
DICE_SMOOTH = 1e-5


@dataclass
class MNetConfig:
    depth: int = 4
    base_channels: int = 4
    n_classes: int = 3
    fmu_mode: str = "subtract"

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1 or self.n_classes < 2:
            raise ValueError(f"invalid network config: {self}")
        if self.fmu_mode not in FMU_MODES:
            raise ValueError(f"fmu_mode must be one of {FMU_MODES}, got {self.fmu_mode!r}")

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(self.depth + 1)]

    def plane_divisor(self) -> int:
        return 2**self.depth

    def slice_divisor(self) -> int:
        return 2 ** (self.depth - 1)


def paper_scale_config() -> MNetConfig:
    """Channel schedule sized toward the single-digit-million parameter range
    reported for the reference hybrid network."""
    return MNetConfig(depth=4, base_channels=16)


def fmu_merge(a: torch.Tensor, b: torch.Tensor, mode: str = "subtract") -> torch.Tensor:
    """Feature merging unit: element-wise a - b, or |a - b| in abs mode."""
    if a.shape != b.shape:
        raise ValueError(f"FMU shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if mode not in FMU_MODES:
        raise ValueError(f"unknown FMU mode {mode!r}")
    d = a - b
    return d.abs() if mode == "abs_subtract" else d


def _conv_unit(c_in, c_out, kernel):
    pad = tuple(k // 2 for k in kernel)
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, kernel, padding=pad),
        nn.InstanceNorm3d(c_out, affine=True),
        nn.LeakyReLU(LEAKY_SLOPE),
        nn.Conv3d(c_out, c_out, kernel, padding=pad),
        nn.InstanceNorm3d(c_out, affine=True),
        nn.LeakyReLU(LEAKY_SLOPE),
    )


class DualBranchBlock(nn.Module):
    """Parallel 3x3x1 and 3x3x3 branches fused by the FMU."""

    def __init__(self, c_in, c_out, fmu_mode):
        super().__init__()
        self.fmu_mode = fmu_mode
        self.branch2d = _conv_unit(c_in, c_out, (3, 3, 1))
        self.branch3d = _conv_unit(c_in, c_out, (3, 3, 3))

    def forward(self, x):
        return fmu_merge(self.branch2d(x), self.branch3d(x), self.fmu_mode)


class UpFuse(nn.Module):
    """Nearest-neighbor upsampling, convolution to the skip width, FMU fusion
    with the skip, then a dual-branch block."""

    def __init__(self, c_in, c_skip, scale, fmu_mode):
        super().__init__()
        self.scale = scale
        self.fmu_mode = fmu_mode
        self.conv = nn.Sequential(
            nn.Conv3d(c_in, c_skip, (3, 3, 3), padding=1),
            nn.InstanceNorm3d(c_skip, affine=True),
            nn.LeakyReLU(LEAKY_SLOPE),
        )
        self.block = DualBranchBlock(c_skip, c_skip, fmu_mode)

    def forward(self, x, skip):
        x = F.interpolate(x, scale_factor=self.scale, mode="nearest")
        x = self.conv(x)
        x = fmu_merge(x, skip, self.fmu_mode)
        return self.block(x)


class MNet(nn.Module):
    def __init__(self, cfg: MNetConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        self.encoders = nn.ModuleList(
            [DualBranchBlock(1 if i == 0 else ch[i - 1], ch[i], cfg.fmu_mode) for i in range(cfg.depth + 1)]
        )
        # first transition keeps the slice axis; deeper ones halve it too
        self.pool_kernels = [(2, 2, 1) if i == 1 else (2, 2, 2) for i in range(1, cfg.depth + 1)]
        self.decoders = nn.ModuleList(
            [UpFuse(ch[i + 1], ch[i], self.pool_kernels[i], cfg.fmu_mode) for i in range(cfg.depth)]
        )
        self.head = nn.Conv3d(ch[0], cfg.n_classes, 1)
        self.apply(_init_weights)

    def check_input_shape(self, shape):
        w, h, d = shape[-3:]
        pd, sd = self.cfg.plane_divisor(), self.cfg.slice_divisor()
        if w % pd or h % pd:
            raise ValueError(f"plane size {w}x{h} not divisible by {pd}")
        if d % sd:
            raise ValueError(f"slice count {d} not divisible by {sd}")

    def forward(self, x):
        """(N, 1, W, H, D) normalized input -> (N, n_classes, W, H, D)
        per-voxel class probabilities."""
        self.check_input_shape(x.shape)
        skips = []
        for i in range(self.cfg.depth):
            x = self.encoders[i](x)
            skips.append(x)
            x = F.max_pool3d(x, self.pool_kernels[i])
        x = self.encoders[self.cfg.depth](x)
        for i in range(self.cfg.depth - 1, -1, -1):
            x = self.decoders[i](x, skips[i])
        return torch.softmax(self.head(x), dim=1)


def _init_weights(m):
    if isinstance(m, nn.Conv3d):
        nn.init.kaiming_normal_(m.weight, a=LEAKY_SLOPE, mode="fan_in", nonlinearity="leaky_relu")
        if m.bias is not None:
            nn.init.zeros_(m.bias)


def build_mnet(cfg: MNetConfig, seed: int = 0) -> MNet:
    """Deterministically initialized network: same seed, same weights."""
    torch.manual_seed(seed)
    return MNet(cfg)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def _one_hot(labels: torch.Tensor, n_classes: int) -> torch.Tensor:
    return F.one_hot(labels.long(), n_classes).movedim(-1, 1).to(torch.get_default_dtype())


def seg_loss_parts(probs: torch.Tensor, labels: torch.Tensor):
    """(soft-Dice over foreground classes, voxel-wise cross-entropy), both on
    per-voxel class probabilities."""
    if isinstance(labels, LabelMap):
        labels = torch.from_numpy(labels.data.copy())
    if labels.dim() == probs.dim() - 2:
        labels = labels.unsqueeze(0)
    if labels.shape[-3:] != probs.shape[-3:] or labels.shape[0] != probs.shape[0]:
        raise ValueError(f"probs/labels shape mismatch: {tuple(probs.shape)} vs {tuple(labels.shape)}")
    n_classes = probs.shape[1]
    target = _one_hot(labels, n_classes).to(probs.dtype)

    dims = (0, 2, 3, 4)
    inter = (probs * target).sum(dim=dims)
    denom = probs.sum(dim=dims) + target.sum(dim=dims)
    dice_per_class = 1.0 - (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    dice = dice_per_class[1:].mean()  # foreground classes only

    p_true = (probs * target).sum(dim=1).clamp_min(1e-12)
    ce = -torch.log(p_true).mean()
    return dice, ce


def seg_loss(probs: torch.Tensor, labels) -> torch.Tensor:
    dice, ce = seg_loss_parts(probs, labels)
    return dice + ce


def save_mnet_checkpoint(path, net: MNet, *, optimizer=None, step: int = 0, fold_index: int = 0,
                         extra: dict | None = None):
    merged = {"fold_index": int(fold_index)}
    merged.update(extra or {})
    return save_checkpoint(
        path,
        "segmentation",
        asdict(net.cfg),
        net.state_dict(),
        optimizer_state=optimizer.state_dict() if optimizer is not None else None,
        step=step,
        extra=merged,
    )


def load_mnet_checkpoint(path):
    """Rebuild the network from a segmentation checkpoint; forward outputs are
    bit-identical to the saved model's."""
    payload = load_checkpoint(path, "segmentation")
    try:
        cfg = MNetConfig(**payload["config"])
    except TypeError as e:
        raise CheckpointError(f"bad segmentation config in {path}: {e}") from e
    net = MNet(cfg)
    net.load_state_dict(payload["weights"])
    net.eval()
    return net, payload
