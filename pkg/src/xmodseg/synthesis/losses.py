"""Translation training losses: least-squares adversarial, L1 cycle/identity,
and the patch-wise contrastive (InfoNCE) loss over matched feature positions.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def loss_adversarial(patch_scores: torch.Tensor, target: str) -> torch.Tensor:
    """Least-squares GAN objective: mean (score - t)^2 with t=1 for 'real',
    t=0 for 'fake'."""
    if target not in ("real", "fake"):
        raise ValueError(f"target must be 'real' or 'fake', got {target!r}")
    t = 1.0 if target == "real" else 0.0
    return ((patch_scores - t) ** 2).mean()


def loss_cycle(x: torch.Tensor, x_reconstructed: torch.Tensor, weight: float = 1.0) -> torch.Tensor:
    """Weighted mean absolute reconstruction error."""
    if x.shape != x_reconstructed.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_reconstructed.shape)}")
    return weight * (x - x_reconstructed).abs().mean()


def loss_patchnce(feat_src: torch.Tensor, feat_gen: torch.Tensor, temperature: float) -> torch.Tensor:
    """Contrastive loss over N matched feature positions, shape (N, C).

    Position i of the generated features is pulled toward position i of the
    source features against all N source positions:
    mean_i -log( exp(s_ii/tau) / sum_j exp(s_ij/tau) ) with cosine
    similarities s. Vectors are L2-normalized here.
    """
    if feat_src.shape != feat_gen.shape:
        raise ValueError(f"feature count mismatch: {tuple(feat_src.shape)} vs {tuple(feat_gen.shape)}")
    if feat_src.dim() != 2:
        raise ValueError(f"expected (N, C) features, got shape {tuple(feat_src.shape)}")
    q = F.normalize(feat_gen, dim=1)
    k = F.normalize(feat_src, dim=1)
    logits = q @ k.t() / temperature
    targets = torch.arange(logits.shape[0], device=logits.device)
    return F.cross_entropy(logits, targets)
