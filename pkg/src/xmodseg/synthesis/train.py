"""Unpaired slice-wise translation trainers.

Two methods produce fake target-modality generators from unpaired slice
corpora: a two-generator cycle-consistent trainer and a one-generator
contrastive trainer. Both use least-squares patch discriminators, Adam, and
a learning rate held constant until ``decay_start_epoch`` then decayed
linearly to zero at ``epochs``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from ..volume import Volume3D
from .losses import loss_adversarial, loss_cycle, loss_patchnce
from .nets import (
    DiscriminatorConfig,
    GeneratorConfig,
    PatchDiscriminator,
    ResnetGenerator,
)

METHODS = ("cyclegan", "cut")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class SynthesisTrainConfig:
    epochs: int = 100
    decay_start_epoch: int = 25
    batch_size: int = 2
    lr: float = 2e-4
    weight_decay: float = 0.0
    beta1: float = 0.5
    lambda_cycle: float = 10.0
    lambda_identity: float = 5.0
    lambda_nce: float = 1.0
    nce_temperature: float = 0.07
    nce_patches: int = 256
    seed: int = 0
    max_steps: int | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if self.epochs < self.decay_start_epoch:
            raise ValueError("epochs must be >= decay_start_epoch")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError(f"invalid training config: batch={self.batch_size}, lr={self.lr}")


def lr_at_epoch(cfg: SynthesisTrainConfig, epoch: int) -> float:
    """Constant until decay_start_epoch, then linear to 0 at epochs."""
    if epoch <= cfg.decay_start_epoch:
        return cfg.lr
    return cfg.lr * (cfg.epochs - epoch) / (cfg.epochs - cfg.decay_start_epoch)


def extract_axial_slices(volumes: list[Volume3D]) -> np.ndarray:
    """Stack every axial slice of every volume into an (N, 1, W, H) corpus."""
    slices = []
    for v in volumes:
        if v.intensity_domain != "normalized":
            raise ValueError(f"slice corpus expects normalized volumes, got {v.intensity_domain!r}")
        slices.append(np.transpose(v.data, (2, 0, 1)).astype(np.float32))
    if not slices:
        raise ValueError("empty slice corpus")
    return np.concatenate(slices, axis=0)[:, None]


def _adam(params, cfg):
    return torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, 0.999), weight_decay=cfg.weight_decay)


def _sample_batch(rng, corpus, batch_size):
    idx = rng.integers(0, corpus.shape[0], size=batch_size)
    return torch.from_numpy(corpus[idx])


def _nce_over_taps(gen, cfg, rng, src_img, gen_img):
    """Mean patch-contrastive loss over the encoder taps; source features are
    the (detached) keys, generated features the queries."""
    taps_src = gen.encode(src_img)
    taps_gen = gen.encode(gen_img)
    total = 0.0
    count = 0
    for f_src, f_gen in zip(taps_src, taps_gen):
        b, c, h, w = f_src.shape
        n = min(cfg.nce_patches, h * w)
        for i in range(b):
            ids = torch.from_numpy(rng.choice(h * w, size=n, replace=False))
            k = f_src[i].reshape(c, h * w).t()[ids].detach()
            q = f_gen[i].reshape(c, h * w).t()[ids]
            total = total + loss_patchnce(k, q, cfg.nce_temperature)
            count += 1
    return total / count


class _CycleGanState:
    def __init__(self, cfg: SynthesisTrainConfig):
        self.cfg = cfg
        self.g_ab = ResnetGenerator(cfg.generator)
        self.g_ba = ResnetGenerator(cfg.generator)
        self.d_a = PatchDiscriminator(cfg.discriminator)
        self.d_b = PatchDiscriminator(cfg.discriminator)
        self.opt_g = _adam(list(self.g_ab.parameters()) + list(self.g_ba.parameters()), cfg)
        self.opt_d = _adam(list(self.d_a.parameters()) + list(self.d_b.parameters()), cfg)

    @property
    def optimizers(self):
        return (self.opt_g, self.opt_d)

    @property
    def generator(self):
        return self.g_ab

    def step(self, xa, xb, rng):
        cfg = self.cfg
        fake_b = self.g_ab(xa)
        fake_a = self.g_ba(xb)
        rec_a = self.g_ba(fake_b)
        rec_b = self.g_ab(fake_a)
        idt_b = self.g_ab(xb)
        idt_a = self.g_ba(xa)

        adv_g = loss_adversarial(self.d_b(fake_b), "real") + loss_adversarial(self.d_a(fake_a), "real")
        cycle_raw = 0.5 * (loss_cycle(xa, rec_a) + loss_cycle(xb, rec_b))
        idt_raw = 0.5 * (loss_cycle(xb, idt_b) + loss_cycle(xa, idt_a))
        loss_g = adv_g + 2.0 * cfg.lambda_cycle * cycle_raw + 2.0 * cfg.lambda_identity * idt_raw
        self.opt_g.zero_grad()
        loss_g.backward()
        self.opt_g.step()

        loss_d = 0.5 * (
            loss_adversarial(self.d_b(xb), "real")
            + loss_adversarial(self.d_b(fake_b.detach()), "fake")
            + loss_adversarial(self.d_a(xa), "real")
            + loss_adversarial(self.d_a(fake_a.detach()), "fake")
        )
        self.opt_d.zero_grad()
        loss_d.backward()
        self.opt_d.step()

        return {
            "loss_g": float(loss_g.detach()),
            "loss_d": float(loss_d.detach()),
            "adv_g": float(adv_g.detach()),
            "cycle": float(cycle_raw.detach()),
            "identity": float(idt_raw.detach()),
        }


class _CutState:
    def __init__(self, cfg: SynthesisTrainConfig):
        self.cfg = cfg
        self.gen = ResnetGenerator(cfg.generator)
        self.disc = PatchDiscriminator(cfg.discriminator)
        self.opt_g = _adam(self.gen.parameters(), cfg)
        self.opt_d = _adam(self.disc.parameters(), cfg)

    @property
    def optimizers(self):
        return (self.opt_g, self.opt_d)

    @property
    def generator(self):
        return self.gen

    def step(self, xa, xb, rng):
        cfg = self.cfg
        fake_b = self.gen(xa)
        idt_b = self.gen(xb)

        adv_g = loss_adversarial(self.disc(fake_b), "real")
        nce_src = _nce_over_taps(self.gen, cfg, rng, xa, fake_b)
        nce_idt = _nce_over_taps(self.gen, cfg, rng, xb, idt_b)
        nce = 0.5 * (nce_src + nce_idt)
        loss_g = adv_g + cfg.lambda_nce * nce
        self.opt_g.zero_grad()
        loss_g.backward()
        self.opt_g.step()

        loss_d = 0.5 * (
            loss_adversarial(self.disc(xb), "real")
            + loss_adversarial(self.disc(fake_b.detach()), "fake")
        )
        self.opt_d.zero_grad()
        loss_d.backward()
        self.opt_d.step()

        return {
            "loss_g": float(loss_g.detach()),
            "loss_d": float(loss_d.detach()),
            "adv_g": float(adv_g.detach()),
            "nce": float(nce.detach()),
            "nce_src": float(nce_src.detach()),
            "nce_idt": float(nce_idt.detach()),
        }


@dataclass
class TranslationResult:
    method: str
    generator: ResnetGenerator
    history: list[dict]
    config: SynthesisTrainConfig
    checkpoint_path: Path | None = None
    epochs_trained: int = 0


def train_translation(method: str, source_slices: np.ndarray, target_slices: np.ndarray,
                      cfg: SynthesisTrainConfig, out_dir=None) -> TranslationResult:
    """Train one translation method on unpaired slice corpora.

    Writes a versioned generator checkpoint and a per-step loss CSV under
    out_dir when given. Raises TrainingDiverged on any non-finite loss.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    if len(source_slices) == 0 or len(target_slices) == 0:
        raise ValueError("empty slice corpus")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    state = _CycleGanState(cfg) if method == "cyclegan" else _CutState(cfg)

    steps_per_epoch = math.ceil(max(len(source_slices), len(target_slices)) / cfg.batch_size)
    history = []
    step = 0
    epoch = 0
    done = False
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        for opt in state.optimizers:
            for group in opt.param_groups:
                group["lr"] = lr
        for _ in range(steps_per_epoch):
            xa = _sample_batch(rng, source_slices, cfg.batch_size)
            xb = _sample_batch(rng, target_slices, cfg.batch_size)
            losses = state.step(xa, xb, rng)
            if not all(math.isfinite(v) for v in losses.values()):
                raise TrainingDiverged(f"{method} diverged at step {step}: {losses}")
            history.append({"step": step, "epoch": epoch, "lr": lr, **losses})
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        if done:
            break

    result = TranslationResult(method, state.generator, history, cfg, epochs_trained=epoch + 1)
    if out_dir is not None:
        out_dir = Path(out_dir)
        result.checkpoint_path = save_generator_checkpoint(
            out_dir / f"generator_{method}.ckpt", state.generator, method, step=step,
            epochs_trained=epoch + 1,
        )
        write_history_csv(history, out_dir / f"history_{method}.csv")
    return result


def write_history_csv(rows: list[dict], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)


def save_generator_checkpoint(path, gen: ResnetGenerator, method: str, *, step: int = 0,
                              epochs_trained: int = 0):
    return save_checkpoint(
        path,
        "translation",
        asdict(gen.cfg),
        gen.state_dict(),
        step=step,
        extra={"method": method, "epochs_trained": epochs_trained},
    )


def load_generator_checkpoint(path):
    payload = load_checkpoint(path, "translation")
    try:
        cfg = GeneratorConfig(**payload["config"])
    except TypeError as e:
        raise CheckpointError(f"bad generator config in {path}: {e}") from e
    gen = ResnetGenerator(cfg)
    gen.load_state_dict(payload["weights"])
    gen.eval()
    return gen, payload


def translate_volume(gen: ResnetGenerator, v: Volume3D, method: str = "") -> Volume3D:
    """Translate a normalized volume slice by slice along the axial axis."""
    if v.intensity_domain != "normalized":
        raise ValueError("translation expects a normalized volume")
    stack = np.transpose(v.data, (2, 0, 1)).astype(np.float32)[:, None]
    gen.eval()
    with torch.no_grad():
        out = gen(torch.from_numpy(stack)).numpy()
    data = np.transpose(out[:, 0], (1, 2, 0))
    meta = dict(v.meta)
    if method:
        meta["modality"] = f"fake{method}"
        meta["synthesis_method"] = method
    return Volume3D(data, v.spacing, "normalized", v.case_id, meta)
