"""Adversarial training on images plus unordered frame pairs.

Each step either updates the single-image discriminator or the pair
discriminator; the pair branch is chosen with a probability that anneals
from 0.5 to 0.1 over every resolution-transition phase. Fake pairs share
their static inputs bit-exactly; half of the pair discriminator's fake
batches are replaced by two crops of one real frame taken at different
locations, which stops it from judging image quality instead of pairwise
consistency.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import torch
import torch.nn.functional as F

from .config import GeneratorConfig, TrainingSchedule
from .data import ImageDataset, VideoDataset
from .errors import NumericsError
from .latents import broadcast_styles
from .model import ModelBundle, ema_update_module


@dataclass
class FramePair:
    frame_a: torch.Tensor       # (C, H, W)
    frame_b: torch.Tensor
    source: str                 # real_video_pair | fake_shared_static | crop_pair

    def __post_init__(self):
        if self.frame_a.shape != self.frame_b.shape:
            raise ValueError("pair frames must have equal shapes")


@dataclass
class PairLatents:
    """Inputs for one fake pair: shared static parts, per-frame dynamic parts."""

    z_static: torch.Tensor
    static_maps: list[torch.Tensor]
    z_dynamic: tuple[torch.Tensor, torch.Tensor]
    dynamic_maps: tuple[list[torch.Tensor], list[torch.Tensor]]

    def frame_inputs(self, k: int):
        """Exact generator inputs for frame k; the static pieces are the
        same tensors for both frames."""
        z = torch.cat([self.z_static, self.z_dynamic[k]])
        return z, self.static_maps, self.dynamic_maps[k]


def sample_pair_latents(rng: torch.Generator, config: GeneratorConfig,
                        stage: int | None = None) -> PairLatents:
    """Shared (z_static, static maps), independent dynamic parts per frame."""
    levels = config.num_blocks if stage is None else stage + 1
    sides = config.noise_sides()[:levels]
    z_static = torch.randn(config.static_dim, generator=rng)
    static_maps = [torch.randn(s, s, generator=rng) for s in sides]
    z_dyn = tuple(torch.randn(config.dynamic_dim, generator=rng) for _ in range(2))
    dyn_maps = tuple([torch.randn(s, s, generator=rng) for s in sides]
                     for _ in range(2))
    return PairLatents(z_static, static_maps, z_dyn, dyn_maps)


def synthesize_pair(bundle: ModelBundle, latents: PairLatents,
                    stage: int | None = None, alpha: float = 1.0,
                    grad: bool = False) -> FramePair:
    frames = []
    ctx = torch.enable_grad() if grad else torch.no_grad()
    with ctx:
        for k in range(2):
            z, static_maps, dynamic_maps = latents.frame_inputs(k)
            w = bundle.mapping(z)
            styles = broadcast_styles(w, bundle.config.num_blocks)
            img = bundle.generator(styles.styles.unsqueeze(0),
                                   static_maps, dynamic_maps,
                                   stage=stage, alpha=alpha)
            frames.append(img[0])
    return FramePair(frames[0], frames[1], source="fake_shared_static")


def sample_fake_pair(bundle: ModelBundle, rng: torch.Generator,
                     stage: int | None = None, alpha: float = 1.0) -> FramePair:
    return synthesize_pair(bundle, sample_pair_latents(rng, bundle.config, stage),
                           stage=stage, alpha=alpha)


def sample_real_pair(videos: VideoDataset, rng: torch.Generator,
                     resolution: int | None = None) -> FramePair:
    """Two frames from one uniformly chosen video; indices independent, in
    any order and arbitrarily far apart."""
    if len(videos) == 0:
        raise ValueError("video store is empty")
    vid = int(torch.randint(len(videos), (1,), generator=rng))
    count = videos.frame_count(vid)
    ia = int(torch.randint(count, (1,), generator=rng))
    ib = int(torch.randint(count, (1,), generator=rng))
    a = videos.frame(vid, ia, resolution=resolution)
    b = videos.frame(vid, ib, resolution=resolution)
    return FramePair(a, b, source="real_video_pair")


def sample_crop_pair(frame: torch.Tensor, crop_size: int,
                     rng: torch.Generator) -> FramePair:
    """Two same-size crops of one frame at distinct offsets; used as FAKE
    input to the pair discriminator."""
    h, w = frame.shape[-2:]
    if h < crop_size or w < crop_size:
        raise ValueError(f"frame {h}x{w} smaller than crop {crop_size}")
    if h == crop_size and w == crop_size:
        raise ValueError("frame equals crop size in both axes; "
                         "cannot place two distinct crops")

    def offsets():
        top = int(torch.randint(h - crop_size + 1, (1,), generator=rng))
        left = int(torch.randint(w - crop_size + 1, (1,), generator=rng))
        return top, left

    first = offsets()
    second = offsets()
    while second == first:
        second = offsets()
    a = frame[..., first[0]:first[0] + crop_size, first[1]:first[1] + crop_size]
    b = frame[..., second[0]:second[0] + crop_size, second[1]:second[1] + crop_size]
    return FramePair(a.clone(), b.clone(), source="crop_pair")


# --- losses ------------------------------------------------------------------

def generator_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating: softplus(-D(fake))."""
    _check_finite(d_fake, "generator logits")
    return F.softplus(-d_fake).mean()


def discriminator_loss(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    _check_finite(d_real, "real logits")
    _check_finite(d_fake, "fake logits")
    return F.softplus(-d_real).mean() + F.softplus(d_fake).mean()


def _check_finite(t: torch.Tensor, what: str) -> None:
    if not torch.isfinite(t).all():
        raise NumericsError(f"non-finite {what}")


def r1_penalty(d_out: torch.Tensor, real_inputs: list[torch.Tensor] | torch.Tensor,
               gamma: float = 10.0) -> torch.Tensor:
    """(gamma / 2) * E[ ||grad_x D(x)||^2 ] over the real batch."""
    if isinstance(real_inputs, torch.Tensor):
        real_inputs = [real_inputs]
    grads = torch.autograd.grad(outputs=d_out.sum(), inputs=real_inputs,
                                create_graph=True)
    norm_sq = sum(g.flatten(1).pow(2).sum(dim=1) for g in grads)
    return 0.5 * gamma * norm_sq.mean()


# --- the loop ----------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    samples_seen: int
    resolution: int
    phase: str
    alpha: float
    proportion: float
    kind: str                   # "static" | "pairwise"
    d_loss: float
    g_loss: float
    r1: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__)


class Trainer:
    """Single-writer progressive training loop."""

    def __init__(self, bundle: ModelBundle, schedule: TrainingSchedule,
                 images: ImageDataset, videos: VideoDataset, seed: int = 0):
        self.bundle = bundle
        self.schedule = schedule
        self.images = images
        self.videos = videos
        self.rng = torch.Generator().manual_seed(seed)
        self.final_resolution = bundle.config.final_resolution
        self._lr = None
        betas = (schedule.adam_beta1, schedule.adam_beta2)
        lr = schedule.learning_rate(schedule.start_resolution)
        self.opt_g = torch.optim.Adam(
            [{"params": bundle.generator.parameters()},
             {"params": bundle.mapping.parameters(),
              "lr_factor": schedule.mapping_lr_factor}],
            lr=lr, betas=betas)
        self.opt_ds = torch.optim.Adam(bundle.d_static.parameters(), lr=lr, betas=betas)
        self.opt_dp = torch.optim.Adam(bundle.d_pairwise.parameters(), lr=lr, betas=betas)
        self._set_lr(lr)

    def _set_lr(self, lr: float) -> None:
        if lr == self._lr:
            return
        for opt in (self.opt_g, self.opt_ds, self.opt_dp):
            for group in opt.param_groups:
                group["lr"] = lr * group.get("lr_factor", 1.0)
        self._lr = lr

    # -- state helpers

    def state(self) -> tuple:
        samples = self.bundle.progress["samples_seen"]
        phase, _ = self.schedule.phase_at(samples, self.final_resolution)
        alpha = self.schedule.alpha_at(samples, self.final_resolution)
        proportion = self.schedule.pairwise_proportion(samples, self.final_resolution)
        stage = int(math.log2(phase.resolution)) - 2
        return phase, alpha, proportion, stage

    def _real_images(self, batch: int, resolution: int, alpha: float) -> torch.Tensor:
        imgs = self.images.batch(batch, resolution, self.rng)
        return _blend_real(imgs, alpha)

    def _real_pair(self, resolution: int, alpha: float) -> FramePair:
        pair = sample_real_pair(self.videos, self.rng, resolution=resolution)
        return FramePair(_blend_real(pair.frame_a.unsqueeze(0), alpha)[0],
                         _blend_real(pair.frame_b.unsqueeze(0), alpha)[0],
                         source=pair.source)

    def _fake_pair_source(self, resolution: int) -> torch.Tensor:
        """A real frame at 2x the current resolution for crop sampling."""
        vid = int(torch.randint(len(self.videos), (1,), generator=self.rng))
        idx = int(torch.randint(self.videos.frame_count(vid), (1,), generator=self.rng))
        return self.videos.frame(vid, idx, resolution=2 * resolution)

    # -- steps

    def training_step(self) -> StepRecord:
        phase, alpha, proportion, stage = self.state()
        resolution = phase.resolution
        batch = self.schedule.batch_size(resolution)
        self._set_lr(self.schedule.learning_rate(resolution))

        use_pairwise = float(torch.rand((), generator=self.rng)) < proportion
        if use_pairwise:
            d_loss, g_loss, r1 = self._pairwise_step(batch, stage, alpha, resolution)
            kind = "pairwise"
        else:
            d_loss, g_loss, r1 = self._static_step(batch, stage, alpha, resolution)
            kind = "static"

        ema_update_module(self.bundle.ema_generator, self.bundle.generator,
                          self.schedule.ema_alpha)
        self.bundle.progress["samples_seen"] += batch
        self.bundle.progress["steps"] += 1
        return StepRecord(step=self.bundle.progress["steps"],
                          samples_seen=self.bundle.progress["samples_seen"],
                          resolution=resolution, phase=phase.kind, alpha=alpha,
                          proportion=proportion, kind=kind,
                          d_loss=d_loss, g_loss=g_loss, r1=r1)

    def _sample_fake_batch(self, batch: int, stage: int, alpha: float,
                           grad: bool) -> torch.Tensor:
        cfg = self.bundle.config
        sides = cfg.noise_sides()[: stage + 1]
        z = torch.randn(batch, cfg.latent_dim, generator=self.rng)
        static_maps = [torch.randn(batch, 1, s, s, generator=self.rng) for s in sides]
        dynamic_maps = [torch.randn(batch, 1, s, s, generator=self.rng) for s in sides]
        ctx = torch.enable_grad() if grad else torch.no_grad()
        with ctx:
            w = self.bundle.mapping(z)
            styles = _mixed_styles(self.bundle, w, batch, stage, self.rng)
            return self.bundle.generator(styles, static_maps, dynamic_maps,
                                         stage=stage, alpha=alpha)

    def _static_step(self, batch, stage, alpha, resolution):
        bundle = self.bundle
        real = self._real_images(batch, resolution, alpha).requires_grad_(True)
        fake = self._sample_fake_batch(batch, stage, alpha, grad=False)

        d_real = bundle.d_static(real, stage=stage, alpha=alpha)
        d_fake = bundle.d_static(fake, stage=stage, alpha=alpha)
        loss_d = discriminator_loss(d_real, d_fake)
        r1 = r1_penalty(d_real, real, gamma=self.schedule.r1_gamma)
        self.opt_ds.zero_grad(set_to_none=True)
        (loss_d + r1).backward()
        self.opt_ds.step()

        fake = self._sample_fake_batch(batch, stage, alpha, grad=True)
        loss_g = generator_loss(bundle.d_static(fake, stage=stage, alpha=alpha))
        self.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        self.opt_g.step()
        return float(loss_d.detach()), float(loss_g.detach()), float(r1.detach())

    def _pairwise_step(self, batch, stage, alpha, resolution):
        bundle = self.bundle
        pair_batch = max(1, batch // 2)

        reals = [self._real_pair(resolution, alpha) for _ in range(pair_batch)]
        real_a = torch.stack([p.frame_a for p in reals]).requires_grad_(True)
        real_b = torch.stack([p.frame_b for p in reals]).requires_grad_(True)

        # fake side: generated pairs, or crop pairs with the configured probability
        fakes = []
        for _ in range(pair_batch):
            use_crop = (float(torch.rand((), generator=self.rng))
                        < self.schedule.crop_pair_probability)
            if use_crop:
                src = self._fake_pair_source(resolution)
                fakes.append(sample_crop_pair(src, resolution, self.rng))
            else:
                fakes.append(sample_fake_pair(bundle, self.rng, stage=stage, alpha=alpha))
        fake_a = torch.stack([p.frame_a for p in fakes]).detach()
        fake_b = torch.stack([p.frame_b for p in fakes]).detach()

        d_real = bundle.d_pairwise(real_a, real_b, stage=stage, alpha=alpha)
        d_fake = bundle.d_pairwise(fake_a, fake_b, stage=stage, alpha=alpha)
        loss_d = discriminator_loss(d_real, d_fake)
        r1 = r1_penalty(d_real, [real_a, real_b], gamma=self.schedule.r1_gamma)
        self.opt_dp.zero_grad(set_to_none=True)
        (loss_d + r1).backward()
        self.opt_dp.step()

        # generator step through the pair discriminator (generated pairs only)
        gen_pairs = [synthesize_pair(bundle, sample_pair_latents(self.rng, bundle.config, stage),
                                     stage=stage, alpha=alpha, grad=True)
                     for _ in range(pair_batch)]
        ga = torch.stack([p.frame_a for p in gen_pairs])
        gb = torch.stack([p.frame_b for p in gen_pairs])
        loss_g = generator_loss(bundle.d_pairwise(ga, gb, stage=stage, alpha=alpha))
        self.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        self.opt_g.step()
        return float(loss_d.detach()), float(loss_g.detach()), float(r1.detach())

    def run(self, steps: int, log_path: str | Path | None = None,
            log_every: int = 1, checkpoint_path: str | Path | None = None,
            checkpoint_every: int = 500) -> list[StepRecord]:
        from .model import save_checkpoint

        records = []
        log_file = open(log_path, "a") if log_path else None
        try:
            for _ in range(steps):
                rec = self.training_step()
                records.append(rec)
                if log_file and rec.step % log_every == 0:
                    log_file.write(rec.to_json() + "\n")
                if checkpoint_path and rec.step % checkpoint_every == 0:
                    save_checkpoint(self.bundle, checkpoint_path)
            if checkpoint_path:
                save_checkpoint(self.bundle, checkpoint_path)
        finally:
            if log_file:
                log_file.close()
        return records


def _blend_real(images: torch.Tensor, alpha: float) -> torch.Tensor:
    """During a transition, real data is faded the same way generator output
    is: blended with its own downsampled-upsampled version."""
    if alpha >= 1.0:
        return images
    low = F.interpolate(F.avg_pool2d(images, 2), scale_factor=2, mode="nearest")
    return (1.0 - alpha) * low + alpha * images


def _mixed_styles(bundle: ModelBundle, w: torch.Tensor, batch: int, stage: int,
                  rng: torch.Generator) -> torch.Tensor:
    """Broadcast styles with optional two-style mixing per sample."""
    cfg = bundle.config
    n = cfg.num_blocks
    styles = w.unsqueeze(1).repeat(1, n, 1)
    if cfg.style_mixing_prob <= 0 or stage < 1:
        return styles
    mix_mask = torch.rand(batch, generator=rng) < cfg.style_mixing_prob
    if not mix_mask.any():
        return styles
    z2 = torch.randn(batch, cfg.latent_dim, generator=rng)
    w2 = bundle.mapping(z2)
    for i in range(batch):
        if mix_mask[i]:
            cross = int(torch.randint(1, stage + 1, (1,), generator=rng))
            styles[i, cross:] = w2[i]
    return styles
