"""Lighting manipulation through a learned style-shift network.

Inversion yields styles, not latent codes, and the mapping network is
impractical to invert; instead a small residual perceptron is trained to
imitate how the mapped style moves when the dynamic part of the latent is
interpolated toward a target. Feeding it an interpolation coefficient ramp
changes lighting smoothly on an inverted image.

The square-root mixing of the dynamic latents keeps the mixture unit-normal
for every coefficient, so intermediate styles stay on the distribution the
mapping network was trained on.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import torch
import torch.nn as nn

from .errors import ConfigError
from .latents import SpatialNoiseSet, StyleSet
from .model import ModelBundle
from .networks import MappingNetwork

log = logging.getLogger(__name__)


class StyleShifter(nn.Module):
    """Residual perceptron: (style, dynamic target, coefficient) -> style.

    The residual is gated by sqrt(c). At c = 0 the mixing degenerates to the
    source latent, so the true shift is identically zero; the gate builds
    that boundary condition in and matches the sqrt(c) leading behavior of
    the target near zero, which a plain perceptron fits poorly.
    """

    def __init__(self, style_dim: int = 512, dynamic_dim: int = 3,
                 hidden: tuple[int, ...] = (512, 512)):
        super().__init__()
        self.style_dim = style_dim
        self.dynamic_dim = dynamic_dim
        dims = [style_dim + dynamic_dim + 1, *hidden]
        layers: list[nn.Module] = []
        for a, b in zip(dims, dims[1:]):
            layers += [nn.Linear(a, b), nn.LeakyReLU(0.2)]
        layers.append(nn.Linear(dims[-1], style_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, w: torch.Tensor, z_dyn_target: torch.Tensor,
                c: torch.Tensor) -> torch.Tensor:
        if c.dim() == 1:
            c = c.unsqueeze(1)
        x = torch.cat([w, z_dyn_target, c], dim=1)
        return w + torch.sqrt(c) * self.net(x)


def mix_dynamic_latents(z_a: torch.Tensor, z_b: torch.Tensor,
                        c: torch.Tensor) -> torch.Tensor:
    """sqrt(1-c) * z_a + sqrt(c) * z_b; variance-preserving for independent
    unit-normal draws."""
    if c.dim() == 1:
        c = c.unsqueeze(1)
    return torch.sqrt(1.0 - c) * z_a + torch.sqrt(c) * z_b


def absolute_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (target - pred).abs().mean()


def relative_direction_loss(pred: torch.Tensor, target: torch.Tensor,
                            w_a: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """1 - cos(target - w_a, pred - w_a) per sample, averaged.

    Samples whose target direction is zero carry no directional signal and
    contribute zero.
    """
    d_t = target - w_a
    d_p = pred - w_a
    nt = d_t.norm(dim=-1)
    np_ = d_p.norm(dim=-1)
    cos = (d_t * d_p).sum(dim=-1) / (nt * np_ + eps)
    loss = 1.0 - cos
    return torch.where(nt < eps, torch.zeros_like(loss), loss).mean()


def shift_loss(pred, target, w_a, rel_weight: float = 0.1) -> torch.Tensor:
    return absolute_loss(pred, target) + rel_weight * relative_direction_loss(
        pred, target, w_a)


def _sample_shift_batch(mapping: MappingNetwork, batch: int, dynamic_dim: int,
                        rng: torch.Generator):
    latent_dim = mapping.latent_dim
    static_dim = latent_dim - dynamic_dim
    z_static = torch.randn(batch, static_dim, generator=rng)
    z_dyn_a = torch.randn(batch, dynamic_dim, generator=rng)
    z_dyn_b = torch.randn(batch, dynamic_dim, generator=rng)
    c = torch.rand(batch, generator=rng)
    with torch.no_grad():
        w_a = mapping(torch.cat([z_static, z_dyn_a], dim=1))
        z_mix = mix_dynamic_latents(z_dyn_a, z_dyn_b, c)
        target = mapping(torch.cat([z_static, z_mix], dim=1))
    return w_a, z_dyn_b, c, target


def train_style_shifter(mapping: MappingNetwork, dynamic_dim: int = 3,
                        n_samples: int = 200_000, batch_size: int = 64,
                        learning_rate: float = 1e-3, rel_weight: float = 0.1,
                        plateau_evals: int = 5, eval_every: int = 100,
                        seed: int = 0,
                        hidden: tuple[int, ...] = (512, 512)) -> StyleShifter:
    """Fit the shifter against the frozen mapping network until plateau.

    Plateau is judged on a fixed held-out batch (minibatch losses are too
    noisy); the learning rate decays on a cosine over the sample budget.
    """
    torch.manual_seed(seed)
    shifter = StyleShifter(mapping.latent_dim, dynamic_dim, hidden)
    opt = torch.optim.Adam(shifter.parameters(), lr=learning_rate)
    rng = torch.Generator().manual_seed(seed)
    steps = max(1, n_samples // batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps)
    eval_batch = _sample_shift_batch(mapping, 256, dynamic_dim,
                                     torch.Generator().manual_seed(seed + 1))
    best = math.inf
    bad_evals = 0
    for step in range(steps):
        w_a, z_b, c, target = _sample_shift_batch(mapping, batch_size,
                                                  dynamic_dim, rng)
        pred = shifter(w_a, z_b, c)
        loss = shift_loss(pred, target, w_a, rel_weight)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        if (step + 1) % eval_every == 0:
            ew, ez, ec, et = eval_batch
            with torch.no_grad():
                eval_loss = float(shift_loss(shifter(ew, ez, ec), et, ew,
                                             rel_weight))
            if eval_loss < best - 1e-5:
                best = eval_loss
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals >= plateau_evals:
                    break
    shifter.eval()
    return shifter


def shift_style(shifter: StyleShifter, w: torch.Tensor,
                z_dyn_target: torch.Tensor, c: float) -> torch.Tensor:
    """Move one style vector toward a dynamic-latent target; inputs are
    never mutated."""
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"c must be in [0, 1], got {c}")
    with torch.no_grad():
        out = shifter(w.unsqueeze(0), z_dyn_target.unsqueeze(0),
                      torch.tensor([float(c)]))
    return out[0]


def shift_style_set(shifter: StyleShifter, styles: StyleSet,
                    z_dyn_target: torch.Tensor, c: float) -> StyleSet:
    """Apply the shifter to every per-block style independently."""
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"c must be in [0, 1], got {c}")
    n = styles.num_blocks
    with torch.no_grad():
        out = shifter(styles.styles,
                      z_dyn_target.unsqueeze(0).expand(n, -1),
                      torch.full((n,), float(c)))
    return StyleSet(out)


# --- vocabulary -------------------------------------------------------------------


def load_style_vocabulary(path: str | Path | None = None) -> dict[str, torch.Tensor]:
    """Named dynamic-latent targets (day, sunset, night, ...)."""
    if path is None:
        text = resources.files("lapsegen.presets").joinpath(
            "style_vocabulary.json").read_text()
    else:
        text = Path(path).read_text()
    raw = json.loads(text)
    entries = raw.get("styles", raw if isinstance(raw, dict) else {})
    if "comment" in entries:
        entries = {k: v for k, v in entries.items() if k != "comment"}
    vocab: dict[str, torch.Tensor] = {}
    for name, values in entries.items():
        vec = torch.tensor([float(v) for v in values], dtype=torch.float32)
        if not torch.isfinite(vec).all():
            raise ConfigError(f"vocabulary entry {name!r} has non-finite values")
        if name in vocab:
            raise ConfigError(f"duplicate vocabulary entry {name!r}")
        vocab[name] = vec
    if not vocab:
        raise ConfigError("style vocabulary is empty")
    return vocab


def relight_video(bundle: ModelBundle, shifter: StyleShifter,
                  styles: StyleSet, noise: SpatialNoiseSet,
                  vocab_entry: str, script,
                  vocabulary: dict[str, torch.Tensor] | None = None,
                  use_ema: bool = True) -> list[torch.Tensor]:
    """Animate with a lighting ramp: frame i uses interpolation coefficient
    i / (steps - 1) toward the named target, combined with the usual
    dynamic-map warping."""
    from .animation import animation_noise_sets, frame_times

    vocabulary = vocabulary if vocabulary is not None else load_style_vocabulary()
    if vocab_entry not in vocabulary:
        raise ConfigError(f"unknown style {vocab_entry!r}; "
                          f"available: {sorted(vocabulary)}")
    target = vocabulary[vocab_entry]
    gen = bundle.eval_generator(use_ema=use_ema)
    frames = []
    times = frame_times(script.steps)
    for c, frame_noise in zip(times, animation_noise_sets(noise, script)):
        shifted = shift_style_set(shifter, styles, target, c)
        with torch.no_grad():
            img = gen(shifted.styles.unsqueeze(0), frame_noise.static_maps,
                      frame_noise.dynamic_maps)
        frames.append(img[0].permute(1, 2, 0))
    return frames
