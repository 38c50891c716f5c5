"""Recovering latents for a real image.

Three stages: a feedforward encoder predicts per-block styles, regularized
gradient descent refines styles and spatial maps, and finally the generator
weights themselves are fine-tuned against the frozen latents. Seven variant
configurations switch the stages and initializations; the two optimizer
loops differ in masking (the segmentation-guided variant alternates
static/dynamic objectives between even and odd iterations) and in early
stopping (only the unmasked loop stops early).

Spatial-map gradients are multiplied by a small constant before each update
so reconstruction content is pushed into the styles; styles additionally pay
a penalty for drifting from their initialization, which keeps them close to
the mapping network's output manifold and preserves the ability to animate.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import EncoderConfig, GeneratorConfig, InversionConfig
from .errors import ConfigError, NumericsError
from .latents import SpatialNoiseSet, StyleSet
from .model import ModelBundle
from .networks import Generator, kaiming_init
from .perceptual import FeatureProvider, RandomPyramidProvider, perceptual_distance

log = logging.getLogger(__name__)

LATENTS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class VariantSpec:
    init_w: str            # "mean" | "encoder"
    init_s: str            # "random" | "zero"
    optimize_s: bool
    optimize_w: bool
    init_penalty: bool
    finetune: bool
    segmentation: bool


VARIANT_TABLE: dict[str, VariantSpec] = {
    "i2s":   VariantSpec("mean",    "random", False, True,  False, False, False),
    "mo":    VariantSpec("mean",    "zero",   True,  True,  False, False, False),
    "e":     VariantSpec("encoder", "random", False, False, False, False, False),
    "eo":    VariantSpec("encoder", "zero",   True,  True,  False, False, False),
    "eoi":   VariantSpec("encoder", "zero",   True,  True,  True,  False, False),
    "eoif":  VariantSpec("encoder", "zero",   True,  True,  True,  True,  False),
    "eoifs": VariantSpec("encoder", "zero",   True,  True,  True,  True,  True),
}


@dataclass
class InversionResult:
    styles: StyleSet
    noise: SpatialNoiseSet
    reconstruction: torch.Tensor                  # (H, W, 3) in [-1, 1]
    finetuned_weights: dict | None = None
    diagnostics: dict = field(default_factory=dict)


# --- encoder -------------------------------------------------------------------


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        h = self.act(self.conv1(x))
        return self.act(x + self.conv2(h))


class StyleEncoder(nn.Module):
    """Residual backbone; multi-level features are global-average-pooled,
    concatenated and fed to a two-layer perceptron that predicts one style
    vector per generator block."""

    def __init__(self, gen_config: GeneratorConfig, config: EncoderConfig):
        super().__init__()
        self.num_blocks = gen_config.num_blocks
        self.style_dim = gen_config.latent_dim
        self.stem = nn.Conv2d(3, config.stem_channels, 3, padding=1)
        stages = []
        in_ch = config.stem_channels
        for blocks, out_ch in zip(config.stage_blocks, config.stage_channels):
            layers: list[nn.Module] = [nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1),
                                       nn.LeakyReLU(0.2)]
            layers += [ResidualBlock(out_ch) for _ in range(blocks)]
            stages.append(nn.Sequential(*layers))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        feat_dim = sum(config.stage_channels)
        self.head = nn.Sequential(
            nn.Linear(feat_dim, config.mlp_hidden),
            nn.ReLU(),
            nn.Linear(config.mlp_hidden, self.num_blocks * self.style_dim),
        )
        self.act = nn.LeakyReLU(0.2)
        kaiming_init(self)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.act(self.stem(images))
        pooled = []
        for stage in self.stages:
            x = stage(x)
            pooled.append(x.mean(dim=(2, 3)))
        w = self.head(torch.cat(pooled, dim=1))
        return w.view(-1, self.num_blocks, self.style_dim)


def train_encoder(bundle: ModelBundle, config: EncoderConfig,
                  n_samples: int | None = None, seed: int = 0,
                  use_ema: bool = True) -> StyleEncoder:
    """Supervised regression from generated images to the styles that made
    them, with mean absolute error."""
    n_samples = n_samples if n_samples is not None else config.train_samples
    torch.manual_seed(seed)
    encoder = StyleEncoder(bundle.config, config)
    opt = torch.optim.Adam(encoder.parameters(), lr=config.learning_rate)
    gen = bundle.eval_generator(use_ema=use_ema)
    rng = torch.Generator().manual_seed(seed)
    steps = max(1, n_samples // config.batch_size)
    if bundle.progress.get("steps", 0) == 0:
        log.warning("training encoder against an untrained generator")
    for _ in range(steps):
        images, styles = _sample_training_batch(bundle, gen, config.batch_size, rng)
        pred = encoder(images)
        loss = F.l1_loss(pred, styles)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    encoder.eval()
    return encoder


def _sample_training_batch(bundle: ModelBundle, gen: Generator, batch: int,
                           rng: torch.Generator):
    cfg = bundle.config
    sides = cfg.noise_sides()
    z = torch.randn(batch, cfg.latent_dim, generator=rng)
    with torch.no_grad():
        w = bundle.mapping(z)
    styles = w.unsqueeze(1).repeat(1, cfg.num_blocks, 1)
    static = [torch.randn(batch, 1, s, s, generator=rng) for s in sides]
    dynamic = [torch.randn(batch, 1, s, s, generator=rng) for s in sides]
    with torch.no_grad():
        images = gen(styles, static, dynamic)
    return images, styles


def encoder_baseline_mae(bundle: ModelBundle, encoder: StyleEncoder,
                         n: int = 64, seed: int = 1) -> tuple[float, float]:
    """Held-out MAE of the encoder vs predicting the mean style."""
    gen = bundle.eval_generator()
    rng = torch.Generator().manual_seed(seed)
    images, styles = _sample_training_batch(bundle, gen, n, rng)
    with torch.no_grad():
        pred = encoder(images)
    enc_mae = float(F.l1_loss(pred, styles))
    mean_style = styles.mean(dim=0, keepdim=True)
    base_mae = float(F.l1_loss(mean_style.expand_as(styles), styles))
    return enc_mae, base_mae


def compute_mean_style(bundle: ModelBundle, n_samples: int = 10_000,
                       seed: int = 0, batch: int = 256) -> torch.Tensor:
    """Average mapped style over unit-normal draws."""
    rng = torch.Generator().manual_seed(seed)
    total = torch.zeros(bundle.config.latent_dim)
    done = 0
    with torch.no_grad():
        while done < n_samples:
            b = min(batch, n_samples - done)
            z = torch.randn(b, bundle.config.latent_dim, generator=rng)
            total += bundle.mapping(z).sum(dim=0)
            done += b
    return total / n_samples


# --- segmentation masks ----------------------------------------------------------


def horizon_split_mask(resolution: int, horizon_y: float = 0.5) -> torch.Tensor:
    """Heuristic static mask: 0 (dynamic) above the horizon, 1 below."""
    rows = (torch.arange(resolution) + 0.5) / resolution
    mask = (rows >= horizon_y).float()
    return mask.unsqueeze(1).expand(resolution, resolution).contiguous()


def load_mask(path: str | Path, resolution: int) -> torch.Tensor:
    """Binary mask image: bright = static (1), dark = dynamic (0)."""
    from .data import load_image

    img = load_image(path)
    mask = (img.mean(dim=0) > 0.0).float()
    if mask.shape != (resolution, resolution):
        mask = F.interpolate(mask[None, None], size=(resolution, resolution),
                             mode="nearest")[0, 0]
    return mask


# --- latent optimization ----------------------------------------------------------


def _init_noise(spec: VariantSpec, config: GeneratorConfig,
                rng: torch.Generator) -> list[torch.Tensor]:
    sides = config.noise_sides()
    if spec.init_s == "zero":
        return [torch.zeros(s, s) for s in sides]
    return [torch.randn(s, s, generator=rng) for s in sides]


def optimize_latents(bundle: ModelBundle, image: torch.Tensor,
                     config: InversionConfig,
                     init_styles: torch.Tensor,
                     mask: torch.Tensor | None = None,
                     perceptual: FeatureProvider | None = None,
                     optimizer_factory=None,
                     rng: torch.Generator | None = None,
                     use_ema: bool = True) -> tuple[StyleSet, SpatialNoiseSet, dict]:
    """Gradient refinement of (styles, spatial maps) against one target image.

    ``init_styles`` is the (num_blocks, style_dim) starting point (encoder
    prediction or mean style). The loss is MAE + perceptual term, plus a
    mean-squared penalty tying styles to their initialization when the
    variant asks for it. Spatial-map gradients are scaled by
    ``config.noise_grad_scale`` before every update. The learning rate is
    halved after ``plateau_patience`` iterations without improvement; the
    unmasked loop stops early after ``early_stop_patience``.
    """
    spec = VARIANT_TABLE[config.variant]
    cfg = bundle.config
    if image.dim() == 3 and image.shape[-1] == 3:
        image = image.permute(2, 0, 1)
    res = cfg.final_resolution
    if image.shape != (3, res, res):
        raise ValueError(f"image must be (3, {res}, {res}), got {tuple(image.shape)}")
    if spec.segmentation and mask is None:
        raise ValueError("this variant requires a segmentation mask")
    if perceptual is None:
        perceptual = RandomPyramidProvider()
    if rng is None:
        rng = torch.Generator().manual_seed(0)

    gen = bundle.eval_generator(use_ema=use_ema)
    target = image.unsqueeze(0)

    styles = init_styles.detach().clone().requires_grad_(spec.optimize_w)
    init_ref = init_styles.detach().clone()
    noise_static = [m.requires_grad_(spec.optimize_s)
                    for m in _init_noise(spec, cfg, rng)]
    noise_dynamic = [m.requires_grad_(spec.optimize_s)
                     for m in _init_noise(spec, cfg, rng)]

    diagnostics = {"loss_trace": [], "lr_trace": [], "stopped_early": False}

    trainable = ([styles] if spec.optimize_w else []) + \
        ([*noise_static, *noise_dynamic] if spec.optimize_s else [])
    if not trainable or config.max_iters == 0:
        # encoder-only path: zero-iteration, prediction returned unchanged
        diagnostics["iterations"] = 0
        return (StyleSet(styles.detach()),
                SpatialNoiseSet([m.detach() for m in noise_static],
                                [m.detach() for m in noise_dynamic]),
                diagnostics)

    if optimizer_factory is None:
        opt = torch.optim.Adam(trainable, lr=config.initial_lr)
    else:
        opt = optimizer_factory(trainable, config.initial_lr)

    lr = config.initial_lr
    best = math.inf
    since_improve = 0
    masked = spec.segmentation

    for it in range(config.max_iters):
        y = gen(styles.unsqueeze(0), noise_static, noise_dynamic)
        if masked:
            static_turn = it % 2 == 0
            m = mask if static_turn else 1.0 - mask
            y_m, x_m = y * m, target * m
        else:
            y_m, x_m = y, target
        rec = F.l1_loss(y_m, x_m) + config.perceptual_coeff * perceptual_distance(
            y_m[0], x_m[0], perceptual)
        loss = rec
        if spec.init_penalty:
            loss = loss + config.style_penalty_coeff * F.mse_loss(styles, init_ref)
        if not torch.isfinite(loss):
            raise NumericsError(
                f"non-finite inversion loss at iteration {it}; trace: "
                f"{diagnostics['loss_trace'][-5:]}")

        opt.zero_grad(set_to_none=True)
        loss.backward()
        if spec.optimize_s:
            scale_branch = None
            if masked:
                scale_branch = noise_static if static_turn else noise_dynamic
                frozen = noise_dynamic if static_turn else noise_static
                for p in frozen:
                    p.grad = None
            else:
                scale_branch = [*noise_static, *noise_dynamic]
            scale_noise_gradients(scale_branch, config.noise_grad_scale)
        opt.step()

        value = float(loss.detach())
        diagnostics["loss_trace"].append(value)
        diagnostics["lr_trace"].append(lr)
        if value < best:
            best = value
            since_improve = 0 if it > 0 else 1
        else:
            since_improve += 1
        if since_improve > 0 and since_improve % config.plateau_patience == 0:
            # halve multiplicatively so a factory-chosen rate scales the same way
            lr = lr / 2.0
            for group in opt.param_groups:
                group["lr"] = group["lr"] / 2.0
        if not masked and since_improve >= config.early_stop_patience:
            diagnostics["stopped_early"] = True
            break

    diagnostics["iterations"] = len(diagnostics["loss_trace"])
    diagnostics["best_loss"] = best
    return (StyleSet(styles.detach()),
            SpatialNoiseSet([m.detach() for m in noise_static],
                            [m.detach() for m in noise_dynamic]),
            diagnostics)


def scale_noise_gradients(noise_leaves: list[torch.Tensor], scale: float) -> None:
    """Multiply the spatial-map gradients in place before the update."""
    for leaf in noise_leaves:
        if leaf.grad is not None:
            leaf.grad.mul_(scale)


def finetune_generator(bundle: ModelBundle, image: torch.Tensor,
                       styles: StyleSet, noise: SpatialNoiseSet,
                       config: InversionConfig,
                       perceptual: FeatureProvider | None = None,
                       use_ema: bool = True) -> tuple[Generator, dict]:
    """Optimize a per-job clone of the generator against the frozen latents.

    Runs for ``finetune_iters`` steps of MAE + weighted perceptual loss,
    tracking the best iterate; aborts on divergence (loss above 10x the
    initial value) and returns the best weights seen.
    """
    if image.dim() == 3 and image.shape[-1] == 3:
        image = image.permute(2, 0, 1)
    if perceptual is None:
        perceptual = RandomPyramidProvider()
    gen = copy.deepcopy(bundle.ema_generator if use_ema else bundle.generator)
    for p in gen.parameters():
        p.requires_grad_(True)
    gen.train()

    styles_t = styles.styles.detach()
    static = [m.detach() for m in noise.static_maps]
    dynamic = [m.detach() for m in noise.dynamic_maps]
    target = image.unsqueeze(0)

    opt = torch.optim.Adam(gen.parameters(), lr=config.finetune_lr, betas=(0.0, 0.99))
    diagnostics = {"loss_trace": [], "aborted": False}
    best_loss = math.inf
    best_state = copy.deepcopy(gen.state_dict())
    initial = None

    for it in range(config.finetune_iters):
        y = gen(styles_t.unsqueeze(0), static, dynamic)
        loss = F.l1_loss(y, target) + config.finetune_perceptual_weight * \
            perceptual_distance(y[0], target[0], perceptual)
        value = float(loss.detach())
        diagnostics["loss_trace"].append(value)
        if initial is None:
            initial = value
        if value < best_loss:
            best_loss = value
            best_state = copy.deepcopy(gen.state_dict())
        if value > 10.0 * initial:
            diagnostics["aborted"] = True
            break
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

    gen.load_state_dict(best_state)
    gen.eval()
    for p in gen.parameters():
        p.requires_grad_(False)
    diagnostics["best_loss"] = best_loss if diagnostics["loss_trace"] else None
    return gen, diagnostics


def invert_image(bundle: ModelBundle, image: torch.Tensor,
                 config: InversionConfig,
                 encoder: StyleEncoder | None = None,
                 mask: torch.Tensor | None = None,
                 perceptual: FeatureProvider | None = None,
                 rng: torch.Generator | None = None) -> InversionResult:
    """Full pipeline for one image under the configured variant."""
    spec = VARIANT_TABLE[config.variant]
    cfg = bundle.config
    if image.dim() == 3 and image.shape[-1] == 3:
        image = image.permute(2, 0, 1)
    if perceptual is None:
        perceptual = RandomPyramidProvider()

    if spec.init_w == "encoder":
        if encoder is None:
            raise ConfigError(f"variant {config.variant!r} needs a trained encoder")
        with torch.no_grad():
            init_styles = encoder(image.unsqueeze(0))[0]
    else:
        w_mean = compute_mean_style(bundle, config.mean_style_samples)
        init_styles = w_mean.unsqueeze(0).repeat(cfg.num_blocks, 1)

    styles, noise, diagnostics = optimize_latents(
        bundle, image, config, init_styles, mask=mask, perceptual=perceptual,
        rng=rng)

    finetuned = None
    if spec.finetune:
        finetuned_gen, ft_diag = finetune_generator(bundle, image, styles, noise,
                                                    config, perceptual=perceptual)
        finetuned = finetuned_gen
        diagnostics["finetune"] = ft_diag

    gen = finetuned if finetuned is not None else bundle.eval_generator()
    with torch.no_grad():
        recon = gen(styles.styles.unsqueeze(0), noise.static_maps,
                    noise.dynamic_maps)[0].permute(1, 2, 0)

    return InversionResult(
        styles=styles, noise=noise, reconstruction=recon,
        finetuned_weights=finetuned.state_dict() if finetuned is not None else None,
        diagnostics=diagnostics)


def save_latents(result: InversionResult, bundle_config: GeneratorConfig,
                 path: str | Path) -> None:
    payload = {
        "format_version": LATENTS_FORMAT_VERSION,
        "styles": result.styles.styles,
        "static_maps": result.noise.static_maps,
        "dynamic_maps": result.noise.dynamic_maps,
        "finetuned_weights": result.finetuned_weights,
        "generator_config": {
            "num_blocks": bundle_config.num_blocks,
            "latent_dim": bundle_config.latent_dim,
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_latents(path: str | Path) -> tuple[StyleSet, SpatialNoiseSet, dict | None]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != LATENTS_FORMAT_VERSION:
        raise ConfigError(f"unsupported latents archive version "
                          f"{payload.get('format_version')}")
    return (StyleSet(payload["styles"]),
            SpatialNoiseSet(payload["static_maps"], payload["dynamic_maps"]),
            payload.get("finetuned_weights"))
