"""x4 super-resolution of animation frames and blending with the original.

The SR training set is deliberately harder than plain downsampling: the
low-res side of each pair is the reconstruction produced by the first two
inference steps (encoder + latent optimization), so the network learns to
undo reconstruction artifacts as well as upscale. At desk scale the default
backend is a bilinear stub (runs with zero trained weights); a small
L1-trained convolutional upscaler is available behind the same call.

Final frames transfer the dynamic regions (sky and water) from the SR
output directly, while static regions are rebuilt by a guided filter that
uses the original high-res image as the guide: high-res detail comes from
the input, lighting comes from the frame.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import InversionConfig, SuperResConfig
from .errors import NumericsError
from .model import ModelBundle

log = logging.getLogger(__name__)


# --- guided filter -----------------------------------------------------------


def _box_mean(a: np.ndarray, radius: int) -> np.ndarray:
    """Mean over a (2r+1)^2 window clipped at the borders, exact via
    integral images."""
    h, w = a.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = np.cumsum(np.cumsum(a, axis=0), axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.clip(ys - radius, 0, h)[:, None]
    y1 = np.clip(ys + radius + 1, 0, h)[:, None]
    x0 = np.clip(xs - radius, 0, w)[None, :]
    x1 = np.clip(xs + radius + 1, 0, w)[None, :]
    total = (integral[y1, x1] - integral[y0, x1]
             - integral[y1, x0] + integral[y0, x0])
    count = (y1 - y0) * (x1 - x0)
    return total / count


def _guided_filter_single(guide: np.ndarray, src: np.ndarray,
                          radius: int, eps: float) -> np.ndarray:
    mean_g = _box_mean(guide, radius)
    mean_s = _box_mean(src, radius)
    corr_gs = _box_mean(guide * src, radius)
    corr_gg = _box_mean(guide * guide, radius)
    var_g = corr_gg - mean_g * mean_g
    cov_gs = corr_gs - mean_g * mean_s
    a = cov_gs / (var_g + eps)
    b = mean_s - a * mean_g
    return _box_mean(a, radius) * guide + _box_mean(b, radius)


def guided_filter(guide: torch.Tensor | np.ndarray,
                  src: torch.Tensor | np.ndarray,
                  radius: int, eps: float) -> torch.Tensor:
    """Edge-preserving local linear filter of src with guide.

    Grayscale (H, W) or per-channel (H, W, C) application; a grayscale guide
    may drive a multi-channel src.
    """
    g = _to_numpy(guide)
    s = _to_numpy(src)
    if g.shape[:2] != s.shape[:2]:
        raise ValueError(f"guide {g.shape} and src {s.shape} sizes differ")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if radius >= max(g.shape[0], g.shape[1]):
        raise ValueError(f"radius {radius} too large for image {g.shape[:2]}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if s.ndim == 2:
        g2 = g if g.ndim == 2 else g.mean(axis=2)
        return torch.from_numpy(_guided_filter_single(g2, s, radius, eps)).float()
    out = np.empty_like(s)
    for ch in range(s.shape[2]):
        g_ch = g[:, :, ch] if g.ndim == 3 else g
        out[:, :, ch] = _guided_filter_single(g_ch, s[:, :, ch], radius, eps)
    return torch.from_numpy(out).float()


def _to_numpy(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        return img.detach().cpu().numpy().astype(np.float64)
    return np.asarray(img, dtype=np.float64)


# --- blending ----------------------------------------------------------------


@dataclass
class BlendSpec:
    input_hires: torch.Tensor          # (H, W, 3)
    sr_frames: list[torch.Tensor]      # each (H, W, 3)
    mask: torch.Tensor                 # (H, W), 1 = static
    radius: int = 16
    eps: float = 1e-4
    feather_px: int = 8

    def __post_init__(self):
        h, w = self.input_hires.shape[:2]
        if self.mask.shape != (h, w):
            raise ValueError("mask must match the high-res frame size")
        for f in self.sr_frames:
            if f.shape[:2] != (h, w):
                raise ValueError("every SR frame must match the high-res size")
        if self.radius < 1 or self.eps <= 0:
            raise ValueError("radius must be >= 1 and eps positive")


def feather_mask(mask: torch.Tensor, feather_px: int) -> torch.Tensor:
    """Soften the static/dynamic boundary with a box blur; width 0 keeps the
    hard partition."""
    if feather_px <= 0:
        return mask.float()
    soft = _box_mean(_to_numpy(mask), feather_px)
    return torch.from_numpy(soft).float()


def blend_frame(spec: BlendSpec, frame_index: int) -> torch.Tensor:
    """Dynamic regions from the SR frame, static regions guided-filtered
    against the original input, blended across a feathered seam."""
    sr = spec.sr_frames[frame_index]
    filtered = guided_filter(spec.input_hires, sr, spec.radius, spec.eps)
    soft = feather_mask(spec.mask, spec.feather_px).unsqueeze(-1)
    return soft * filtered + (1.0 - soft) * sr


def scaled_feather(feather_at_1024: int, resolution: int) -> int:
    return max(0, int(round(feather_at_1024 * resolution / 1024)))


# --- SR backends ---------------------------------------------------------------


class BilinearUpscaler(nn.Module):
    """Zero-weight stub backend; keeps the full pipeline runnable."""

    def __init__(self, scale: int = 4):
        super().__init__()
        self.scale = scale

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.interpolate(x, scale_factor=self.scale, mode="bilinear",
                             align_corners=False)


class ConvUpscaler(nn.Module):
    """Small residual CNN with pixel-shuffle upsampling."""

    def __init__(self, scale: int = 4, width: int = 32, depth: int = 4):
        super().__init__()
        if scale & (scale - 1):
            raise ValueError("scale must be a power of two")
        self.scale = scale
        self.head = nn.Conv2d(3, width, 3, padding=1)
        self.body = nn.ModuleList(
            [nn.Conv2d(width, width, 3, padding=1) for _ in range(depth)])
        ups = []
        s = scale
        while s > 1:
            ups += [nn.Conv2d(width, width * 4, 3, padding=1), nn.PixelShuffle(2)]
            s //= 2
        self.upsample = nn.Sequential(*ups)
        self.tail = nn.Conv2d(width, 3, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        base = F.interpolate(x, scale_factor=self.scale, mode="bilinear",
                             align_corners=False)
        h = self.act(self.head(x))
        for conv in self.body:
            h = h + self.act(conv(h))
        h = self.upsample(h)
        return (base + self.tail(h)).clamp(-1.0, 1.0)


def make_sr_model(config: SuperResConfig) -> nn.Module:
    if config.backend == "bilinear":
        return BilinearUpscaler(config.scale)
    if config.backend == "cnn":
        return ConvUpscaler(config.scale)
    raise ValueError(f"unknown SR backend {config.backend!r}")


def super_resolve(model: nn.Module, frame: torch.Tensor,
                  input_resolution: int | None = None,
                  resize_policy: str = "error") -> torch.Tensor:
    """Upscale one (H, W, 3) frame by the model's scale factor."""
    chw = frame.permute(2, 0, 1).unsqueeze(0)
    if input_resolution is not None and chw.shape[-1] != input_resolution:
        if resize_policy == "resize":
            chw = F.interpolate(chw, size=(input_resolution, input_resolution),
                                mode="bilinear", align_corners=False)
        else:
            raise ValueError(
                f"frame side {chw.shape[-1]} != expected {input_resolution} "
                "(set resize_policy='resize' to allow resampling)")
    model.eval()
    with torch.no_grad():
        out = model(chw)
    out = out.clamp(-1.0, 1.0)
    if not torch.isfinite(out).all():
        raise NumericsError("super-resolution produced non-finite values")
    return out[0].permute(1, 2, 0)


# --- dataset construction ---------------------------------------------------------


@dataclass
class SrPair:
    hi_res: torch.Tensor     # (H, W, 3)
    low_res: torch.Tensor    # (H/4, W/4, 3): a reconstruction, not a downsample

    def __post_init__(self):
        if self.hi_res.shape[0] != 4 * self.low_res.shape[0]:
            raise ValueError("hi-res side must be 4x the low-res side")


def build_sr_dataset(videos, bundle: ModelBundle, inversion_config: InversionConfig,
                     encoder, n_frames: int = 16, seed: int = 0,
                     perceptual=None) -> list[SrPair]:
    """(hi-res frame, inference-reconstruction) pairs.

    The low-res side comes from running the encoder + latent optimization on
    the downsampled frame; fine-tuning stays out of the loop here. Frames
    whose inversion fails are skipped and logged.
    """
    from .data import _resize_pow2
    from .inversion import VARIANT_TABLE, optimize_latents

    spec = VARIANT_TABLE[inversion_config.variant]
    if spec.finetune:
        raise ValueError("SR dataset construction uses the first two inference "
                         "steps only; pick a variant without fine-tuning")
    rng = torch.Generator().manual_seed(seed)
    model_res = bundle.config.final_resolution
    hi_res_side = 4 * model_res
    gen = bundle.eval_generator()
    pairs: list[SrPair] = []
    for k in range(n_frames):
        vid = int(torch.randint(len(videos), (1,), generator=rng))
        idx = int(torch.randint(videos.frame_count(vid), (1,), generator=rng))
        hi = videos.frame(vid, idx, resolution=hi_res_side)
        low_input = _resize_pow2(hi, model_res)
        try:
            with torch.no_grad():
                init = encoder(low_input.unsqueeze(0))[0]
            styles, noise, _ = optimize_latents(bundle, low_input,
                                                inversion_config, init,
                                                perceptual=perceptual, rng=rng)
            with torch.no_grad():
                recon = gen(styles.styles.unsqueeze(0), noise.static_maps,
                            noise.dynamic_maps)[0]
        except NumericsError as exc:
            log.warning("skipping frame %d/%d: inversion failed (%s)", vid, idx, exc)
            continue
        pairs.append(SrPair(hi_res=hi.permute(1, 2, 0),
                            low_res=recon.permute(1, 2, 0)))
    return pairs


def train_sr_model(model: nn.Module, pairs: list[SrPair],
                   config: SuperResConfig, seed: int = 0) -> nn.Module:
    """Plain L1 regression from low-res reconstructions to hi-res frames."""
    if not any(p.requires_grad for p in model.parameters()):
        if len(list(model.parameters())) == 0:
            return model  # stub backend: nothing to train
    rng = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    model.train()
    for _ in range(config.train_steps):
        idx = torch.randint(len(pairs), (min(config.batch_size, len(pairs)),),
                            generator=rng)
        low = torch.stack([pairs[int(i)].low_res.permute(2, 0, 1) for i in idx])
        hi = torch.stack([pairs[int(i)].hi_res.permute(2, 0, 1) for i in idx])
        loss = F.l1_loss(model(low), hi)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    model.eval()
    return model
