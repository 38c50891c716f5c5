"""Quality metrics and the evaluation protocols built on them.

Distribution distance uses Gaussian feature statistics with an
order-independent merge, so parallel accumulation gives scheduling-invariant
results. The matrix square root inside the distance is computed by
eigendecomposition of a symmetrized product with small negative eigenvalues
clipped; genuinely non-PSD inputs fail with a conditioning report.

Structural similarity is the standard 11x11 Gaussian-window form; a mask
zeroes both images outside it and restricts the averaged windows to mask
centers, so pixels outside the mask can never change the value.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
import logging

import numpy as np
import torch
from scipy.signal import convolve2d

from .errors import ConfigError, NumericsError
from .perceptual import FeatureProvider, perceptual_distance

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1


# --- feature statistics ------------------------------------------------------


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    @classmethod
    def from_features(cls, features: np.ndarray) -> "FeatureStats":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be (n, d)")
        n, d = features.shape
        if n < 2:
            raise ValueError("need at least two samples for covariance")
        if n <= d:
            log.warning("feature count %d <= dimension %d: distance will be "
                        "poorly conditioned", n, d)
        return cls(mean=features.mean(axis=0),
                   cov=np.cov(features, rowvar=False),
                   count=n)

    def merge(self, other: "FeatureStats") -> "FeatureStats":
        """Combine two disjoint accumulations; order-independent up to float
        rounding (pairwise co-moment update)."""
        n1, n2 = self.count, other.count
        n = n1 + n2
        delta = other.mean - self.mean
        mean = self.mean + delta * (n2 / n)
        m1 = self.cov * (n1 - 1)
        m2 = other.cov * (n2 - 1)
        m = m1 + m2 + np.outer(delta, delta) * (n1 * n2 / n)
        return FeatureStats(mean=mean, cov=m / (n - 1), count=n)


def _sqrtm_psd(matrix: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    sym = (matrix + matrix.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    floor = -tol * max(1.0, float(np.abs(eigvals).max()))
    if eigvals.min() < floor:
        raise NumericsError(
            f"matrix is not PSD: min eigenvalue {eigvals.min():.3e}, "
            f"max {eigvals.max():.3e}, clip tolerance {floor:.3e}")
    clipped = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(clipped)) @ eigvecs.T


def frechet_distance(s1: FeatureStats, s2: FeatureStats) -> float:
    """||mu1 - mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2))."""
    if s1.mean.shape != s2.mean.shape:
        raise ValueError("feature statistics have different dimensions")
    diff = s1.mean - s2.mean
    c1_half = _sqrtm_psd(s1.cov)
    inner = c1_half @ s2.cov @ c1_half
    tr_covmean = float(np.sqrt(np.clip(
        np.linalg.eigvalsh((inner + inner.T) / 2.0), 0.0, None)).sum())
    value = float(diff @ diff + np.trace(s1.cov) + np.trace(s2.cov)
                  - 2.0 * tr_covmean)
    return max(value, 0.0)


def extract_features(images: torch.Tensor | list[torch.Tensor],
                     provider: FeatureProvider,
                     batch_size: int = 32) -> np.ndarray:
    """One pooled feature vector per image: every provider level is
    global-average-pooled and concatenated."""
    if isinstance(images, list):
        images = torch.stack([im.permute(2, 0, 1) if im.shape[-1] == 3 else im
                              for im in images])
    out = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunk = images[start:start + batch_size]
            levels = provider.features(chunk)
            pooled = torch.cat([lv.mean(dim=(2, 3)) for lv in levels], dim=1)
            out.append(pooled.cpu().numpy().astype(np.float64))
    return np.concatenate(out, axis=0)


# --- SSIM ---------------------------------------------------------------------


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_map(a: np.ndarray, b: np.ndarray, data_range: float,
              kernel: np.ndarray) -> np.ndarray:
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def filt(x):
        return convolve2d(x, kernel, mode="same", boundary="symm")

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a: torch.Tensor | np.ndarray, b: torch.Tensor | np.ndarray,
         mask: torch.Tensor | np.ndarray | None = None,
         data_range: float = 2.0) -> float:
    """Mean structural similarity; with a mask, both images are zeroed
    outside it and only windows centered inside contribute."""
    a = _to_gray_channels(a)
    b = _to_gray_channels(b)
    if a.shape != b.shape:
        raise ValueError(f"images differ in shape: {a.shape} vs {b.shape}")
    kernel = _gaussian_kernel()
    m = None
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != a.shape[:2]:
            raise ValueError("mask size does not match the images")
        if m.sum() == 0:
            raise ValueError("mask selects no pixels")
        a = a * m[..., None]
        b = b * m[..., None]
    values = []
    for ch in range(a.shape[2]):
        smap = _ssim_map(a[:, :, ch], b[:, :, ch], data_range, kernel)
        values.append(smap[m > 0.5].mean() if m is not None else smap.mean())
    return float(np.mean(values))


def _to_gray_channels(img) -> np.ndarray:
    arr = img.detach().cpu().numpy() if isinstance(img, torch.Tensor) else np.asarray(img)
    arr = arr.astype(np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


# --- static consistency ----------------------------------------------------------


def static_consistency_curve(frames: list[torch.Tensor],
                             static_mask: torch.Tensor,
                             metric: str = "ssim",
                             provider: FeatureProvider | None = None,
                             data_range: float = 2.0) -> list[float]:
    """metric(frame_0, frame_n) restricted to the static mask, for every n."""
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    if static_mask.shape != frames[0].shape[:2]:
        raise ValueError("mask size does not match the frames")
    first = frames[0]
    curve = []
    if metric == "ssim":
        for frame in frames:
            curve.append(ssim(first, frame, mask=static_mask, data_range=data_range))
    elif metric == "perceptual":
        if provider is None:
            raise ConfigError("perceptual curve needs a feature provider")
        m = static_mask.unsqueeze(-1)
        for frame in frames:
            curve.append(float(perceptual_distance(first * m, frame * m, provider)))
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return curve


# --- optical flow -------------------------------------------------------------------


class BlockMatchingFlow:
    """Coarse integer-displacement flow: exhaustive SAD match per block."""

    def __init__(self, block: int = 8, search: int = 4):
        self.block = block
        self.search = search

    def __call__(self, gray_a: np.ndarray, gray_b: np.ndarray) -> np.ndarray:
        """Per-pixel flow (H, W, 2) constant within each block."""
        h, w = gray_a.shape
        bs, s = self.block, self.search
        gh, gw = h // bs, w // bs
        if gh == 0 or gw == 0:
            raise ValueError(f"frame {h}x{w} smaller than block {bs}")
        a = gray_a[: gh * bs, : gw * bs]
        padded = np.pad(gray_b[: gh * bs, : gw * bs], s, mode="edge")
        best_sad = np.full((gh, gw), np.inf)
        best_dy = np.zeros((gh, gw))
        best_dx = np.zeros((gh, gw))
        for dy in range(-s, s + 1):
            for dx in range(-s, s + 1):
                shifted = padded[s + dy: s + dy + gh * bs,
                                 s + dx: s + dx + gw * bs]
                diff = np.abs(a - shifted)
                sad = diff.reshape(gh, bs, gw, bs).sum(axis=(1, 3))
                better = sad < best_sad
                best_sad = np.where(better, sad, best_sad)
                best_dy = np.where(better, dy, best_dy)
                best_dx = np.where(better, dx, best_dx)
        flow = np.stack([np.kron(best_dy, np.ones((bs, bs))),
                         np.kron(best_dx, np.ones((bs, bs)))], axis=-1)
        full = np.zeros((h, w, 2))
        full[: gh * bs, : gw * bs] = flow
        return full


def motion_amount(frames: list[torch.Tensor], sky_mask: torch.Tensor,
                  flow_provider=BlockMatchingFlow()) -> float:
    """Mean flow magnitude over sky pixels and frame transitions."""
    if flow_provider is None:
        raise ConfigError("no optical-flow provider configured")
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    mask = np.asarray(sky_mask, dtype=np.float64)
    if mask.sum() == 0:
        raise ValueError("sky mask selects no pixels")
    total = 0.0
    for prev, cur in zip(frames, frames[1:]):
        ga = _to_gray_channels(prev).mean(axis=2)
        gb = _to_gray_channels(cur).mean(axis=2)
        flow = flow_provider(ga, gb)
        mag = np.sqrt((flow ** 2).sum(axis=-1))
        total += float((mag * mask).sum() / mask.sum())
    return total / (len(frames) - 1)


# --- evaluation protocols ---------------------------------------------------------


@dataclass
class GenerationReport:
    """Image-sampling ablation: distribution distance plus cross-pair
    consistency of static content under resampled dynamics."""

    fid: float
    pair_ssim: float
    pair_lpips: float
    n_pairs: int
    n_fid_samples: int


@dataclass
class EvalReport:
    """Animation evaluation against a real clip."""

    version: int = REPORT_FORMAT_VERSION
    fid: float = float("nan")
    ssim_mean: float = float("nan")
    masked_ssim_mean: float = float("nan")
    lpips_first_frame: list[float] = field(default_factory=list)   # I_0 vs gen_n
    ssim_first_frame: list[float] = field(default_factory=list)
    lpips_aligned: list[float] = field(default_factory=list)       # I_n vs gen_n
    ssim_aligned: list[float] = field(default_factory=list)
    motion: float = float("nan")
    n_frames: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def evaluate_generation_ablation(bundles: dict, corpus_images: list[torch.Tensor],
                                 provider: FeatureProvider,
                                 n_pairs: int = 1200, n_fid_samples: int = 1200,
                                 mask: torch.Tensor | None = None,
                                 seed: int = 0) -> dict[str, GenerationReport]:
    """Sampling protocol: distribution distance against an image corpus and
    masked pair consistency for same-static / fresh-dynamic pairs."""
    from .training import sample_pair_latents, synthesize_pair

    if not corpus_images:
        raise ValueError("empty evaluation corpus")
    corpus_stats = FeatureStats.from_features(
        extract_features(corpus_images, provider))
    reports = {}
    for name, bundle in bundles.items():
        rng = torch.Generator().manual_seed(seed)
        res = bundle.config.final_resolution
        if mask is None:
            from .inversion import horizon_split_mask
            pair_mask = horizon_split_mask(res)
        else:
            pair_mask = mask
        samples = []
        ssims, lpips_vals = [], []
        for _ in range(n_pairs):
            lat = sample_pair_latents(rng, bundle.config)
            pair = synthesize_pair(bundle, lat)
            fa = pair.frame_a.permute(1, 2, 0)
            fb = pair.frame_b.permute(1, 2, 0)
            ssims.append(ssim(fa, fb, mask=pair_mask))
            m = pair_mask.unsqueeze(-1)
            lpips_vals.append(float(perceptual_distance(fa * m, fb * m, provider)))
            if len(samples) < n_fid_samples:
                samples.extend([fa, fb])
        while len(samples) < n_fid_samples:
            lat = sample_pair_latents(rng, bundle.config)
            pair = synthesize_pair(bundle, lat)
            samples.append(pair.frame_a.permute(1, 2, 0))
        gen_stats = FeatureStats.from_features(
            extract_features(samples[:n_fid_samples], provider))
        reports[name] = GenerationReport(
            fid=frechet_distance(corpus_stats, gen_stats),
            pair_ssim=float(np.mean(ssims)),
            pair_lpips=float(np.mean(lpips_vals)),
            n_pairs=n_pairs,
            n_fid_samples=n_fid_samples,
        )
    return reports


def evaluate_animation(real_frames: list[torch.Tensor],
                       generated_frames: list[torch.Tensor],
                       static_mask: torch.Tensor,
                       provider: FeatureProvider,
                       flow_provider=BlockMatchingFlow()) -> EvalReport:
    """Per-frame curves against the real clip plus sky motion amount.

    The static mask comes from the first real frame only and is reused for
    every comparison.
    """
    if not generated_frames:
        raise ValueError("no generated frames")
    n = len(generated_frames)
    first_real = real_frames[0]
    m = static_mask.unsqueeze(-1)

    lpips_first, ssim_first, lpips_aligned, ssim_aligned = [], [], [], []
    for i, gen in enumerate(generated_frames):
        lpips_first.append(float(perceptual_distance(first_real * m, gen * m,
                                                     provider)))
        ssim_first.append(ssim(first_real, gen, mask=static_mask))
        if i < len(real_frames):
            real = real_frames[i]
            lpips_aligned.append(float(perceptual_distance(real * m, gen * m,
                                                           provider)))
            ssim_aligned.append(ssim(real, gen, mask=static_mask))

    real_stats = FeatureStats.from_features(extract_features(real_frames, provider))
    gen_stats = FeatureStats.from_features(extract_features(generated_frames,
                                                            provider))
    sky = 1.0 - static_mask
    motion = motion_amount(generated_frames, sky, flow_provider) \
        if float(sky.sum()) > 0 else float("nan")
    return EvalReport(
        fid=frechet_distance(real_stats, gen_stats),
        ssim_mean=float(np.mean(ssim_aligned)) if ssim_aligned else float("nan"),
        masked_ssim_mean=float(np.mean(ssim_first)),
        lpips_first_frame=lpips_first,
        ssim_first_frame=ssim_first,
        lpips_aligned=lpips_aligned,
        ssim_aligned=ssim_aligned,
        motion=motion,
        n_frames=n,
    )
