"""Perceptual distance between images via a pluggable feature extractor.

The default extractor is a fixed, seeded, randomly initialized convolution
pyramid: fully offline and deterministic, which is what the self-inversion
and consistency tests need. A pretrained-classifier adapter exists for
full-fidelity runs; if its weights cannot be loaded the call fails with a
configuration error rather than silently downgrading.

Distances are computed LPIPS-style: activations are unit-normalized along
the channel axis, squared differences are summed over channels and averaged
over positions and layers.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .errors import ConfigError


class FeatureProvider(nn.Module):
    """Interface: map a (B, 3, H, W) batch in [-1, 1] to a list of feature
    tensors, one per level."""

    def features(self, images: torch.Tensor) -> list[torch.Tensor]:
        raise NotImplementedError


class RandomPyramidProvider(FeatureProvider):
    """Frozen conv pyramid with seeded random weights."""

    def __init__(self, seed: int = 0, channels: tuple[int, ...] = (8, 16, 32, 64)):
        super().__init__()
        self.channels = channels
        rng = torch.Generator().manual_seed(seed)  # local; global RNG untouched
        convs = []
        in_ch = 3
        for out_ch in channels:
            conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
            with torch.no_grad():
                fan_in = in_ch * 9
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=rng)
                                  * (2.0 / fan_in) ** 0.5)
                conv.bias.zero_()
            convs.append(conv)
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        self.act = nn.LeakyReLU(0.2)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, images: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        x = images
        for conv in self.convs:
            if min(x.shape[-2:]) < 2:
                break
            x = self.act(conv(x))
            feats.append(x)
        return feats


class PretrainedBackboneProvider(FeatureProvider):
    """Features from a pretrained classification backbone (torchvision
    VGG16). Needs the weights to be present locally."""

    LAYERS = (3, 8, 15, 22)

    def __init__(self):
        super().__init__()
        try:
            from torchvision import models
            weights = models.VGG16_Weights.IMAGENET1K_V1
            vgg = models.vgg16(weights=weights)
        except Exception as exc:
            raise ConfigError(
                "pretrained perceptual backbone unavailable; install torchvision "
                f"with cached VGG16 weights or use the random-pyramid provider ({exc})"
            ) from exc
        self.slices = nn.ModuleList()
        prev = 0
        for idx in self.LAYERS:
            self.slices.append(nn.Sequential(*list(vgg.features[prev:idx + 1])))
            prev = idx + 1
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, images: torch.Tensor) -> list[torch.Tensor]:
        x = (images + 1.0) / 2.0  # backbone expects [0, 1]-ish input
        feats = []
        for block in self.slices:
            x = block(x)
            feats.append(x)
        return feats


_PROVIDERS = {
    "random-pyramid": RandomPyramidProvider,
    "vgg16": PretrainedBackboneProvider,
}


def get_provider(name: str = "random-pyramid", **kwargs) -> FeatureProvider:
    if name not in _PROVIDERS:
        raise ConfigError(f"unknown perceptual provider {name!r}; "
                          f"choices: {sorted(_PROVIDERS)}")
    return _PROVIDERS[name](**kwargs)


def _as_batch(image: torch.Tensor) -> torch.Tensor:
    if image.dim() == 3 and image.shape[-1] == 3:    # (H, W, 3)
        image = image.permute(2, 0, 1)
    if image.dim() == 3:
        image = image.unsqueeze(0)
    return image


def _normalize(feat: torch.Tensor) -> torch.Tensor:
    return feat * torch.rsqrt((feat ** 2).sum(dim=1, keepdim=True) + 1e-10)


def perceptual_distance(a: torch.Tensor, b: torch.Tensor,
                        provider: FeatureProvider) -> torch.Tensor:
    """Symmetric, differentiable; zero for identical inputs."""
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise ValueError(f"images differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    fa = provider.features(a)
    fb = provider.features(b)
    if not fa:
        raise ConfigError("feature provider produced no levels for this input size")
    total = 0.0
    for la, lb in zip(fa, fb):
        diff = (_normalize(la) - _normalize(lb)) ** 2
        total = total + diff.sum(dim=1).mean()
    return total / len(fa)
