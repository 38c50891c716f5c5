"""Mapping network, synthesis generator and the two discriminators.

The generator is a style-modulated convolutional pyramid. Each block runs
two units of [conv -> add scaled static map -> add scaled dynamic map ->
activation -> adaptive instance norm], with nearest upsampling between
blocks. Spatial maps are single-channel squares broadcast across channels
through a learnable per-channel scale, so a zeroed scale makes the output
independent of that branch.

Both discriminators mirror the generator pyramid. The pair discriminator
differs only in its input 1x1 convolution, which has half the output
channels and is applied to each frame independently before concatenation.

All modules support progressive growing through a (stage, alpha) pair:
``stage`` is the highest active block index and ``alpha`` blends the new
resolution in during a transition phase.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class PixelNorm(nn.Module):
    def forward(self, x):
        return x * torch.rsqrt(torch.mean(x ** 2, dim=1, keepdim=True) + 1e-8)


def kaiming_init(module: nn.Module) -> None:
    """Scale-preserving init for leaky-relu stacks; deep default-initialized
    stacks otherwise attenuate activations badly. Layers flagged with
    ``_keep_init`` (the style affines) are left alone."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)) and not getattr(m, "_keep_init", False):
            nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class MappingNetwork(nn.Module):
    """Fully connected stack turning a latent code into a style vector."""

    def __init__(self, latent_dim: int = 512, depth: int = 8):
        super().__init__()
        self.latent_dim = latent_dim
        layers: list[nn.Module] = [PixelNorm()]
        for _ in range(depth):
            layers.append(nn.Linear(latent_dim, latent_dim))
            layers.append(nn.LeakyReLU(0.2))
        self.net = nn.Sequential(*layers)
        kaiming_init(self)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent has length {z.shape[-1]}, expected {self.latent_dim}")
        squeeze = z.dim() == 1
        if squeeze:
            z = z.unsqueeze(0)
        w = self.net(z)
        return w.squeeze(0) if squeeze else w


class NoiseInjection(nn.Module):
    """Adds a single-channel spatial map scaled per channel.

    Scales start at zero so a fresh generator ignores its spatial inputs;
    their influence is learned during training.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.scale = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        if noise.shape[-2:] != x.shape[-2:]:
            raise ValueError(
                f"noise map side {tuple(noise.shape[-2:])} does not match features {tuple(x.shape[-2:])}"
            )
        if noise.dim() == 2:
            noise = noise.unsqueeze(0).unsqueeze(0)
        elif noise.dim() == 3:
            noise = noise.unsqueeze(1)
        return x + self.scale.view(1, -1, 1, 1) * noise


class AdaIN(nn.Module):
    """Instance normalization followed by style-driven scale and bias."""

    def __init__(self, channels: int, style_dim: int):
        super().__init__()
        self.affine = nn.Linear(style_dim, channels * 2)
        self.affine._keep_init = True
        self.channels = channels
        # start as identity: scale 1, bias 0
        nn.init.normal_(self.affine.weight, std=0.02)
        with torch.no_grad():
            self.affine.bias.zero_()
            self.affine.bias[:channels] = 1.0

    def forward(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=(2, 3), keepdim=True)
        var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
        x = (x - mean) * torch.rsqrt(var + 1e-8)
        style = self.affine(w).view(-1, 2 * self.channels, 1, 1)
        scale, bias = style[:, : self.channels], style[:, self.channels:]
        return scale * x + bias


class SynthesisUnit(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, style_dim: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.noise_static = NoiseInjection(out_channels)
        self.noise_dynamic = NoiseInjection(out_channels)
        self.act = nn.LeakyReLU(0.2)
        self.adain = AdaIN(out_channels, style_dim)

    def forward(self, x, w, static_map, dynamic_map):
        x = self.conv(x)
        x = self.noise_static(x, static_map)
        x = self.noise_dynamic(x, dynamic_map)
        x = self.act(x)
        return self.adain(x, w)


class SynthesisBlock(nn.Module):
    """Two units at one resolution; the same style vector drives both."""

    def __init__(self, in_channels: int, out_channels: int, style_dim: int):
        super().__init__()
        self.unit1 = SynthesisUnit(in_channels, out_channels, style_dim)
        self.unit2 = SynthesisUnit(out_channels, out_channels, style_dim)

    def forward(self, x, w, static_map, dynamic_map):
        x = self.unit1(x, w, static_map, dynamic_map)
        return self.unit2(x, w, static_map, dynamic_map)


def _normalize_noise(noise: torch.Tensor, batch: int) -> torch.Tensor:
    """Accept (s, s), (B, s, s) or (B, 1, s, s) maps."""
    if noise.dim() == 2:
        noise = noise.unsqueeze(0).expand(batch, -1, -1)
    if noise.dim() == 3:
        noise = noise.unsqueeze(1)
    return noise


class Generator(nn.Module):
    """Convolutional synthesis network with per-block style and noise inputs."""

    def __init__(self, num_blocks: int, channel_widths: tuple[int, ...],
                 style_dim: int = 512):
        super().__init__()
        if len(channel_widths) != num_blocks:
            raise ValueError("need one channel width per block")
        self.num_blocks = num_blocks
        self.style_dim = style_dim
        self.const = nn.Parameter(torch.ones(channel_widths[0], 4, 4))
        blocks = []
        to_rgb = []
        for n in range(num_blocks):
            in_ch = channel_widths[max(n - 1, 0)]
            out_ch = channel_widths[n]
            blocks.append(SynthesisBlock(in_ch, out_ch, style_dim))
            to_rgb.append(nn.Conv2d(out_ch, 3, 1))
        self.blocks = nn.ModuleList(blocks)
        self.to_rgb = nn.ModuleList(to_rgb)
        kaiming_init(self)

    @property
    def final_resolution(self) -> int:
        return 2 ** (self.num_blocks + 1)

    def forward(self, styles: torch.Tensor,
                static_maps: list[torch.Tensor],
                dynamic_maps: list[torch.Tensor],
                stage: int | None = None,
                alpha: float = 1.0) -> torch.Tensor:
        """styles: (N, style_dim) or (B, N, style_dim); maps: one per active block.

        Returns images in [-1, 1], side 2^(stage+2).
        """
        if styles.dim() == 2:
            styles = styles.unsqueeze(0)
        batch = styles.shape[0]
        if stage is None:
            stage = self.num_blocks - 1
        if styles.shape[1] < stage + 1:
            raise ValueError(f"need {stage + 1} style slots, got {styles.shape[1]}")
        if len(static_maps) < stage + 1 or len(dynamic_maps) < stage + 1:
            raise ValueError(f"need {stage + 1} noise maps per branch")

        x = self.const.unsqueeze(0).expand(batch, -1, -1, -1)
        prev = None
        for n in range(stage + 1):
            if n > 0:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self.blocks[n](
                x, styles[:, n],
                _normalize_noise(static_maps[n], batch),
                _normalize_noise(dynamic_maps[n], batch),
            )
            if n == stage - 1:
                prev = x
        rgb = self.to_rgb[stage](x)
        if alpha < 1.0 and stage > 0:
            rgb_prev = F.interpolate(self.to_rgb[stage - 1](prev), scale_factor=2,
                                     mode="nearest")
            rgb = (1.0 - alpha) * rgb_prev + alpha * rgb
        return torch.tanh(rgb)


class MinibatchStdDev(nn.Module):
    def forward(self, x):
        # epsilon inside the sqrt keeps the gradient finite when the batch
        # happens to be (nearly) constant
        var = x.var(dim=0, unbiased=False)
        std = torch.sqrt(var + 1e-8).mean()
        feat = std.expand(x.shape[0], 1, x.shape[2], x.shape[3])
        return torch.cat([x, feat], dim=1)


class DiscriminatorBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, in_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x):
        x = self.act(self.conv1(x))
        x = self.act(self.conv2(x))
        return F.avg_pool2d(x, 2)


class _DiscriminatorCore(nn.Module):
    """Shared pyramid: blocks from the entry stage down to 4x4, then a
    minibatch-stddev head producing a single logit."""

    def __init__(self, num_blocks: int, channel_widths: tuple[int, ...]):
        super().__init__()
        self.num_blocks = num_blocks
        blocks = []
        for n in range(1, num_blocks):
            # block consuming stage-n features down to stage n-1
            blocks.append(DiscriminatorBlock(channel_widths[n], channel_widths[n - 1]))
        self.blocks = nn.ModuleList(blocks)
        self.stddev = MinibatchStdDev()
        base = channel_widths[0]
        self.final_conv = nn.Conv2d(channel_widths[0] + 1, base, 3, padding=1)
        self.final_dense = nn.Linear(base * 16, base)
        self.out = nn.Linear(base, 1)
        self.act = nn.LeakyReLU(0.2)

    def descend(self, x, stage: int, alpha: float, entry_fn):
        """entry_fn(stage) -> feature map at that stage's resolution."""
        if stage > 0 and alpha < 1.0:
            skipped = entry_fn(stage - 1, downsampled=True)
            x = self.blocks[stage - 1](x)
            x = alpha * x + (1.0 - alpha) * skipped
            stage -= 1
        for n in range(stage, 0, -1):
            x = self.blocks[n - 1](x)
        x = self.stddev(x)
        x = self.act(self.final_conv(x))
        x = self.act(self.final_dense(x.flatten(1)))
        return self.out(x).squeeze(1)


class StaticDiscriminator(nn.Module):
    """Scores single images for realism."""

    def __init__(self, num_blocks: int, channel_widths: tuple[int, ...]):
        super().__init__()
        self.num_blocks = num_blocks
        self.from_rgb = nn.ModuleList(
            [nn.Conv2d(3, channel_widths[n], 1) for n in range(num_blocks)]
        )
        self.core = _DiscriminatorCore(num_blocks, channel_widths)
        self.act = nn.LeakyReLU(0.2)
        kaiming_init(self)

    def forward(self, image: torch.Tensor, stage: int | None = None,
                alpha: float = 1.0) -> torch.Tensor:
        if stage is None:
            stage = self.num_blocks - 1
        expected = 2 ** (stage + 2)
        if image.shape[-1] != expected or image.shape[-2] != expected:
            raise ValueError(f"expected {expected}px input at stage {stage}, "
                             f"got {tuple(image.shape[-2:])}")

        def entry(s, downsampled=False):
            img = F.avg_pool2d(image, 2) if downsampled else image
            return self.act(self.from_rgb[s](img))

        return self.core.descend(entry(stage), stage, alpha, entry)


class PairwiseDiscriminator(nn.Module):
    """Scores frame pairs for cross-frame consistency.

    The input convolution has half the output channels and runs on each
    frame separately with shared weights; the two feature maps are
    concatenated (order-sensitive) and the rest mirrors the static network.
    """

    def __init__(self, num_blocks: int, channel_widths: tuple[int, ...]):
        super().__init__()
        if any(w % 2 for w in channel_widths):
            raise ValueError("pairwise discriminator needs even channel widths "
                             "(two half-width frame maps concatenate to the full width)")
        self.num_blocks = num_blocks
        self.half_widths = tuple(w // 2 for w in channel_widths)
        self.from_rgb = nn.ModuleList(
            [nn.Conv2d(3, self.half_widths[n], 1) for n in range(num_blocks)]
        )
        self.core = _DiscriminatorCore(num_blocks, channel_widths)
        self.act = nn.LeakyReLU(0.2)
        kaiming_init(self)

    def forward(self, frame_a: torch.Tensor, frame_b: torch.Tensor,
                stage: int | None = None, alpha: float = 1.0) -> torch.Tensor:
        if stage is None:
            stage = self.num_blocks - 1
        expected = 2 ** (stage + 2)
        if frame_a.shape != frame_b.shape:
            raise ValueError("pair frames must have equal shapes")
        if frame_a.shape[-1] != expected:
            raise ValueError(f"expected {expected}px input at stage {stage}, "
                             f"got {tuple(frame_a.shape[-2:])}")

        def entry(s, downsampled=False):
            a, b = frame_a, frame_b
            if downsampled:
                a, b = F.avg_pool2d(a, 2), F.avg_pool2d(b, 2)
            fa = self.act(self.from_rgb[s](a))
            fb = self.act(self.from_rgb[s](b))
            return torch.cat([fa, fb], dim=1)

        return self.core.descend(entry(stage), stage, alpha, entry)
