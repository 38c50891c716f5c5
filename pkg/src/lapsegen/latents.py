"""Latent containers and sampling.

Every random scalar in the model's input comes from a unit normal draw;
samplers take an explicit ``torch.Generator`` so runs are reproducible
per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .config import GeneratorConfig


@dataclass
class LatentCode:
    """Split input code: scene identity (static) + time-varying part."""

    z_static: torch.Tensor   # (static_dim,)
    z_dynamic: torch.Tensor  # (dynamic_dim,)

    def concat(self) -> torch.Tensor:
        return torch.cat([self.z_static, self.z_dynamic])

    def clone(self) -> "LatentCode":
        return LatentCode(self.z_static.clone(), self.z_dynamic.clone())


@dataclass
class StyleSet:
    """One style vector per generator block, shape (N, style_dim)."""

    styles: torch.Tensor

    def __post_init__(self):
        if self.styles.dim() != 2:
            raise ValueError("styles must be a (num_blocks, style_dim) tensor")
        if not torch.isfinite(self.styles).all():
            raise ValueError("styles contain non-finite values")

    @property
    def num_blocks(self) -> int:
        return self.styles.shape[0]

    def clone(self) -> "StyleSet":
        return StyleSet(self.styles.clone())


@dataclass
class SpatialNoiseSet:
    """Per-resolution square maps; entry n has side 2^(n+2) (0-based n)."""

    static_maps: list[torch.Tensor] = field(default_factory=list)
    dynamic_maps: list[torch.Tensor] = field(default_factory=list)

    def __post_init__(self):
        if len(self.static_maps) != len(self.dynamic_maps):
            raise ValueError("static and dynamic map lists must have equal length")
        for n, (s, d) in enumerate(zip(self.static_maps, self.dynamic_maps)):
            side = 2 ** (n + 2)
            if s.shape[-2:] != (side, side) or d.shape[-2:] != (side, side):
                raise ValueError(
                    f"noise map {n} must be {side}x{side}, got {tuple(s.shape)} / {tuple(d.shape)}"
                )

    @property
    def num_blocks(self) -> int:
        return len(self.static_maps)

    def clone(self) -> "SpatialNoiseSet":
        return SpatialNoiseSet(
            [m.clone() for m in self.static_maps],
            [m.clone() for m in self.dynamic_maps],
        )


def sample_latent_code(rng: torch.Generator, config: GeneratorConfig) -> LatentCode:
    z = torch.randn(config.latent_dim, generator=rng)
    return LatentCode(z_static=z[: config.static_dim], z_dynamic=z[config.static_dim:])


def sample_noise_maps(rng: torch.Generator, config: GeneratorConfig) -> SpatialNoiseSet:
    static, dynamic = [], []
    for side in config.noise_sides():
        static.append(torch.randn(side, side, generator=rng))
        dynamic.append(torch.randn(side, side, generator=rng))
    return SpatialNoiseSet(static, dynamic)


def sample_latents(rng: torch.Generator, config: GeneratorConfig) -> tuple[LatentCode, SpatialNoiseSet]:
    return sample_latent_code(rng, config), sample_noise_maps(rng, config)


def broadcast_styles(w_list: list[torch.Tensor] | torch.Tensor,
                     num_blocks: int,
                     crossovers: list[int] | None = None) -> StyleSet:
    """Assign one style vector to each of the num_blocks slots.

    With a single vector all slots share it. With k vectors, ``crossovers``
    gives the k-1 slot indices where the source switches (mixing): slots
    [0, c0) take vector 0, [c0, c1) vector 1, and so on.
    """
    if isinstance(w_list, torch.Tensor):
        w_list = [w_list] if w_list.dim() == 1 else [w for w in w_list]
    if len(w_list) == 0:
        raise ValueError("need at least one style vector")
    if len(w_list) > num_blocks:
        raise ValueError(f"got {len(w_list)} styles for {num_blocks} blocks")
    if len(w_list) == 1:
        return StyleSet(w_list[0].unsqueeze(0).repeat(num_blocks, 1))
    if crossovers is None or len(crossovers) != len(w_list) - 1:
        raise ValueError("mixing needs len(w_list) - 1 crossover points")
    bounds = [0, *crossovers, num_blocks]
    if any(bounds[i] >= bounds[i + 1] for i in range(len(bounds) - 1)):
        raise ValueError(f"crossovers must be strictly increasing in (0, {num_blocks})")
    rows = []
    for i, w in enumerate(w_list):
        rows.extend([w] * (bounds[i + 1] - bounds[i]))
    return StyleSet(torch.stack(rows))
