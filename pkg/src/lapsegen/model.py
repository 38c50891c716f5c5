"""Model bundle: networks, EMA weights, training progress, checkpoint I/O.

A checkpoint is a single torch archive holding every weight set, the
generator config and a format version; loading reproduces synthesis output
bit-exactly.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .config import GeneratorConfig
from .errors import ConfigError
from .latents import LatentCode, SpatialNoiseSet, StyleSet, broadcast_styles
from .networks import (Generator, MappingNetwork, PairwiseDiscriminator,
                       StaticDiscriminator)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ModelBundle:
    config: GeneratorConfig
    mapping: MappingNetwork
    generator: Generator
    d_static: StaticDiscriminator
    d_pairwise: PairwiseDiscriminator
    ema_generator: Generator
    progress: dict = field(default_factory=lambda: {"samples_seen": 0, "steps": 0})

    def eval_generator(self, use_ema: bool = True) -> Generator:
        gen = self.ema_generator if use_ema else self.generator
        gen.eval()
        return gen


def create_bundle(config: GeneratorConfig, seed: int = 0) -> ModelBundle:
    """Build all networks with weights determined by the seed."""
    torch.manual_seed(seed)
    mapping = MappingNetwork(config.latent_dim, config.mapping_depth)
    generator = Generator(config.num_blocks, config.channel_widths, config.latent_dim)
    d_static = StaticDiscriminator(config.num_blocks, config.channel_widths)
    d_pairwise = PairwiseDiscriminator(config.num_blocks, config.channel_widths)
    ema_generator = copy.deepcopy(generator)
    for p in ema_generator.parameters():
        p.requires_grad_(False)
    return ModelBundle(config, mapping, generator, d_static, d_pairwise, ema_generator)


def map_latents(mapping: MappingNetwork, code: LatentCode) -> torch.Tensor:
    """Turn a latent code into a single style vector."""
    z = code.concat()
    if not torch.isfinite(z).all():
        raise ValueError("latent code contains non-finite values")
    with torch.no_grad():
        return mapping(z)


def styles_for_code(bundle: ModelBundle, code: LatentCode) -> StyleSet:
    w = map_latents(bundle.mapping, code)
    return broadcast_styles(w, bundle.config.num_blocks)


def synthesize(generator: Generator, styles: StyleSet,
               noise: SpatialNoiseSet) -> torch.Tensor:
    """Render one image (H, W, 3) in [-1, 1] from explicit latents."""
    if styles.num_blocks != generator.num_blocks:
        raise ValueError(f"style set has {styles.num_blocks} slots, "
                         f"generator needs {generator.num_blocks}")
    if noise.num_blocks != generator.num_blocks:
        raise ValueError(f"noise set has {noise.num_blocks} levels, "
                         f"generator needs {generator.num_blocks}")
    generator.eval()
    with torch.no_grad():
        img = generator(styles.styles.unsqueeze(0),
                        noise.static_maps, noise.dynamic_maps)
    return img[0].permute(1, 2, 0)


def ema_update(ema_weights: dict[str, torch.Tensor],
               live_weights: dict[str, torch.Tensor],
               alpha: float) -> dict[str, torch.Tensor]:
    """In-place per-scalar update: ema' = alpha * ema + (1 - alpha) * live."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must be in [0, 1]")
    if set(ema_weights) != set(live_weights):
        raise ValueError("weight sets have different keys")
    with torch.no_grad():
        for key, ema in ema_weights.items():
            live = live_weights[key]
            if ema.shape != live.shape:
                raise ValueError(f"shape mismatch for {key}: {tuple(ema.shape)} vs {tuple(live.shape)}")
            if ema.dtype.is_floating_point:
                ema.mul_(alpha).add_(live, alpha=1.0 - alpha)
            else:
                ema.copy_(live)
    return ema_weights


def ema_update_module(ema: torch.nn.Module, live: torch.nn.Module, alpha: float) -> None:
    ema_update(dict(ema.state_dict()), dict(live.state_dict()), alpha)


def save_checkpoint(bundle: ModelBundle, path: str | Path) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "generator_config": dataclasses.asdict(bundle.config),
        "mapping": bundle.mapping.state_dict(),
        "generator": bundle.generator.state_dict(),
        "d_static": bundle.d_static.state_dict(),
        "d_pairwise": bundle.d_pairwise.state_dict(),
        "ema_generator": bundle.ema_generator.state_dict(),
        "progress": dict(bundle.progress),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> ModelBundle:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"checkpoint format version {version} not supported "
                          f"(expected {CHECKPOINT_FORMAT_VERSION})")
    config = GeneratorConfig.from_dict(payload["generator_config"])
    bundle = create_bundle(config, seed=0)
    bundle.mapping.load_state_dict(payload["mapping"])
    bundle.generator.load_state_dict(payload["generator"])
    bundle.d_static.load_state_dict(payload["d_static"])
    bundle.d_pairwise.load_state_dict(payload["d_pairwise"])
    bundle.ema_generator.load_state_dict(payload["ema_generator"])
    bundle.progress = dict(payload["progress"])
    return bundle
