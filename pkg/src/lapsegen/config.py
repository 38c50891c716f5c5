"""Configuration objects and the versioned run-config document.

All knobs that tests or CLI users may touch live here. Dataclasses are
plain (no runtime validation framework); ``validate()`` raises on broken
invariants and every ``from_dict`` rejects unknown keys so that config
files fail loudly instead of silently ignoring typos.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

CONFIG_FORMAT_VERSION = 1


def _check_unknown_keys(cls, data: dict) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(
            f"unknown keys for {cls.__name__}: {sorted(unknown)}; known: {sorted(known)}"
        )


def default_channel_widths(num_blocks: int, width_factor: float = 1.0,
                           base: int = 8192, max_width: int = 512) -> tuple[int, ...]:
    """Per-block channel counts, halving as resolution doubles.

    Widths are kept even so the pair discriminator's half-width input
    convolutions concatenate back to the full width.
    """
    widths = []
    for n in range(num_blocks):
        resolution = 2 ** (n + 2)
        w = min(base // resolution, max_width)
        widths.append(max(4, 2 * int(round(w * width_factor / 2))))
    return tuple(widths)


@dataclass
class GeneratorConfig:
    """Shapes of the mapping network, generator and latent spaces."""

    num_blocks: int = 7
    latent_dim: int = 512
    dynamic_dim: int = 3
    channel_widths: tuple[int, ...] | None = None
    mapping_depth: int = 8
    style_mixing_prob: float = 0.9

    def __post_init__(self):
        if self.channel_widths is None:
            self.channel_widths = default_channel_widths(self.num_blocks)
        else:
            self.channel_widths = tuple(int(w) for w in self.channel_widths)
        self.validate()

    @property
    def final_resolution(self) -> int:
        return 2 ** (self.num_blocks + 1)

    @property
    def static_dim(self) -> int:
        return self.latent_dim - self.dynamic_dim

    def noise_sides(self) -> tuple[int, ...]:
        """Side of the square spatial map fed to block n (1-based): 2^(n+1)."""
        return tuple(2 ** (n + 2) for n in range(self.num_blocks))

    def validate(self) -> None:
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if not (0 < self.dynamic_dim < self.latent_dim):
            raise ConfigError("dynamic_dim must be in (0, latent_dim)")
        if len(self.channel_widths) != self.num_blocks:
            raise ConfigError(
                f"channel_widths has {len(self.channel_widths)} entries, "
                f"need num_blocks={self.num_blocks}"
            )
        if self.mapping_depth < 1:
            raise ConfigError("mapping_depth must be >= 1")
        if not (0.0 <= self.style_mixing_prob <= 1.0):
            raise ConfigError("style_mixing_prob must be in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        _check_unknown_keys(cls, data)
        return cls(**data)


# Full-scale batch table: resolution -> batch size.
PAPER_BATCH_TABLE = {4: 512, 8: 256, 16: 128, 32: 64, 64: 32,
                     128: 32, 256: 16, 512: 8, 1024: 8}

# Full-scale learning rates; resolutions between entries use the last
# smaller entry, resolutions above 256 use 3e-3.
PAPER_LR_TABLE = {4: 1e-3, 128: 1.5e-3, 256: 2e-3, 512: 3e-3, 1024: 3e-3}


@dataclass(frozen=True)
class Phase:
    resolution: int
    kind: str              # "transition" | "stabilization"
    start_sample: int
    num_samples: int

    @property
    def end_sample(self) -> int:
        return self.start_sample + self.num_samples


@dataclass
class TrainingSchedule:
    """Progressive-growing schedule plus discriminator balancing.

    The pairwise/static balance anneals linearly from ``pairwise_start`` to
    ``pairwise_end`` over every transition phase and stays at
    ``pairwise_end`` through stabilization phases.  The first phase (initial
    resolution, nothing to blend into) also carries the anneal so each new
    resolution starts with the pair discriminator emphasized.
    """

    transition_samples: int = 600_000
    stabilization_samples: int = 600_000
    batch_table: dict[int, int] = field(default_factory=lambda: dict(PAPER_BATCH_TABLE))
    lr_table: dict[int, float] = field(default_factory=lambda: dict(PAPER_LR_TABLE))
    pairwise_start: float = 0.5
    pairwise_end: float = 0.1
    balancing: str = "decay"            # "decay" | "fixed"
    fixed_proportion: float = 0.1       # used when balancing == "fixed"
    crop_pair_probability: float = 0.5
    r1_gamma: float = 10.0
    ema_alpha: float = 0.999
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    mapping_lr_factor: float = 0.01   # deep style stacks train at a fraction of the main rate
    start_resolution: int = 4

    def __post_init__(self):
        self.batch_table = {int(k): int(v) for k, v in self.batch_table.items()}
        self.lr_table = {int(k): float(v) for k, v in self.lr_table.items()}
        if not (0.0 <= self.pairwise_end <= self.pairwise_start <= 1.0):
            raise ConfigError("need 0 <= pairwise_end <= pairwise_start <= 1")
        if self.balancing not in ("decay", "fixed"):
            raise ConfigError(f"unknown balancing mode {self.balancing!r}")

    def batch_size(self, resolution: int) -> int:
        if resolution in self.batch_table:
            return self.batch_table[resolution]
        raise ConfigError(f"no batch size configured for resolution {resolution}")

    def learning_rate(self, resolution: int) -> float:
        applicable = [r for r in self.lr_table if r <= resolution]
        if not applicable:
            raise ConfigError(f"no learning rate configured at or below {resolution}px")
        return self.lr_table[max(applicable)]

    def phases(self, final_resolution: int) -> list[Phase]:
        """Phase plan: anneal-carrying phase at the start resolution, then
        (transition, stabilization) per doubling up to final_resolution.
        Training continues in the last phase indefinitely."""
        phases: list[Phase] = []
        cursor = 0
        res = self.start_resolution
        phases.append(Phase(res, "transition", cursor, self.transition_samples))
        cursor += self.transition_samples
        phases.append(Phase(res, "stabilization", cursor, self.stabilization_samples))
        cursor += self.stabilization_samples
        while res < final_resolution:
            res *= 2
            phases.append(Phase(res, "transition", cursor, self.transition_samples))
            cursor += self.transition_samples
            phases.append(Phase(res, "stabilization", cursor, self.stabilization_samples))
            cursor += self.stabilization_samples
        return phases

    def phase_at(self, samples_seen: int, final_resolution: int) -> tuple[Phase, float]:
        """Phase containing the given sample counter and the in-phase
        fraction in [0, 1); past the plan end the last phase is pinned at 1."""
        plan = self.phases(final_resolution)
        for phase in plan:
            if samples_seen < phase.end_sample:
                frac = (samples_seen - phase.start_sample) / phase.num_samples
                return phase, frac
        return plan[-1], 1.0

    def pairwise_proportion(self, samples_seen: int, final_resolution: int) -> float:
        """Probability that a training step goes through the pair
        discriminator, as a pure function of progress."""
        if self.balancing == "fixed":
            return self.fixed_proportion
        phase, frac = self.phase_at(samples_seen, final_resolution)
        if phase.kind == "transition":
            return self.pairwise_start + (self.pairwise_end - self.pairwise_start) * frac
        return self.pairwise_end

    def alpha_at(self, samples_seen: int, final_resolution: int) -> float:
        """Resolution blending weight: ramps 0->1 during a transition phase,
        1 elsewhere. The initial phase has nothing to blend and is pinned at 1."""
        phase, frac = self.phase_at(samples_seen, final_resolution)
        if phase.kind == "transition" and phase.resolution > self.start_resolution:
            return frac
        return 1.0

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingSchedule":
        _check_unknown_keys(cls, data)
        return cls(**data)


INVERSION_VARIANTS = ("i2s", "mo", "e", "eo", "eoi", "eoif", "eoifs")


@dataclass
class InversionConfig:
    variant: str = "eoif"
    max_iters: int = 500
    perceptual_coeff: float = 0.01      # weight of the perceptual term in the reconstruction loss
    noise_grad_scale: float = 0.001     # spatial-map gradients are multiplied by this before the update
    style_penalty_coeff: float = 0.01   # weight of the stay-near-initialization penalty
    initial_lr: float = 0.1
    plateau_patience: int = 20          # halve lr after this many non-improving iterations
    early_stop_patience: int = 100
    finetune_iters: int = 500
    finetune_lr: float = 0.001
    finetune_perceptual_weight: float = 10.0
    mean_style_samples: int = 10_000

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in INVERSION_VARIANTS:
            raise ConfigError(f"unknown inversion variant {self.variant!r}")
        for name in ("perceptual_coeff", "noise_grad_scale", "style_penalty_coeff",
                     "initial_lr", "finetune_lr", "finetune_perceptual_weight"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "InversionConfig":
        _check_unknown_keys(cls, data)
        return cls(**data)


@dataclass
class EncoderConfig:
    """Residual backbone for style prediction. The full-scale preset mirrors
    a 152-layer bottleneck network; the toy preset is a few basic blocks."""

    stage_blocks: tuple[int, ...] = (3, 8, 36, 3)
    stage_channels: tuple[int, ...] = (64, 128, 256, 512)
    stem_channels: int = 64
    mlp_hidden: int = 1024
    train_samples: int = 200_000
    batch_size: int = 16
    learning_rate: float = 1e-3

    def __post_init__(self):
        self.stage_blocks = tuple(int(b) for b in self.stage_blocks)
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        if len(self.stage_blocks) != len(self.stage_channels):
            raise ConfigError("stage_blocks and stage_channels must have equal length")

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        _check_unknown_keys(cls, data)
        return cls(**data)


@dataclass
class AnimationConfig:
    steps: int = 100
    fps: int = 30
    clock_preset: str = "3h"
    speed_scale: float = 1.0
    horizon_y: float = 0.5
    fill: str = "fresh"                 # "fresh" | "reflect"
    interpolation: str = "linear"       # "linear" | "spherical"

    @classmethod
    def from_dict(cls, data: dict) -> "AnimationConfig":
        _check_unknown_keys(cls, data)
        return cls(**data)


@dataclass
class SuperResConfig:
    backend: str = "bilinear"           # "bilinear" | "cnn"
    scale: int = 4
    guided_radius: int = 16
    guided_eps: float = 1e-4
    feather_px: int = 8                 # at 1024px; scaled with output resolution
    train_steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    recipe: str = "l1"                  # "l1" here; adversarial recipe reserved for full-scale runs

    @classmethod
    def from_dict(cls, data: dict) -> "SuperResConfig":
        _check_unknown_keys(cls, data)
        return cls(**data)


@dataclass
class EvalConfig:
    n_pairs: int = 1200
    n_fid_samples: int = 1200
    feature_extractor: str = "random-pyramid"
    flow_block: int = 8
    flow_search: int = 4

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        _check_unknown_keys(cls, data)
        return cls(**data)


@dataclass
class RunConfig:
    """Top-level document tying the whole pipeline together."""

    version: int = CONFIG_FORMAT_VERSION
    preset: str = "toy"
    seed: int = 0
    total_steps: int = 2000
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    schedule: TrainingSchedule = field(default_factory=TrainingSchedule)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    animation: AnimationConfig = field(default_factory=AnimationConfig)
    superres: SuperResConfig = field(default_factory=SuperResConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, Any]:
        data = dataclasses.asdict(self)
        # YAML-friendly: tuples to lists
        def clean(obj):
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items()}
            if isinstance(obj, tuple):
                return [clean(v) for v in obj]
            if isinstance(obj, list):
                return [clean(v) for v in obj]
            return obj
        return clean(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _check_unknown_keys(cls, data)
        data = dict(data)
        version = int(data.get("version", CONFIG_FORMAT_VERSION))
        if version > CONFIG_FORMAT_VERSION:
            raise ConfigError(
                f"config version {version} is newer than supported {CONFIG_FORMAT_VERSION}"
            )
        sub = {
            "generator": GeneratorConfig,
            "schedule": TrainingSchedule,
            "inversion": InversionConfig,
            "encoder": EncoderConfig,
            "animation": AnimationConfig,
            "superres": SuperResConfig,
            "evaluation": EvalConfig,
        }
        for key, klass in sub.items():
            if key in data and isinstance(data[key], dict):
                data[key] = klass.from_dict(data[key])
        return cls(**data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        raw = yaml.safe_load(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return cls.from_dict(raw)


def toy_config(seed: int = 0, final_resolution: int = 32) -> RunConfig:
    """Desk-scale preset: tiny widths, schedules scaled down 100x."""
    import math
    num_blocks = int(math.log2(final_resolution)) - 1
    if 2 ** (num_blocks + 1) != final_resolution:
        raise ConfigError("final_resolution must be a power of two >= 4")
    gen = GeneratorConfig(
        num_blocks=num_blocks,
        channel_widths=default_channel_widths(num_blocks, width_factor=0.0625, max_width=512),
        mapping_depth=8,
    )
    schedule = TrainingSchedule(
        transition_samples=6_000,
        stabilization_samples=6_000,
        batch_table={4: 16, 8: 16, 16: 8, 32: 8, 64: 8},
        lr_table={4: 1e-3},
    )
    encoder = EncoderConfig(
        stage_blocks=(1, 1, 1, 1),
        stage_channels=(16, 32, 64, 64),
        stem_channels=16,
        mlp_hidden=256,
        train_samples=2_000,
    )
    return RunConfig(preset="toy", seed=seed, total_steps=2000, generator=gen,
                     schedule=schedule, encoder=encoder,
                     evaluation=EvalConfig(n_pairs=120, n_fid_samples=120))


def paper_config(seed: int = 0, final_resolution: int = 256) -> RunConfig:
    import math
    num_blocks = int(math.log2(final_resolution)) - 1
    gen = GeneratorConfig(num_blocks=num_blocks)
    return RunConfig(preset="paper", seed=seed, total_steps=450_000, generator=gen)
