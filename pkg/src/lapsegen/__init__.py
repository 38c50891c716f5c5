"""Style-based timelapse landscape video toolkit.

Training from image + video-frame-pair data, latent recovery for real
photographs, homography-driven animation, lighting shifts, guided
super-resolution blending and an evaluation harness.
"""

__version__ = "0.1.0"

from .config import (AnimationConfig, EncoderConfig, EvalConfig,
                     GeneratorConfig, InversionConfig, RunConfig,
                     SuperResConfig, TrainingSchedule, paper_config,
                     toy_config)
from .errors import ConfigError, DataError, LapsegenError, NumericsError
from .latents import (LatentCode, SpatialNoiseSet, StyleSet, broadcast_styles,
                      sample_latents)
from .model import (ModelBundle, create_bundle, ema_update, load_checkpoint,
                    map_latents, save_checkpoint, synthesize)
