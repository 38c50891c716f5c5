"""Video rendering: interpolated dynamic latents + warped dynamic maps.

Only the dynamic inputs change over time. Static maps are passed through
untouched (the same tensors, never written), so static content is frozen by
construction across a rendered clip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from .errors import ConfigError
from .homography import Homography, clock_homography, warp_dynamic_noise
from .latents import LatentCode, SpatialNoiseSet, StyleSet, broadcast_styles
from .model import ModelBundle


@dataclass
class AnimationScript:
    homography: Homography
    steps: int = 100
    fps: int = 30
    z_dynamic_start: torch.Tensor | None = None
    z_dynamic_end: torch.Tensor | None = None
    speed_scale: float = 1.0
    fill: str = "fresh"
    interpolation: str = "linear"
    noise_stream_seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.speed_scale <= 0:
            raise ValueError("speed_scale must be positive")
        if self.interpolation not in ("linear", "spherical"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


def interpolate_dynamic_latent(z1: torch.Tensor, z2: torch.Tensor,
                               t: float) -> torch.Tensor:
    """Linear path between two dynamic latents."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    return (1.0 - t) * z1 + t * z2


def slerp_dynamic_latent(z1: torch.Tensor, z2: torch.Tensor, t: float) -> torch.Tensor:
    """Great-circle path; falls back to linear for near-parallel vectors."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    n1, n2 = torch.linalg.norm(z1), torch.linalg.norm(z2)
    if n1 < 1e-12 or n2 < 1e-12:
        return interpolate_dynamic_latent(z1, z2, t)
    cos = torch.clamp(torch.dot(z1 / n1, z2 / n2), -1.0, 1.0)
    omega = torch.arccos(cos)
    if float(omega) < 1e-6:
        return interpolate_dynamic_latent(z1, z2, t)
    s = torch.sin(omega)
    return (torch.sin((1.0 - t) * omega) / s) * z1 + (torch.sin(t * omega) / s) * z2


def frame_times(steps: int) -> list[float]:
    if steps == 1:
        return [0.0]
    return [i / (steps - 1) for i in range(steps)]


def animation_noise_sets(base: SpatialNoiseSet, script: AnimationScript):
    """Per-frame noise: frame i reuses the static maps and warps the dynamic
    maps by the (i)-fold-composed motion (frame 0 is unwarped)."""
    for i in range(script.steps):
        dynamic = warp_dynamic_noise(base.dynamic_maps, script.homography,
                                     frame_index=i + 1, fill=script.fill,
                                     stream_seed=script.noise_stream_seed)
        yield SpatialNoiseSet(static_maps=base.static_maps, dynamic_maps=dynamic)


def render_video(bundle: ModelBundle,
                 latents: tuple[LatentCode | StyleSet, SpatialNoiseSet],
                 script: AnimationScript,
                 use_ema: bool = True) -> list[torch.Tensor]:
    """Render script.steps frames, each (H, W, 3) in [-1, 1].

    With a LatentCode the style is recomputed per frame from the
    interpolated dynamic latent; with a StyleSet (an inversion result)
    styles stay fixed and only the spatial maps move.
    """
    code_or_styles, base_noise = latents
    if base_noise.num_blocks != bundle.config.num_blocks:
        raise ValueError("noise set does not match the generator block count")
    gen = bundle.eval_generator(use_ema=use_ema)
    interp = (slerp_dynamic_latent if script.interpolation == "spherical"
              else interpolate_dynamic_latent)

    styles_fixed: StyleSet | None = None
    if isinstance(code_or_styles, StyleSet):
        styles_fixed = code_or_styles
    elif not isinstance(code_or_styles, LatentCode):
        raise TypeError("latents must pair a LatentCode or StyleSet with a SpatialNoiseSet")

    frames = []
    times = frame_times(script.steps)
    for i, t in enumerate(times):
        if styles_fixed is not None:
            styles = styles_fixed
        else:
            z_start = (script.z_dynamic_start if script.z_dynamic_start is not None
                       else code_or_styles.z_dynamic)
            z_end = (script.z_dynamic_end if script.z_dynamic_end is not None
                     else z_start)
            z_dyn = interp(z_start, z_end, t)
            code = LatentCode(code_or_styles.z_static, z_dyn)
            with torch.no_grad():
                w = bundle.mapping(code.concat())
            styles = broadcast_styles(w, bundle.config.num_blocks)
        dynamic = warp_dynamic_noise(base_noise.dynamic_maps, script.homography,
                                     frame_index=i + 1, fill=script.fill,
                                     stream_seed=script.noise_stream_seed)
        noise = SpatialNoiseSet(static_maps=base_noise.static_maps,
                                dynamic_maps=dynamic)
        with torch.no_grad():
            img = gen(styles.styles.unsqueeze(0), noise.static_maps,
                      noise.dynamic_maps)
        frames.append(img[0].permute(1, 2, 0))
    return frames


def to_uint8(frame: torch.Tensor) -> np.ndarray:
    """[-1, 1] float (H, W, 3) -> 8-bit RGB."""
    arr = frame.detach().cpu().numpy()
    arr = np.clip((arr + 1.0) * 127.5, 0.0, 255.0)
    return np.round(arr).astype(np.uint8)


def save_frames(frames: list[torch.Tensor], out_dir: str | Path,
                fps: int | None = None) -> list[Path]:
    """Write numbered 8-bit RGB frames (plus fps metadata when given)."""
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        path = out / f"frame_{i:05d}.png"
        Image.fromarray(to_uint8(frame)).save(path)
        paths.append(path)
    if fps is not None:
        (out / "video_meta.yaml").write_text(yaml.safe_dump({"fps": int(fps),
                                                             "frames": len(frames)}))
    return paths


def load_script(path: str | Path, horizon_y: float = 0.5) -> AnimationScript:
    """Read a script document: clock preset or explicit matrix, frame count,
    fps, optional style endpoints."""
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: script must be a mapping")
    known = {"steps", "fps", "homography", "horizon_y", "z_dynamic_start",
             "z_dynamic_end", "fill", "interpolation", "seed"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown script keys {sorted(unknown)}")
    horizon = float(raw.get("horizon_y", horizon_y))
    hspec = raw.get("homography", {})
    speed = float(hspec.get("speed_scale", 1.0))
    if "matrix" in hspec:
        homog = Homography(np.asarray(hspec["matrix"], dtype=np.float64), horizon)
    elif "preset" in hspec:
        hour = int(str(hspec["preset"]).rstrip("h"))
        homog = clock_homography(hour, speed_scale=speed, horizon_y=horizon)
    else:
        homog = Homography.identity(horizon)

    def vec(key):
        if key in raw and raw[key] is not None:
            return torch.tensor([float(v) for v in raw[key]], dtype=torch.float32)
        return None

    return AnimationScript(
        homography=homog,
        steps=int(raw.get("steps", 100)),
        fps=int(raw.get("fps", 30)),
        z_dynamic_start=vec("z_dynamic_start"),
        z_dynamic_end=vec("z_dynamic_end"),
        speed_scale=speed,
        fill=str(raw.get("fill", "fresh")),
        interpolation=str(raw.get("interpolation", "linear")),
        noise_stream_seed=int(raw.get("seed", 0)),
    )
