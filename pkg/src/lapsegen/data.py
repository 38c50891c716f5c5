"""Dataset ingestion: scenery images and timelapse videos as frame folders.

Preprocessing is center-crop to square followed by bilinear downsampling.
Images live in memory as float32 CHW tensors in [-1, 1]; requests at lower
power-of-two resolutions are served by average pooling so progressive
phases see consistent data.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import DataError

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
VIDEO_EXTENSIONS = {".mp4", ".avi", ".mov", ".mkv", ".webm"}


def load_image(path: str | Path) -> torch.Tensor:
    """Decode to float32 (3, H, W) in [-1, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return torch.from_numpy(arr / 127.5 - 1.0).permute(2, 0, 1)


def save_image(tensor: torch.Tensor, path: str | Path) -> None:
    """float (3, H, W) or (H, W, 3) in [-1, 1] -> 8-bit RGB file."""
    if tensor.dim() == 3 and tensor.shape[0] == 3:
        tensor = tensor.permute(1, 2, 0)
    arr = tensor.detach().cpu().numpy()
    arr = np.round(np.clip((arr + 1.0) * 127.5, 0.0, 255.0)).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def preprocess(image: torch.Tensor, resolution: int) -> torch.Tensor:
    """Center-crop to 1:1 then bilinearly resize to the target side."""
    _, h, w = image.shape
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    image = image[:, top:top + side, left:left + side]
    if side == resolution:
        return image
    return F.interpolate(image.unsqueeze(0), size=(resolution, resolution),
                         mode="bilinear", align_corners=False,
                         antialias=side > resolution)[0]


def _resize_pow2(image: torch.Tensor, resolution: int) -> torch.Tensor:
    """Serve a lower/higher power-of-two resolution from a cached frame."""
    native = image.shape[-1]
    if native == resolution:
        return image
    if native > resolution and native % resolution == 0:
        return F.avg_pool2d(image.unsqueeze(0), native // resolution)[0]
    return F.interpolate(image.unsqueeze(0), size=(resolution, resolution),
                         mode="bilinear", align_corners=False,
                         antialias=native > resolution)[0]


class ImageDataset:
    """Preprocessed still images at a fixed target resolution."""

    def __init__(self, root: Path, files: list[Path], resolution: int):
        self.root = root
        self.files = files
        self.resolution = resolution
        self._cache: list[torch.Tensor | None] = [None] * len(files)

    def __len__(self) -> int:
        return len(self.files)

    def image(self, index: int, resolution: int | None = None) -> torch.Tensor:
        if self._cache[index] is None:
            self._cache[index] = preprocess(load_image(self.files[index]),
                                            self.resolution)
        img = self._cache[index]
        return _resize_pow2(img, resolution) if resolution else img

    def batch(self, n: int, resolution: int, rng: torch.Generator) -> torch.Tensor:
        idx = torch.randint(len(self.files), (n,), generator=rng)
        return torch.stack([self.image(int(i), resolution) for i in idx])


class VideoDataset:
    """Per-video frame folders, every frame preprocessed to one resolution."""

    def __init__(self, root: Path, videos: dict[str, list[Path]], resolution: int):
        self.root = root
        self.videos = dict(sorted(videos.items()))
        self.names = list(self.videos)
        self.resolution = resolution
        self._cache: dict[tuple[int, int], torch.Tensor] = {}

    def __len__(self) -> int:
        return len(self.names)

    def frame_count(self, video: int) -> int:
        return len(self.videos[self.names[video]])

    def frame(self, video: int, index: int,
              resolution: int | None = None) -> torch.Tensor:
        key = (video, index)
        if key not in self._cache:
            path = self.videos[self.names[video]][index]
            self._cache[key] = preprocess(load_image(path), self.resolution)
        img = self._cache[key]
        return _resize_pow2(img, resolution) if resolution else img

    def index(self) -> dict[str, int]:
        return {name: len(frames) for name, frames in self.videos.items()}


def _indexable_images(directory: Path) -> list[Path]:
    files = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        try:
            with Image.open(path) as img:
                img.verify()
        except Exception as exc:
            log.warning("skipping undecodable image %s (%s)", path, exc)
            continue
        files.append(path)
    return files


def ingest_images(directory: str | Path, resolution: int) -> ImageDataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"image directory not found: {directory}")
    files = _indexable_images(directory)
    if not files:
        raise DataError(f"no decodable images in {directory}")
    return ImageDataset(directory, files, resolution)


def _extract_container_frames(path: Path, out_dir: Path, stride: int) -> list[Path]:
    try:
        import cv2
    except ImportError as exc:
        raise DataError(f"cannot decode container video {path}: OpenCV missing") from exc
    cap = cv2.VideoCapture(str(path))
    frames = []
    i = 0
    out_dir.mkdir(parents=True, exist_ok=True)
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        if i % stride == 0:
            fp = out_dir / f"frame_{i:06d}.png"
            cv2.imwrite(str(fp), frame)
            frames.append(fp)
        i += 1
    cap.release()
    return frames


def ingest_videos(directory: str | Path, resolution: int,
                  frame_stride: int = 1,
                  extract_dir: str | Path | None = None) -> VideoDataset:
    """Index videos given as frame folders (or container files, decoded via
    OpenCV into ``extract_dir``). Videos with fewer than two frames are
    excluded with a warning."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"video directory not found: {directory}")
    videos: dict[str, list[Path]] = {}
    for entry in sorted(directory.iterdir()):
        if entry.is_dir():
            frames = _indexable_images(entry)[::frame_stride] if frame_stride > 1 \
                else _indexable_images(entry)
        elif entry.suffix.lower() in VIDEO_EXTENSIONS:
            target = Path(extract_dir or directory / "_extracted") / entry.stem
            frames = _extract_container_frames(entry, target, frame_stride)
        else:
            continue
        if len(frames) < 2:
            log.warning("excluding video %s: fewer than two frames", entry.name)
            continue
        videos[entry.name] = frames
    if not videos:
        raise DataError(f"no usable videos in {directory}")
    return VideoDataset(directory, videos, resolution)
