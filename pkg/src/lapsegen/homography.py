"""Projective motion model for the dynamic spatial maps.

Coordinates are normalized to the unit square, x right / y down, with the
horizon at ``y = horizon_y``. A motion is parameterized by displacements of
the two upper corners and two points on the horizon; below the horizon the
transform is conjugated by a vertical reflection about the horizon line so
the motion mirrors like a water reflection. Frame i applies the (i-1)-fold
composition of the per-frame matrix, resampled once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .errors import NumericsError

_MIN_DET = 1e-12


@dataclass
class Homography:
    """3x3 projective transform (bottom-right normalized to 1) plus the
    horizon height used for the reflection split."""

    matrix: np.ndarray
    horizon_y: float = 0.5

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (3, 3):
            raise ValueError("homography matrix must be 3x3")
        if abs(self.matrix[2, 2]) < _MIN_DET:
            raise NumericsError("cannot normalize matrix with ~zero corner element")
        self.matrix = self.matrix / self.matrix[2, 2]
        if abs(np.linalg.det(self.matrix)) < _MIN_DET:
            raise NumericsError("homography matrix is singular")
        if not (0.0 < self.horizon_y < 1.0):
            raise ValueError("horizon_y must lie strictly inside (0, 1)")

    @classmethod
    def identity(cls, horizon_y: float = 0.5) -> "Homography":
        return cls(np.eye(3), horizon_y)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (n, 2) points through the matrix (no reflection split)."""
        pts = np.asarray(points, dtype=np.float64)
        ones = np.ones((pts.shape[0], 1))
        homog = np.concatenate([pts, ones], axis=1) @ self.matrix.T
        return homog[:, :2] / homog[:, 2:3]

    def power(self, exponent: int) -> np.ndarray:
        if exponent < 0:
            raise ValueError("exponent must be non-negative")
        return np.linalg.matrix_power(self.matrix, exponent)


def homography_from_correspondences(src_points, dst_points,
                                    horizon_y: float = 0.5) -> Homography:
    """Solve the 4-point direct linear transform.

    Each correspondence contributes two rows of the 8x8 system for the
    matrix entries (bottom-right pinned to 1).
    """
    src = np.asarray(src_points, dtype=np.float64)
    dst = np.asarray(dst_points, dtype=np.float64)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise ValueError("need exactly four 2-d source and destination points")
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i in range(4):
        x, y = src[i]
        u, v = dst[i]
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"degenerate correspondences: {exc}") from exc
    matrix = np.array([[h[0], h[1], h[2]],
                       [h[3], h[4], h[5]],
                       [h[6], h[7], 1.0]])
    return Homography(matrix, horizon_y)


def reflection_matrix(horizon_y: float) -> np.ndarray:
    """Vertical mirror about the horizon line: (x, y) -> (x, 2h - y)."""
    return np.array([[1.0, 0.0, 0.0],
                     [0.0, -1.0, 2.0 * horizon_y],
                     [0.0, 0.0, 1.0]])


def conjugate_by_reflection(matrix: np.ndarray, horizon_y: float) -> np.ndarray:
    v = reflection_matrix(horizon_y)
    return v @ matrix @ v


@dataclass
class PiecewiseWarpField:
    """The full warp: the homography above the horizon, its reflection
    conjugate below."""

    above: np.ndarray
    below: np.ndarray
    horizon_y: float

    def matrix_at(self, y: float) -> np.ndarray:
        return self.above if y < self.horizon_y else self.below

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        out = np.empty_like(pts)
        for i, (x, y) in enumerate(pts):
            m = self.matrix_at(y)
            homog = m @ np.array([x, y, 1.0])
            out[i] = homog[:2] / homog[2]
        return out


def reflect_below_horizon(h: Homography) -> PiecewiseWarpField:
    return PiecewiseWarpField(
        above=h.matrix.copy(),
        below=conjugate_by_reflection(h.matrix, h.horizon_y),
        horizon_y=h.horizon_y,
    )


def reflect_field(field: PiecewiseWarpField) -> PiecewiseWarpField:
    """Conjugate a whole field by the horizon reflection.

    A point above the horizon lands below it under the reflection and vice
    versa, so conjugating the piecewise field exchanges its two branches;
    no arithmetic is involved and a double reflection restores the original
    field bit-for-bit.
    """
    return PiecewiseWarpField(above=field.below, below=field.above,
                              horizon_y=field.horizon_y)


def effective_matrix(h: Homography, frame_index: int) -> np.ndarray:
    """Per-frame motion: the (frame_index - 1)-fold composition."""
    if frame_index < 1:
        raise ValueError("frame_index is 1-based")
    return h.power(frame_index - 1)


def _bilinear_sample(grid: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample grid at fractional pixel coordinates, clamped to the border."""
    side = grid.shape[0]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    x0c = np.clip(x0, 0, side - 1)
    x1c = np.clip(x0 + 1, 0, side - 1)
    y0c = np.clip(y0, 0, side - 1)
    y1c = np.clip(y0 + 1, 0, side - 1)
    top = grid[y0c, x0c] * (1 - fx) + grid[y0c, x1c] * fx
    bottom = grid[y1c, x0c] * (1 - fx) + grid[y1c, x1c] * fx
    return top * (1 - fy) + bottom * fy


def warp_noise_map(base: torch.Tensor, field: PiecewiseWarpField,
                   fill: str = "fresh",
                   fill_rng: np.random.Generator | None = None) -> torch.Tensor:
    """Resample one square map through the inverse of the piecewise field.

    Output pixel p takes the value of the base map at field^-1(p); positions
    pulled from outside the unit square are filled with fresh unit-normal
    draws (keeps the map's statistics) or by reflecting back into the field.
    """
    side = base.shape[-1]
    grid = base.detach().cpu().numpy().astype(np.float64)
    centers = (np.arange(side) + 0.5) / side
    xs, ys = np.meshgrid(centers, centers)          # (side, side), row = y

    inv_above = np.linalg.inv(field.above)
    inv_below = np.linalg.inv(field.below)
    below = ys >= field.horizon_y

    def pull(inv):
        w = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
        if np.any(np.abs(w) < _MIN_DET):
            raise NumericsError("warp sends pixels to infinity")
        px = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / w
        py = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / w
        return px, py

    ax, ay = pull(inv_above)
    bx, by = pull(inv_below)
    src_x = np.where(below, bx, ax)
    src_y = np.where(below, by, ay)

    outside = (src_x < 0.0) | (src_x > 1.0) | (src_y < 0.0) | (src_y > 1.0)
    if fill == "reflect":
        src_x = _reflect_unit(src_x)
        src_y = _reflect_unit(src_y)
        outside = np.zeros_like(outside)
    elif fill != "fresh":
        raise ValueError(f"unknown fill policy {fill!r}")

    sampled = _bilinear_sample(grid, src_x * side - 0.5, src_y * side - 0.5)
    if outside.any():
        if fill_rng is None:
            fill_rng = np.random.default_rng(0)
        sampled[outside] = fill_rng.standard_normal(int(outside.sum()))
    return torch.from_numpy(sampled).to(base.dtype)


def _reflect_unit(coords: np.ndarray) -> np.ndarray:
    r = np.mod(np.abs(coords), 2.0)
    return np.where(r <= 1.0, r, 2.0 - r)


def warp_dynamic_noise(base_maps: list[torch.Tensor], h: Homography,
                       frame_index: int, fill: str = "fresh",
                       stream_seed: int = 0) -> list[torch.Tensor]:
    """Dynamic maps for a given frame: one resample of the base maps through
    the composed matrix; frame 1 is the base itself."""
    if frame_index < 1:
        raise ValueError("frame_index is 1-based")
    if frame_index == 1:
        return [m.clone() for m in base_maps]
    matrix = effective_matrix(h, frame_index)
    composed = Homography(matrix, h.horizon_y)
    field = reflect_below_horizon(composed)
    out = []
    for level, base in enumerate(base_maps):
        rng = np.random.default_rng([stream_seed, frame_index, level])
        out.append(warp_noise_map(base, field, fill=fill, fill_rng=rng))
    return out


# --- clock-position presets -------------------------------------------------

def load_clock_presets(path: str | Path | None = None) -> dict:
    if path is None:
        text = resources.files("lapsegen.presets").joinpath(
            "clock_homographies.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def clock_homography(hour: int, speed_scale: float = 1.0,
                     horizon_y: float = 0.5,
                     presets: dict | None = None) -> Homography:
    """Predefined motion for one clock direction, scaled by speed.

    Zero speed degenerates to the identity. Motions are defined by upper
    corner displacements plus a damped horizontal drift of the horizon
    points (far content moves slower).
    """
    if not 1 <= int(hour) <= 12:
        raise ValueError("hour must be in 1..12")
    presets = presets if presets is not None else load_clock_presets()
    entry = presets["hours"][str(int(hour))]
    cdx, cdy = (speed_scale * v for v in entry["corner"])
    hdx, hdy = (speed_scale * v for v in entry["horizon"])
    src = np.array([[0.0, 0.0], [1.0, 0.0],
                    [0.0, horizon_y], [1.0, horizon_y]])
    dst = src + np.array([[cdx, cdy], [cdx, cdy], [hdx, hdy], [hdx, hdy]])
    return homography_from_correspondences(src, dst, horizon_y=horizon_y)
