"""Seeded training-time transforms: random resized crop, perspective, rotation.

Every transform consumes draws from a SplitMix64 stream in a fixed, documented
order, so a (seed, config, input) triple reproduces the same output bytes on
any platform.  Draw orders:

  random_resized_crop   per attempt: area fraction, aspect ratio, then (only
                        when the crop fits) top, left
  random_perspective    gate draw, then corner displacements
                        TL(dx,dy), TR(dx,dy), BR(dx,dy), BL(dx,dy)
  random_rotation       one angle draw
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import CropError, ShapeError
from .imagecore import (
    ClaheParams,
    NormalizationStats,
    bilinear_resize,
    channel_normalize,
    clahe,
    minmax_scale,
    replicate_channels,
    resize_shorter_side,
)
from .rng import RngState, next_index, next_uniform

log = logging.getLogger(__name__)

DEFAULT_ASPECT_RANGE = (3.0 / 4.0, 4.0 / 3.0)


@dataclass(frozen=True)
class AugmentConfig:
    """Training augmentation parameters."""

    crop_area_ratio: tuple = (0.4, 0.8)
    out_size: int = 224
    perspective_distortion: float = 0.4
    perspective_prob: float = 0.6
    rotation_degrees: tuple = (-45.0, 45.0)

    def __post_init__(self):
        lo, hi = self.crop_area_ratio
        if not (0 < lo <= hi <= 1):
            raise ValueError("crop_area_ratio must satisfy 0 < lo <= hi <= 1")
        if not (0 <= self.perspective_prob <= 1):
            raise ValueError("perspective_prob must be in [0, 1]")
        if self.perspective_distortion < 0:
            raise ValueError("perspective_distortion must be >= 0")
        if self.out_size < 1:
            raise ValueError("out_size must be >= 1")
        if self.rotation_degrees[0] > self.rotation_degrees[1]:
            raise ValueError("rotation_degrees interval is empty")


def random_resized_crop(
    t: np.ndarray,
    cfg: AugmentConfig,
    rng: RngState,
    aspect_range: tuple = DEFAULT_ASPECT_RANGE,
) -> np.ndarray:
    """Crop a random area fraction at a random aspect ratio, then resize.

    The area fraction is uniform in cfg.crop_area_ratio, the aspect ratio
    uniform in aspect_range, and the top-left corner uniform over all valid
    placements.  After 10 attempts without a fitting rectangle the fallback
    is the largest centered square.
    """
    t = np.asarray(t, dtype=np.float32)
    if t.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {t.shape}")
    _, h, w = t.shape
    if h < 1 or w < 1:
        raise CropError("image has no spatial extent")

    for _ in range(10):
        area_frac = next_uniform(rng, cfg.crop_area_ratio[0], cfg.crop_area_ratio[1])
        aspect = next_uniform(rng, aspect_range[0], aspect_range[1])
        target_area = area_frac * h * w
        cw = int(math.floor(math.sqrt(target_area * aspect) + 0.5))
        ch = int(math.floor(math.sqrt(target_area / aspect) + 0.5))
        if 1 <= cw <= w and 1 <= ch <= h:
            top = next_index(rng, h - ch + 1)
            left = next_index(rng, w - cw + 1)
            crop = t[:, top:top + ch, left:left + cw]
            return bilinear_resize(crop, cfg.out_size, cfg.out_size)

    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    crop = t[:, top:top + side, left:left + side]
    return bilinear_resize(crop, cfg.out_size, cfg.out_size)


def _sample_bilinear_zero(t: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample t at float coordinates with bilinear weights, zero outside."""
    _, h, w = t.shape
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros((t.shape[0],) + sx.shape, dtype=np.float64)
    src = t.astype(np.float64)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        yy = y0 + dy
        inside_y = (yy >= 0) & (yy < h)
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xx = x0 + dx
            inside = inside_y & (xx >= 0) & (xx < w)
            weight = np.where(inside, wy * wx, 0.0)
            vals = src[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += weight[None] * vals
    return out.astype(np.float32)


def _solve_homography(src_pts, dst_pts) -> np.ndarray:
    """3x3 matrix H with H @ (x, y, 1) ~ (u, v, 1) for the four point pairs."""
    a = np.zeros((8, 8), dtype=np.float64)
    b = np.zeros(8, dtype=np.float64)
    for i, ((x, y), (u, v)) in enumerate(zip(src_pts, dst_pts)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    coeffs = np.linalg.solve(a, b)
    return np.append(coeffs, 1.0).reshape(3, 3)


def random_perspective(t: np.ndarray, cfg: AugmentConfig, rng: RngState) -> np.ndarray:
    """With probability perspective_prob, warp by a random inward homography.

    Each corner moves inward by independent uniform draws up to
    distortion * (side / 2); the warp inverse-samples with bilinear weights
    and zero fill.  A numerically singular corner system degrades to the
    identity (logged), never an exception.
    """
    t = np.asarray(t, dtype=np.float32)
    if t.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {t.shape}")
    gate = next_uniform(rng, 0.0, 1.0)
    _, h, w = t.shape
    max_dx = cfg.perspective_distortion * (w / 2.0)
    max_dy = cfg.perspective_distortion * (h / 2.0)
    # corner draws happen regardless of the gate so the stream position
    # does not depend on the gate outcome
    disp = [(next_uniform(rng, 0.0, max_dx), next_uniform(rng, 0.0, max_dy)) for _ in range(4)]
    if gate >= cfg.perspective_prob:
        return t.copy()

    src = [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)]
    dst = [
        (disp[0][0], disp[0][1]),
        (w - 1 - disp[1][0], disp[1][1]),
        (w - 1 - disp[2][0], h - 1 - disp[2][1]),
        (disp[3][0], h - 1 - disp[3][1]),
    ]
    return warp_perspective(t, src, dst)


def warp_perspective(t: np.ndarray, src_corners, dst_corners) -> np.ndarray:
    """Warp so content at src_corners appears at dst_corners (zero fill)."""
    try:
        back = _solve_homography(dst_corners, src_corners)
    except np.linalg.LinAlgError:
        log.warning("singular perspective system; returning identity")
        return np.asarray(t, dtype=np.float32).copy()
    _, h, w = t.shape
    ty, tx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    denom = back[2, 0] * tx + back[2, 1] * ty + back[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (back[0, 0] * tx + back[0, 1] * ty + back[0, 2]) / denom
        sy = (back[1, 0] * tx + back[1, 1] * ty + back[1, 2]) / denom
    sx = np.where(np.isfinite(sx), sx, -1.0)
    sy = np.where(np.isfinite(sy), sy, -1.0)
    return _sample_bilinear_zero(t, sx, sy)


def random_rotation(t: np.ndarray, cfg: AugmentConfig, rng: RngState) -> np.ndarray:
    """Rotate by a uniform angle about the image center, same canvas.

    Positive angles rotate the content clockwise on screen (y axis points
    down).  Outside samples fill with zero.
    """
    t = np.asarray(t, dtype=np.float32)
    if t.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {t.shape}")
    angle = next_uniform(rng, cfg.rotation_degrees[0], cfg.rotation_degrees[1])
    return rotate(t, angle)


def rotate(t: np.ndarray, degrees: float) -> np.ndarray:
    """Rotation by a fixed angle; helper shared with the oracle tests."""
    _, h, w = t.shape
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ty, tx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx = tx - cx
    dy = ty - cy
    sx = c * dx + s * dy + cx
    sy = -s * dx + c * dy + cy
    return _sample_bilinear_zero(t, sx, sy)


def train_transform(
    img: np.ndarray,
    p: ClaheParams,
    s: NormalizationStats,
    cfg: AugmentConfig,
    rng: RngState,
) -> np.ndarray:
    """Full training pipeline on one grayscale image.

    Order: CLAHE, shorter-side-256 resize, random resized crop, random
    perspective, random rotation, min-max scale, channel replication,
    per-channel standardization.
    """
    enhanced = clahe(img, p)
    t = enhanced.astype(np.float32)[None, :, :]
    t = resize_shorter_side(t, 256)
    t = random_resized_crop(t, cfg, rng)
    t = random_perspective(t, cfg, rng)
    t = random_rotation(t, cfg, rng)
    t = minmax_scale(t)
    t = replicate_channels(t)
    return channel_normalize(t, s)
