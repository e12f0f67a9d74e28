"""Deterministic image decoding and the preprocessing kernels of the pipeline.

Conventions used throughout the package:
  * a grayscale image is a uint8 numpy array of shape (H, W)
  * a pipeline tensor is a float32 numpy array of shape (C, H, W)

Interpolation coordinates use half-pixel centers (source = (dst + 0.5) *
in/out - 0.5, clamped), and every rounding step is round-half-up so outputs
are reproducible bit for bit.
"""

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ChannelError, DecodeError, GridError, ShapeError, UnsupportedFormat

CLASS_LABELS = ("normal", "bacteria", "virus", "mycoplasma")

# three-channel normalization constants used by the deployed models
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_JPEG_MAGIC = b"\xff\xd8\xff"


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean and standard deviation for 3-channel standardization."""

    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std must have 3 entries")
        if any(s <= 0 for s in self.std):
            raise ValueError("std entries must be positive")


@dataclass(frozen=True)
class ClaheParams:
    """CLAHE configuration: relative clip factor, tile grid, histogram bins."""

    clip_limit: float = 2.0
    grid: tuple = (8, 8)
    bins: int = 256

    def __post_init__(self):
        if self.clip_limit <= 0:
            raise ValueError("clip_limit must be positive")
        if len(self.grid) != 2 or self.grid[0] < 1 or self.grid[1] < 1:
            raise ValueError("grid must be two integers >= 1")
        if self.bins != 256:
            raise ValueError("bins must be 256 for 8-bit images")


def _round_half_up(x):
    return np.floor(x + 0.5)


def _luma(rgb: np.ndarray) -> np.ndarray:
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(_round_half_up(y), 0, 255).astype(np.uint8)


def decode_image(data: bytes) -> np.ndarray:
    """Decode PNG or JPEG bytes to an 8-bit grayscale (H, W) array.

    Multi-channel inputs collapse through luma = round(0.299R + 0.587G +
    0.114B); 16-bit grayscale rescales by v*255/65535, both rounded half-up.

    Raises UnsupportedFormat for any other container and DecodeError for a
    malformed PNG/JPEG stream.
    """
    if not (data.startswith(_PNG_MAGIC) or data.startswith(_JPEG_MAGIC)):
        raise UnsupportedFormat("only PNG and JPEG containers are supported")
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc

    mode = img.mode
    if mode == "L":
        return np.asarray(img, dtype=np.uint8)
    if mode in ("I", "I;16", "I;16B", "I;16L"):
        arr = np.asarray(img, dtype=np.float64)
        return np.clip(_round_half_up(arr * 255.0 / 65535.0), 0, 255).astype(np.uint8)
    if mode == "LA":
        return np.asarray(img, dtype=np.uint8)[..., 0]
    if mode in ("RGB", "RGBA"):
        return _luma(np.asarray(img, dtype=np.float64)[..., :3])
    # palette / CMYK / YCbCr and friends: let PIL expand to RGB first
    try:
        rgb = img.convert("RGB")
    except Exception as exc:
        raise DecodeError(f"cannot convert mode {mode!r}: {exc}") from exc
    return _luma(np.asarray(rgb, dtype=np.float64))


def minmax_scale(img: np.ndarray) -> np.ndarray:
    """Scale values to [0, 1] by the image-wide min and max.

    Accepts a (H, W) image or a (C, H, W) tensor; the output is always a
    float32 (C, H, W) tensor.  A constant image maps to all zeros.
    """
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3 or arr.size == 0:
        raise ShapeError(f"expected (H, W) or (C, H, W), got {img.shape}")
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / np.float32(hi - lo)


def bilinear_resize(t: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) tensor using half-pixel centers.

    Source coordinates clamp to the valid range, so resizing to the input's
    own size is an exact identity and outputs never leave [min, max] of the
    input.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError("output dimensions must be >= 1")
    t = np.asarray(t, dtype=np.float32)
    if t.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got shape {t.shape}")
    _, in_h, in_w = t.shape
    if (in_h, in_w) == (out_h, out_w):
        return t.copy()

    sy = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5, 0, in_h - 1)
    sx = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5, 0, in_w - 1)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (sy - y0)[None, :, None]
    fx = (sx - x0)[None, None, :]

    src = t.astype(np.float64)
    top = src[:, y0][:, :, x0] * (1 - fx) + src[:, y0][:, :, x1] * fx
    bot = src[:, y1][:, :, x0] * (1 - fx) + src[:, y1][:, :, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def replicate_channels(t: np.ndarray) -> np.ndarray:
    """Duplicate a single-channel tensor into three identical channels."""
    t = np.asarray(t, dtype=np.float32)
    if t.ndim != 3 or t.shape[0] != 1:
        raise ChannelError(f"expected 1 channel, got shape {t.shape}")
    return np.repeat(t, 3, axis=0)


def channel_normalize(t: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Standardize each of the 3 channels: (x - mean_c) / std_c."""
    t = np.asarray(t, dtype=np.float32)
    if t.ndim != 3 or t.shape[0] != 3:
        raise ChannelError(f"expected 3 channels, got shape {t.shape}")
    mean = np.asarray(stats.mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(stats.std, dtype=np.float32).reshape(3, 1, 1)
    return (t - mean) / std


def _tile_spans(extent: int, tiles: int):
    """Start/end offsets of each tile; the last tile absorbs the remainder."""
    base = extent // tiles
    starts = [i * base for i in range(tiles)]
    ends = [(i + 1) * base for i in range(tiles - 1)] + [extent]
    return starts, ends


def clahe_tile_mappings(img: np.ndarray, p: ClaheParams) -> np.ndarray:
    """Per-tile intensity mapping tables, shape (tiles_y, tiles_x, 256).

    Each tile's histogram is clipped at max(1, int(clip_limit * area / bins)),
    the excess is spread uniformly in one pass (integer share to every bin,
    then one unit per bin from bin 0 for the remainder), and the mapping is
    m(v) = round((cdf(v) - cdf_min) * 255 / (area - cdf_min)).
    """
    h, w = img.shape
    tx, ty = p.grid
    if h < ty or w < tx:
        raise GridError(f"image {w}x{h} smaller than grid {tx}x{ty}")
    ys, ye = _tile_spans(h, ty)
    xs, xe = _tile_spans(w, tx)

    maps = np.empty((ty, tx, p.bins), dtype=np.int64)
    for j in range(ty):
        for i in range(tx):
            region = img[ys[j]:ye[j], xs[i]:xe[i]]
            area = region.size
            hist = np.bincount(region.ravel(), minlength=p.bins).astype(np.int64)
            limit = max(1, int(p.clip_limit * area / p.bins))
            excess = int(np.maximum(hist - limit, 0).sum())
            hist = np.minimum(hist, limit)
            hist += excess // p.bins
            hist[: excess % p.bins] += 1
            cdf = np.cumsum(hist)
            nonzero = np.nonzero(hist)[0]
            cdf_min = int(cdf[nonzero[0]])
            if area == cdf_min:
                maps[j, i] = np.arange(p.bins)
            else:
                scaled = (cdf - cdf_min) * 255.0 / (area - cdf_min)
                maps[j, i] = np.clip(_round_half_up(scaled), 0, 255).astype(np.int64)
    return maps


def clahe(img: np.ndarray, p: ClaheParams) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization on an 8-bit image.

    Per-pixel output interpolates bilinearly between the mappings of the four
    surrounding tiles; pixels outside the tile-center lattice clamp to the
    nearest tile mapping.
    """
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ShapeError("clahe expects a (H, W) uint8 image")
    maps = clahe_tile_mappings(img, p)
    h, w = img.shape
    tx, ty = p.grid
    ys, ye = _tile_spans(h, ty)
    xs, xe = _tile_spans(w, tx)
    cy = np.array([(ys[j] + ye[j] - 1) / 2.0 for j in range(ty)])
    cx = np.array([(xs[i] + xe[i] - 1) / 2.0 for i in range(tx)])

    def axis_weights(coords, centers):
        i0 = np.clip(np.searchsorted(centers, coords, side="right") - 1, 0, len(centers) - 1)
        i1 = np.minimum(i0 + 1, len(centers) - 1)
        denom = centers[i1] - centers[i0]
        f = np.where(denom > 0, (coords - centers[i0]) / np.where(denom > 0, denom, 1), 0.0)
        return i0, i1, np.clip(f, 0.0, 1.0)

    j0, j1, fy = axis_weights(np.arange(h, dtype=np.float64), cy)
    i0, i1, fx = axis_weights(np.arange(w, dtype=np.float64), cx)

    v = img.astype(np.intp)
    fy = fy[:, None]
    fx = fx[None, :]
    tl = maps[j0[:, None], i0[None, :], v]
    tr = maps[j0[:, None], i1[None, :], v]
    bl = maps[j1[:, None], i0[None, :], v]
    br = maps[j1[:, None], i1[None, :], v]
    out = (1 - fy) * ((1 - fx) * tl + fx * tr) + fy * ((1 - fx) * bl + fx * br)
    return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)


def resize_shorter_side(t: np.ndarray, target: int) -> np.ndarray:
    """Resize so the shorter spatial side equals target, preserving aspect."""
    _, h, w = t.shape
    if h <= w:
        new_h = target
        new_w = max(1, int(_round_half_up(w * target / h)))
    else:
        new_w = target
        new_h = max(1, int(_round_half_up(h * target / w)))
    return bilinear_resize(t, new_h, new_w)


def center_crop(t: np.ndarray, crop_h: int, crop_w: int) -> np.ndarray:
    _, h, w = t.shape
    if h < crop_h or w < crop_w:
        raise ShapeError(f"cannot crop {crop_h}x{crop_w} from {h}x{w}")
    top = (h - crop_h) // 2
    left = (w - crop_w) // 2
    return t[:, top:top + crop_h, left:left + crop_w].copy()


def inference_preprocess(img: np.ndarray, p: ClaheParams, s: NormalizationStats) -> np.ndarray:
    """Deterministic eval-time pipeline producing the 3x224x224 model input.

    Stages: CLAHE on the raw 8-bit image, shorter-side-256 bilinear resize,
    224x224 center crop, min-max scaling to [0, 1], channel replication, and
    per-channel standardization.
    """
    enhanced = clahe(img, p)
    t = enhanced.astype(np.float32)[None, :, :]
    t = resize_shorter_side(t, 256)
    t = center_crop(t, 224, 224)
    t = minmax_scale(t)
    t = replicate_channels(t)
    return channel_normalize(t, s)
