"""Shared fixtures and independent reference implementations (oracles).

The oracles here are written straight from the documented conventions with
plain scalar loops; they stay independent of the library code paths they
check.
"""

import io
import math

import numpy as np
import pytest
from PIL import Image

from cxrkit.nn import GraphNode, ModelGraph, WeightStore


# --- encoding helpers --------------------------------------------------------

def png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def jpeg_bytes(arr: np.ndarray, quality: int = 95) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


# --- SplitMix64 reference ----------------------------------------------------

def ref_splitmix64(seed: int):
    """Generator of raw SplitMix64 outputs, per the published constants."""
    mask = (1 << 64) - 1
    state = seed & mask
    while True:
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        yield z ^ (z >> 31)


def ref_uniform(gen, lo: float, hi: float) -> float:
    u = (next(gen) >> 11) * 2.0 ** -53
    if lo == hi:
        return lo
    return lo + u * (hi - lo)


def ref_index(gen, n: int) -> int:
    return min(n - 1, int(ref_uniform(gen, 0.0, float(n))))


# --- CLAHE scalar oracle -----------------------------------------------------

def reference_clahe(img: np.ndarray, clip_limit: float, grid: tuple) -> np.ndarray:
    """Naive scalar CLAHE with the pinned conventions.

    Tiles absorb remainders at the far edges; clip level is
    max(1, int(clip_limit * area / 256)); excess is redistributed uniformly
    once with the residue going one unit per bin from bin 0; mapping is
    round half-up of (cdf - cdf_min) * 255 / (area - cdf_min); pixels blend
    the four surrounding tile mappings bilinearly with clamping outside the
    tile-center lattice.
    """
    h, w = img.shape
    tx, ty = grid

    def spans(extent, tiles):
        base = extent // tiles
        return [(i * base, (i + 1) * base if i < tiles - 1 else extent) for i in range(tiles)]

    xspans = spans(w, tx)
    yspans = spans(h, ty)

    mappings = [[None] * tx for _ in range(ty)]
    for j, (y0, y1) in enumerate(yspans):
        for i, (x0, x1) in enumerate(xspans):
            hist = [0] * 256
            for y in range(y0, y1):
                for x in range(x0, x1):
                    hist[int(img[y, x])] += 1
            area = (y1 - y0) * (x1 - x0)
            limit = max(1, int(clip_limit * area / 256))
            excess = 0
            for v in range(256):
                if hist[v] > limit:
                    excess += hist[v] - limit
                    hist[v] = limit
            inc = excess // 256
            res = excess % 256
            for v in range(256):
                hist[v] += inc
            for v in range(res):
                hist[v] += 1
            cdf = 0
            cdfs = []
            first_nonzero_cdf = None
            for v in range(256):
                cdf += hist[v]
                cdfs.append(cdf)
                if first_nonzero_cdf is None and hist[v] > 0:
                    first_nonzero_cdf = cdf
            if area == first_nonzero_cdf:
                mapping = list(range(256))
            else:
                mapping = [
                    min(255, max(0, math.floor((cdfs[v] - first_nonzero_cdf) * 255.0
                                               / (area - first_nonzero_cdf) + 0.5)))
                    for v in range(256)
                ]
            mappings[j][i] = mapping

    cy = [(y0 + y1 - 1) / 2.0 for y0, y1 in yspans]
    cx = [(x0 + x1 - 1) / 2.0 for x0, x1 in xspans]

    def bracket(coord, centers):
        if coord <= centers[0]:
            return 0, 0, 0.0
        if coord >= centers[-1]:
            return len(centers) - 1, len(centers) - 1, 0.0
        k = 0
        while centers[k + 1] < coord:
            k += 1
        return k, k + 1, (coord - centers[k]) / (centers[k + 1] - centers[k])

    out = np.zeros_like(img)
    for y in range(h):
        j0, j1, fy = bracket(float(y), cy)
        for x in range(w):
            i0, i1, fx = bracket(float(x), cx)
            v = int(img[y, x])
            top = (1 - fx) * mappings[j0][i0][v] + fx * mappings[j0][i1][v]
            bot = (1 - fx) * mappings[j1][i0][v] + fx * mappings[j1][i1][v]
            val = (1 - fy) * top + fy * bot
            out[y, x] = min(255, max(0, math.floor(val + 0.5)))
    return out


# --- naive operator oracles --------------------------------------------------

def conv2d_oracle(x, w, b=None, stride=1, padding=0, groups=1) -> np.ndarray:
    """Six-loop cross-correlation in float64."""
    n, c, h, wd = x.shape
    oc, cg, kh, kw = w.shape
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (wd + 2 * padding - kw) // stride + 1
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    out = np.zeros((n, oc, out_h, out_w), dtype=np.float64)
    oc_per_group = oc // groups
    for ni in range(n):
        for oi in range(oc):
            g = oi // oc_per_group
            for yi in range(out_h):
                for xi in range(out_w):
                    acc = 0.0
                    for ci in range(cg):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += (xp[ni, g * cg + ci, yi * stride + ky, xi * stride + kx]
                                        * float(w[oi, ci, ky, kx]))
                    if b is not None:
                        acc += float(b[oi])
                    out[ni, oi, yi, xi] = acc
    return out.astype(np.float32)


def maxpool_oracle(x, kernel, stride, padding=0) -> np.ndarray:
    n, c, h, w = x.shape
    out_h = (h + 2 * padding - kernel) // stride + 1
    out_w = (w + 2 * padding - kernel) // stride + 1
    out = np.zeros((n, c, out_h, out_w), dtype=np.float32)
    for ni in range(n):
        for ci in range(c):
            for yi in range(out_h):
                for xi in range(out_w):
                    best = -math.inf
                    for ky in range(kernel):
                        for kx in range(kernel):
                            y = yi * stride + ky - padding
                            x2 = xi * stride + kx - padding
                            if 0 <= y < h and 0 <= x2 < w:
                                best = max(best, float(x[ni, ci, y, x2]))
                    out[ni, ci, yi, xi] = best
    return out


def batchnorm_oracle(x, gamma, beta, mean, var, eps) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for ni in range(n):
        for ci in range(c):
            for yi in range(h):
                for xi in range(w):
                    out[ni, ci, yi, xi] = (float(x[ni, ci, yi, xi]) - float(mean[ci])) \
                        / math.sqrt(float(var[ci]) + eps) * float(gamma[ci]) + float(beta[ci])
    return out.astype(np.float32)


def layernorm_oracle(x, gamma, beta, eps) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for ni in range(n):
        for yi in range(h):
            for xi in range(w):
                vals = [float(x[ni, ci, yi, xi]) for ci in range(c)]
                mu = sum(vals) / c
                var = sum((v - mu) ** 2 for v in vals) / c
                for ci in range(c):
                    out[ni, ci, yi, xi] = (vals[ci] - mu) / math.sqrt(var + eps) \
                        * float(gamma[ci]) + float(beta[ci])
    return out.astype(np.float32)


# --- toy networks ------------------------------------------------------------

def tiny_gap_net(num_channels: int = 2, num_classes: int = 4, seed: int = 5):
    """conv(3->K, 3x3) -> relu -> gap -> linear(K->classes), random weights.

    Input shape 3x14x14 keeps every forward pass cheap.
    """
    nodes = [
        GraphNode(id="conv", op="conv2d", inputs=["input"],
                  attrs={"kernel": (3, 3), "stride": 2, "padding": 1,
                         "groups": 1, "out_channels": num_channels},
                  weights=["conv.weight", "conv.bias"]),
        GraphNode(id="act", op="relu", inputs=["conv"]),
        GraphNode(id="gap", op="global_avg_pool", inputs=["act"]),
        GraphNode(id="fc", op="linear", inputs=["gap"],
                  attrs={"in_features": num_channels, "out_features": num_classes},
                  weights=["fc.weight", "fc.bias"]),
    ]
    g = ModelGraph(nodes=nodes, output_node="fc", input_shape=(3, 14, 14),
                   class_labels=["normal", "bacteria", "virus", "mycoplasma"])
    rng = np.random.default_rng(seed)
    store = WeightStore(tensors={
        "conv.weight": rng.normal(0, 0.5, (num_channels, 3, 3, 3)).astype(np.float32),
        "conv.bias": rng.normal(0, 0.1, num_channels).astype(np.float32),
        "fc.weight": rng.normal(0, 0.5, (num_classes, num_channels)).astype(np.float32),
        "fc.bias": rng.normal(0, 0.1, num_classes).astype(np.float32),
    }, architecture="toynet", class_labels=list(g.class_labels))
    return g, store


def service_toy_net(num_channels: int = 2, seed: int = 15):
    """GAP-head toy net over the full 3x224x224 service input: one 32x32
    stride-32 conv keeps forward passes around a millisecond."""
    nodes = [
        GraphNode(id="conv", op="conv2d", inputs=["input"],
                  attrs={"kernel": (32, 32), "stride": 32, "padding": 0,
                         "groups": 1, "out_channels": num_channels},
                  weights=["conv.weight", "conv.bias"]),
        GraphNode(id="act", op="relu", inputs=["conv"]),
        GraphNode(id="gap", op="global_avg_pool", inputs=["act"]),
        GraphNode(id="fc", op="linear", inputs=["gap"],
                  attrs={"in_features": num_channels, "out_features": 4},
                  weights=["fc.weight", "fc.bias"]),
    ]
    g = ModelGraph(nodes=nodes, output_node="fc", input_shape=(3, 224, 224),
                   class_labels=["normal", "bacteria", "virus", "mycoplasma"])
    rng = np.random.default_rng(seed)
    store = WeightStore(tensors={
        "conv.weight": rng.normal(0, 0.05, (num_channels, 3, 32, 32)).astype(np.float32),
        "conv.bias": rng.normal(0, 0.1, num_channels).astype(np.float32),
        "fc.weight": rng.normal(0, 0.8, (4, num_channels)).astype(np.float32),
        "fc.bias": rng.normal(0, 0.2, 4).astype(np.float32),
    }, architecture="toynet", class_labels=list(g.class_labels))
    return g, store


@pytest.fixture(scope="session")
def toy_model():
    return tiny_gap_net()


@pytest.fixture(scope="session")
def cxr_image() -> np.ndarray:
    """Synthetic 512x640 chest-film-like grayscale image, deterministic."""
    rng = np.random.default_rng(2024)
    yy, xx = np.mgrid[0:512, 0:640]
    lungs = 120 * np.exp(-(((xx - 210) / 120.0) ** 2 + ((yy - 260) / 160.0) ** 2))
    lungs += 120 * np.exp(-(((xx - 430) / 120.0) ** 2 + ((yy - 260) / 160.0) ** 2))
    noise = rng.normal(0, 12, size=(512, 640))
    img = np.clip(30 + lungs + noise, 0, 255)
    return img.astype(np.uint8)
