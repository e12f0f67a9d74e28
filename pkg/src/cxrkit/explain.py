"""Class-activation-map machinery: analytic GAP-head weights, Score-CAM
channel scoring, heatmap rendering and color overlays."""

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import HeadError, LayerNotFound, ShapeError
from .imagecore import bilinear_resize, _round_half_up
from .nn import ModelGraph, WeightStore, graph_execute, infer_shapes, softmax


@dataclass
class ActivationStack:
    """One captured feature tensor split by channel: maps is (K, h, w)."""

    layer_id: str
    maps: np.ndarray


@dataclass
class CamWeights:
    target_class: int
    alpha: np.ndarray
    method: str
    layer_id: str = ""


def cam_combine(stack: ActivationStack, weights: CamWeights) -> np.ndarray:
    """ReLU of the weighted channel sum, at the stack's native resolution."""
    maps = np.asarray(stack.maps, dtype=np.float32)
    alpha = np.asarray(weights.alpha, dtype=np.float32)
    if maps.ndim != 3 or alpha.shape != (maps.shape[0],):
        raise ShapeError(f"stack {maps.shape} and alpha {alpha.shape} disagree")
    return np.maximum(np.tensordot(alpha, maps, axes=1), np.float32(0))


def gap_input_layer(g: ModelGraph) -> str:
    """Node id of the feature tensor entering the GAP -> linear head."""
    out = g.node(g.output_node)
    if out.op != "linear":
        raise HeadError(f"output node {out.id!r} is {out.op}, not linear")
    try:
        gap = g.node(out.inputs[0])
    except KeyError:
        raise HeadError(f"linear node {out.id!r} is not fed by a graph node") from None
    if gap.op != "global_avg_pool":
        raise HeadError(f"head is {gap.op} -> linear, need global_avg_pool -> linear")
    return gap.inputs[0]


def gap_head_weights(g: ModelGraph, w: WeightStore, target_class: int) -> CamWeights:
    """Analytic channel weights for a GAP-head network.

    Under GAP -> linear, the class-logit gradient with respect to feature
    map k is exactly head_weight[target_class, k] / (H * W) of the map.
    """
    layer = gap_input_layer(g)
    head_w = w.tensors[g.node(g.output_node).weights[0]]
    c, h, wd = infer_shapes(g)[layer]
    alpha = head_w[target_class].astype(np.float64) / float(h * wd)
    return CamWeights(target_class=target_class, alpha=alpha, method="gap_head", layer_id=layer)


def score_cam_weights(
    g: ModelGraph,
    w: WeightStore,
    input_tensor: np.ndarray,
    layer_id: str,
    target_class: int,
    top_k: int = None,
    batch_size: int = 16,
) -> CamWeights:
    """Score-CAM channel weights: each feature map, upsampled to the input
    resolution and min-max normalized, masks the input by elementwise
    product; the softmax probability of the target class on the masked
    input is that channel's weight.  Constant maps contribute zero.

    top_k restricts scoring to the k channels with the largest activation
    maxima; selected channels always run in ascending channel order so a
    full top_k equals the unrestricted computation exactly.
    """
    if not g.has_node(layer_id):
        raise LayerNotFound(f"layer {layer_id!r} is not a node of the graph")
    x = np.asarray(input_tensor, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"input must be (C, H, W), got {x.shape}")
    _, acts = graph_execute(g, w, x, capture={layer_id})
    maps = acts[layer_id][0] if acts[layer_id].ndim == 4 else acts[layer_id]
    k_total = maps.shape[0]
    if top_k is None:
        selected = np.arange(k_total)
    else:
        if not 1 <= top_k <= k_total:
            raise ValueError(f"top_k must be in [1, {k_total}]")
        order = np.argsort(-maps.reshape(k_total, -1).max(axis=1), kind="stable")
        selected = np.sort(order[:top_k])

    alpha = np.zeros(k_total, dtype=np.float64)
    masks = []
    mask_channels = []
    for k in selected:
        up = bilinear_resize(maps[k][None], x.shape[1], x.shape[2])[0]
        lo, hi = float(up.min()), float(up.max())
        if hi == lo:
            continue
        masks.append(x * ((up - lo) / (hi - lo))[None])
        mask_channels.append(int(k))

    for start in range(0, len(masks), max(1, batch_size)):
        chunk = masks[start:start + max(1, batch_size)]
        logits, _ = graph_execute(g, w, np.stack(chunk), capture=())
        probs = softmax(logits)
        for row, k in enumerate(mask_channels[start:start + max(1, batch_size)]):
            alpha[k] = probs[row, target_class]
    return CamWeights(target_class=target_class, alpha=alpha, method="score_cam", layer_id=layer_id)


def render_heatmap(raw: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upsample, then divide by the max when positive.

    Output values lie in [0, 1]; the max is exactly 1 unless the raw grid
    had no positive mass, in which case the heatmap is identically zero.
    """
    raw = np.asarray(raw, dtype=np.float32)
    if raw.ndim == 2:
        raw = raw[None]
    up = bilinear_resize(raw, out_h, out_w)[0]
    peak = float(up.max())
    if peak <= 0:
        return np.zeros((out_h, out_w), dtype=np.float32)
    return np.clip(up / np.float32(peak), 0.0, 1.0)


# heat colormap: 5 evenly spaced control points, blue -> cyan -> green ->
# yellow -> red, linear in between
_RAMP = np.array([
    [0, 0, 255],
    [0, 255, 255],
    [0, 255, 0],
    [255, 255, 0],
    [255, 0, 0],
], dtype=np.float64)


def heat_colormap(t: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to float RGB via the pinned 5-point ramp."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    seg = np.minimum((t * 4).astype(np.intp), 3)
    frac = t * 4 - seg
    return (1 - frac)[..., None] * _RAMP[seg] + frac[..., None] * _RAMP[seg + 1]


def overlay(heatmap: np.ndarray, img: np.ndarray, alpha: float) -> np.ndarray:
    """Blend the colormapped heatmap over the grayscale image.

    color = (1 - alpha) * gray + alpha * colormap(heat), rounded half-up per
    channel; the image is resized to the heatmap grid first if needed.
    Returns a (H, W, 3) uint8 array.
    """
    heatmap = np.asarray(heatmap, dtype=np.float64)
    gray = np.asarray(img, dtype=np.float64)
    if gray.shape != heatmap.shape:
        gray = bilinear_resize(gray[None].astype(np.float32), *heatmap.shape)[0].astype(np.float64)
    color = heat_colormap(heatmap)
    blended = (1 - alpha) * gray[..., None] + alpha * color
    return np.clip(_round_half_up(blended), 0, 255).astype(np.uint8)


def heatmap_to_png(heatmap: np.ndarray) -> bytes:
    """8-bit grayscale PNG with value = round(255 * h)."""
    arr = np.clip(_round_half_up(np.asarray(heatmap, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def rgb_to_png(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
