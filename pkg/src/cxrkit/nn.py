"""Forward-only neural network executor.

Operators take and return float32 arrays in NCHW layout; reductions inside
conv, linear, and pooling accumulate in float64 before storing float32.
Graphs are flat topologically-ordered node lists interpreted by
graph_execute; weights live in a WeightStore loaded from the CXRW container
documented at the bottom of this module.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import FormatError, IntegrityError, MissingWeight, ShapeError

_SQRT2 = np.float64(np.sqrt(2.0))


def _as4d(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW tensor, got shape {x.shape}")
    return x


def conv2d(x, w, b=None, stride=1, padding=0, groups=1) -> np.ndarray:
    """Cross-correlation with zero padding.

    x: (N, C, H, W); w: (OC, C/groups, KH, KW); b: (OC,) or None.
    out_h = (H + 2*padding - KH) // stride + 1, same for width.
    """
    x = _as4d(x)
    w = np.asarray(w, dtype=np.float32)
    n, c, h, wd = x.shape
    if w.ndim != 4:
        raise ShapeError(f"kernel must be 4-d, got {w.shape}")
    oc, cg, kh, kw = w.shape
    if c % groups or oc % groups:
        raise ShapeError(f"channels {c}/{oc} not divisible by groups {groups}")
    if cg != c // groups:
        raise ShapeError(f"kernel expects {cg} channels/group, input has {c // groups}")
    out_h = (h + 2 * padding - kh) // stride + 1
    out_w = (wd + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{wd}")
    if b is not None:
        b = np.asarray(b, dtype=np.float32)
        if b.shape != (oc,):
            raise ShapeError(f"bias shape {b.shape} != ({oc},)")

    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))).astype(np.float64)
    xp = xp.reshape(n, groups, cg, h + 2 * padding, wd + 2 * padding)
    # gather kernel-offset slices: (N, G, C/G, KH, KW, OH, OW)
    cols = np.empty((n, groups, cg, kh, kw, out_h, out_w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j] = xp[:, :, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride]
    cols = cols.reshape(n, groups, cg * kh * kw, out_h * out_w)
    wm = w.astype(np.float64).reshape(groups, oc // groups, cg * kh * kw)
    out = np.matmul(wm, cols)  # (N, G, OC/G, OH*OW)
    out = out.reshape(n, oc, out_h, out_w)
    if b is not None:
        out += b.astype(np.float64)[None, :, None, None]
    return out.astype(np.float32)


def batchnorm(x, gamma, beta, running_mean, running_var, eps=1e-5) -> np.ndarray:
    """Inference-mode batch normalization with frozen statistics."""
    x = _as4d(x)
    c = x.shape[1]
    for name, p in (("gamma", gamma), ("beta", beta), ("mean", running_mean), ("var", running_var)):
        if np.asarray(p).shape != (c,):
            raise ShapeError(f"batchnorm {name} shape {np.asarray(p).shape} != ({c},)")
    scale = (np.asarray(gamma, np.float64) / np.sqrt(np.asarray(running_var, np.float64) + eps))
    shift = np.asarray(beta, np.float64) - np.asarray(running_mean, np.float64) * scale
    out = x.astype(np.float64) * scale[None, :, None, None] + shift[None, :, None, None]
    return out.astype(np.float32)


def layernorm(x, gamma, beta, eps=1e-6) -> np.ndarray:
    """Normalize over the channel dimension independently per spatial site."""
    x = _as4d(x)
    c = x.shape[1]
    if np.asarray(gamma).shape != (c,) or np.asarray(beta).shape != (c,):
        raise ShapeError(f"layernorm affine params must have shape ({c},)")
    xd = x.astype(np.float64)
    mu = xd.mean(axis=1, keepdims=True)
    var = np.square(xd - mu).mean(axis=1, keepdims=True)
    out = (xd - mu) / np.sqrt(var + eps)
    out = out * np.asarray(gamma, np.float64)[None, :, None, None]
    out = out + np.asarray(beta, np.float64)[None, :, None, None]
    return out.astype(np.float32)


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float32), np.float32(0))


def gelu(x) -> np.ndarray:
    """Exact GELU: x * Phi(x) with the erf-based normal CDF."""
    xd = np.asarray(x, dtype=np.float64)
    return (xd * 0.5 * (1.0 + erf(xd / _SQRT2))).astype(np.float32)


def maxpool(x, kernel, stride, padding=0) -> np.ndarray:
    """Window max with -inf padding semantics."""
    x = _as4d(x)
    n, c, h, w = x.shape
    out_h = (h + 2 * padding - kernel) // stride + 1
    out_w = (w + 2 * padding - kernel) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"pool kernel {kernel} exceeds padded extent")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf)
    out = np.full((n, c, out_h, out_w), -np.inf, dtype=np.float32)
    for i in range(kernel):
        for j in range(kernel):
            np.maximum(out, xp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride], out=out)
    return out


def global_avg_pool(x) -> np.ndarray:
    """Mean over all spatial positions per channel; output spatial 1x1."""
    x = _as4d(x)
    return x.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(np.float32)


def linear(x, w, b) -> np.ndarray:
    """y = W x + b on a flattened feature vector (batch-aware)."""
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim == 4:
        x = x.reshape(x.shape[0], -1)
    w = np.asarray(w, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"linear shapes disagree: x {x.shape}, w {w.shape}, b {b.shape}")
    y = (x.astype(np.float64) @ w.astype(np.float64).T + b.astype(np.float64)).astype(np.float32)
    return y[0] if single else y


def softmax(logits) -> np.ndarray:
    """Max-subtracted softmax; rows sum to 1."""
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if single else p


@dataclass
class GraphNode:
    id: str
    op: str
    inputs: list
    attrs: dict = field(default_factory=dict)
    weights: list = field(default_factory=list)


@dataclass
class ModelGraph:
    nodes: list
    output_node: str
    input_shape: tuple = (3, 224, 224)
    class_labels: list = field(default_factory=list)

    def node(self, node_id: str) -> GraphNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def has_node(self, node_id: str) -> bool:
        return any(n.id == node_id for n in self.nodes)


@dataclass
class WeightStore:
    tensors: dict
    architecture: str = ""
    class_labels: list = field(default_factory=list)
    version: int = 1


def _node_output_shape(node: GraphNode, in_shapes: list) -> tuple:
    """Closed-form output shape of one node (batch dim excluded)."""
    a = node.attrs
    c, h, w = in_shapes[0]
    if node.op == "conv2d":
        kh, kw = a["kernel"]
        oh = (h + 2 * a["padding"] - kh) // a["stride"] + 1
        ow = (w + 2 * a["padding"] - kw) // a["stride"] + 1
        return (a["out_channels"], oh, ow)
    if node.op == "maxpool":
        k, s, p = a["kernel"], a["stride"], a["padding"]
        return (c, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)
    if node.op == "global_avg_pool":
        return (c, 1, 1)
    if node.op == "linear":
        return (a["out_features"],)
    if node.op in ("batchnorm", "layernorm", "relu", "gelu", "softmax"):
        return in_shapes[0]
    if node.op == "add":
        if in_shapes[0] != in_shapes[1]:
            raise ShapeError(f"add inputs disagree at {node.id}: {in_shapes}")
        return in_shapes[0]
    raise ShapeError(f"unknown op kind {node.op!r} at node {node.id}")


def infer_shapes(g: ModelGraph) -> dict:
    """Map node id -> output shape (channels-first, no batch dim)."""
    shapes = {"input": tuple(g.input_shape)}
    for node in g.nodes:
        missing = [i for i in node.inputs if i not in shapes]
        if missing:
            raise ShapeError(f"node {node.id} consumes unknown inputs {missing}")
        shapes[node.id] = _node_output_shape(node, [shapes[i] for i in node.inputs])
    return shapes


def _consumers(g: ModelGraph) -> dict:
    counts = {"input": 0}
    for node in g.nodes:
        counts[node.id] = 0
        for src in node.inputs:
            counts[src] = counts.get(src, 0) + 1
    counts[g.output_node] += 1
    return counts


def graph_execute(g: ModelGraph, w: WeightStore, x: np.ndarray, capture=()):
    """Run the graph on x; return (logits, {captured node id: tensor}).

    x may be (C, H, W) or batched (N, C, H, W); logits come back 1-d for an
    unbatched input.  Captured tensors are copies taken as nodes execute.
    """
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(g.input_shape):
        raise ShapeError(f"input shape {x.shape} does not match {g.input_shape}")
    capture = set(capture)
    unknown = [c for c in capture if not g.has_node(c)]
    if unknown:
        raise ShapeError(f"capture ids not in graph: {unknown}")

    def tensor(name, node):
        try:
            return w.tensors[name]
        except KeyError:
            raise MissingWeight(f"node {node.id} references missing tensor {name!r}") from None

    remaining = _consumers(g)
    values = {"input": x}
    activations = {}
    out = None
    for node in g.nodes:
        ins = [values[i] for i in node.inputs]
        a = node.attrs
        try:
            if node.op == "conv2d":
                bias = tensor(node.weights[1], node) if len(node.weights) > 1 else None
                y = conv2d(ins[0], tensor(node.weights[0], node), bias,
                           stride=a["stride"], padding=a["padding"], groups=a["groups"])
            elif node.op == "batchnorm":
                y = batchnorm(ins[0], *(tensor(t, node) for t in node.weights), eps=a.get("eps", 1e-5))
            elif node.op == "layernorm":
                y = layernorm(ins[0], *(tensor(t, node) for t in node.weights), eps=a.get("eps", 1e-6))
            elif node.op == "relu":
                y = relu(ins[0])
            elif node.op == "gelu":
                y = gelu(ins[0])
            elif node.op == "maxpool":
                y = maxpool(ins[0], a["kernel"], a["stride"], a.get("padding", 0))
            elif node.op == "global_avg_pool":
                y = global_avg_pool(ins[0])
            elif node.op == "linear":
                y = linear(ins[0], tensor(node.weights[0], node), tensor(node.weights[1], node))
            elif node.op == "softmax":
                y = softmax(ins[0]).astype(np.float32)
            elif node.op == "add":
                if ins[0].shape != ins[1].shape:
                    raise ShapeError(f"add operands disagree: {ins[0].shape} vs {ins[1].shape}")
                y = ins[0] + ins[1]
            else:
                raise ShapeError(f"unknown op kind {node.op!r}")
        except ShapeError as exc:
            raise ShapeError(f"node {node.id}: {exc}") from None
        values[node.id] = y
        if node.id in capture:
            activations[node.id] = y.copy()
        if node.id == g.output_node:
            out = y
        for src in node.inputs:
            remaining[src] -= 1
            if remaining[src] == 0 and src in values:
                del values[src]
    if out is None:
        raise ShapeError(f"output node {g.output_node!r} never executed")
    return (out[0] if single else out), activations


# parameter tensors per op kind (batchnorm running stats are buffers)
_PARAM_REFS = {"conv2d": None, "linear": None, "batchnorm": 2, "layernorm": 2}


def count_params(g: ModelGraph, w: WeightStore) -> int:
    """Learnable parameter count: conv/linear weights and biases, norm affines."""
    total = 0
    for node in g.nodes:
        if node.op not in _PARAM_REFS:
            continue
        limit = _PARAM_REFS[node.op]
        refs = node.weights if limit is None else node.weights[:limit]
        for name in refs:
            if name not in w.tensors:
                raise MissingWeight(f"node {node.id} references missing tensor {name!r}")
            total += int(np.prod(w.tensors[name].shape))
    return total


def count_flops(g: ModelGraph) -> int:
    """FLOPs at the graph's input shape, one multiply-accumulate = one FLOP.

    conv: out_elems * (in_c/groups) * kh * kw; linear: out * in; norms,
    activations, pooling, and adds count one per output element.
    """
    shapes = infer_shapes(g)
    total = 0
    for node in g.nodes:
        out = shapes[node.id]
        out_elems = int(np.prod(out))
        if node.op == "conv2d":
            a = node.attrs
            in_c = shapes[node.inputs[0]][0]
            total += out_elems * (in_c // a["groups"]) * a["kernel"][0] * a["kernel"][1]
        elif node.op == "linear":
            total += node.attrs["out_features"] * node.attrs["in_features"]
        else:
            total += out_elems
    return total


# --- CXRW weight container ---------------------------------------------------
#
# bytes 0-3   magic "CXRW"
# byte  4     version (1)
# bytes 5-8   little-endian u32 length J of the UTF-8 JSON header
# J bytes     {"architecture": str, "class_labels": [...],
#              "tensors": [{"name", "shape", "offset", "len"}, ...]}
# rest        little-endian float32 blob; offsets are element indices

_MAGIC = b"CXRW"
_VERSION = 1


def save_weights(store: WeightStore, path) -> None:
    """Write the store; round trip through load_weights is bit-exact."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in store.tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "len": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += int(arr.size)
    header = json.dumps(
        {"architecture": store.architecture, "class_labels": list(store.class_labels), "tensors": entries},
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(bytes([_VERSION]))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_weights(path) -> WeightStore:
    """Read and validate a CXRW file.

    Raises FormatError for bad magic/version/header and IntegrityError when
    the tensor table disagrees with the blob or the blob holds non-finite
    values.
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 9 or data[:4] != _MAGIC:
        raise FormatError("not a CXRW file (bad magic)")
    if data[4] != _VERSION:
        raise FormatError(f"unsupported CXRW version {data[4]}")
    (hlen,) = struct.unpack("<I", data[5:9])
    if 9 + hlen > len(data):
        raise IntegrityError("declared header length exceeds file size")
    try:
        header = json.loads(data[9:9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unparseable CXRW header: {exc}") from exc
    blob = data[9 + hlen:]
    if len(blob) % 4:
        raise IntegrityError("blob length is not a multiple of 4 bytes")
    flat = np.frombuffer(blob, dtype="<f4")
    tensors = {}
    for entry in header.get("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        offset, length = int(entry["offset"]), int(entry["len"])
        if length != int(np.prod(shape, dtype=np.int64)):
            raise IntegrityError(f"tensor {name!r}: len {length} != product of shape {shape}")
        if offset < 0 or offset + length > flat.size:
            raise IntegrityError(f"tensor {name!r}: blob shorter than declared offsets")
        arr = flat[offset:offset + length].reshape(shape).copy()
        if not np.isfinite(arr).all():
            raise IntegrityError(f"tensor {name!r} holds non-finite values")
        tensors[name] = arr
    return WeightStore(
        tensors=tensors,
        architecture=header.get("architecture", ""),
        class_labels=list(header.get("class_labels", [])),
        version=_VERSION,
    )
