"""Canonical graph builders for the two deployed architectures.

Weight tensor names follow torchvision conventions for ResNet-18
("conv1.weight", "layer2.0.downsample.0.weight", "fc.bias", ...) and a
stem/stages/head scheme for ConvNeXt-Tiny, so converted checkpoints map
one-to-one.  Running statistics of batchnorm nodes are stored but are not
counted as learnable parameters.
"""

from .errors import HeadError
from .imagecore import CLASS_LABELS
from .nn import GraphNode, ModelGraph

RESNET18_WIDTHS = (64, 128, 256, 512)
CONVNEXT_TINY_DEPTHS = (3, 3, 9, 3)
CONVNEXT_TINY_WIDTHS = (96, 192, 384, 768)

BN_EPS = 1e-5
LN_EPS = 1e-6


def _labels(num_classes: int) -> list:
    if num_classes == len(CLASS_LABELS):
        return list(CLASS_LABELS)
    return [f"class_{i}" for i in range(num_classes)]


def _conv(nodes, nid, src, out_c, kernel, stride, padding, groups=1, bias=False):
    weights = [f"{nid}.weight"] + ([f"{nid}.bias"] if bias else [])
    nodes.append(GraphNode(
        id=nid, op="conv2d", inputs=[src],
        attrs={"kernel": (kernel, kernel), "stride": stride, "padding": padding,
               "groups": groups, "out_channels": out_c},
        weights=weights,
    ))
    return nid


def _bn(nodes, nid, src):
    nodes.append(GraphNode(
        id=nid, op="batchnorm", inputs=[src], attrs={"eps": BN_EPS},
        weights=[f"{nid}.weight", f"{nid}.bias", f"{nid}.running_mean", f"{nid}.running_var"],
    ))
    return nid


def _ln(nodes, nid, src):
    nodes.append(GraphNode(
        id=nid, op="layernorm", inputs=[src], attrs={"eps": LN_EPS},
        weights=[f"{nid}.weight", f"{nid}.bias"],
    ))
    return nid


def _simple(nodes, nid, op, src, **attrs):
    nodes.append(GraphNode(id=nid, op=op, inputs=[src], attrs=attrs))
    return nid


def _basic_block(nodes, prefix, src, in_c, out_c, stride):
    """Two 3x3 conv-bn pairs plus the residual add; stride-2 entry blocks
    get a 1x1 projection shortcut."""
    x = _conv(nodes, f"{prefix}.conv1", src, out_c, 3, stride, 1)
    x = _bn(nodes, f"{prefix}.bn1", x)
    x = _simple(nodes, f"{prefix}.relu1", "relu", x)
    x = _conv(nodes, f"{prefix}.conv2", x, out_c, 3, 1, 1)
    x = _bn(nodes, f"{prefix}.bn2", x)
    shortcut = src
    if stride != 1 or in_c != out_c:
        shortcut = _conv(nodes, f"{prefix}.downsample.0", src, out_c, 1, stride, 0)
        shortcut = _bn(nodes, f"{prefix}.downsample.1", shortcut)
    nodes.append(GraphNode(id=f"{prefix}.add", op="add", inputs=[x, shortcut]))
    return _simple(nodes, f"{prefix}.relu2", "relu", f"{prefix}.add")


def build_resnet18(num_classes: int = 4) -> ModelGraph:
    """ResNet-18: 7x7 stem, 4 layers of 2 basic blocks, GAP, linear head."""
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    nodes = []
    x = _conv(nodes, "conv1", "input", 64, 7, 2, 3)
    x = _bn(nodes, "bn1", x)
    x = _simple(nodes, "relu1", "relu", x)
    x = _simple(nodes, "maxpool", "maxpool", x, kernel=3, stride=2, padding=1)
    in_c = 64
    for layer_idx, width in enumerate(RESNET18_WIDTHS, start=1):
        for block_idx in range(2):
            stride = 2 if layer_idx > 1 and block_idx == 0 else 1
            x = _basic_block(nodes, f"layer{layer_idx}.{block_idx}", x, in_c, width, stride)
            in_c = width
    x = _simple(nodes, "gap", "global_avg_pool", x)
    nodes.append(GraphNode(
        id="fc", op="linear", inputs=[x],
        attrs={"in_features": 512, "out_features": num_classes},
        weights=["fc.weight", "fc.bias"],
    ))
    return ModelGraph(nodes=nodes, output_node="fc", input_shape=(3, 224, 224),
                      class_labels=_labels(num_classes))


def _convnext_block(nodes, prefix, src, dim):
    """7x7 depthwise conv, channel layernorm, 4x inverted bottleneck with
    GELU, residual add."""
    x = _conv(nodes, f"{prefix}.dwconv", src, dim, 7, 1, 3, groups=dim, bias=True)
    x = _ln(nodes, f"{prefix}.norm", x)
    x = _conv(nodes, f"{prefix}.pwconv1", x, 4 * dim, 1, 1, 0, bias=True)
    x = _simple(nodes, f"{prefix}.gelu", "gelu", x)
    x = _conv(nodes, f"{prefix}.pwconv2", x, dim, 1, 1, 0, bias=True)
    nodes.append(GraphNode(id=f"{prefix}.add", op="add", inputs=[x, src]))
    return f"{prefix}.add"


def build_convnext_tiny(num_classes: int = 4) -> ModelGraph:
    """ConvNeXt-Tiny: 4x4 patchify stem, stages (3,3,9,3) at widths
    (96,192,384,768) with 2x2 stride-2 downsampling between stages."""
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    nodes = []
    x = _conv(nodes, "stem.conv", "input", CONVNEXT_TINY_WIDTHS[0], 4, 4, 0, bias=True)
    x = _ln(nodes, "stem.norm", x)
    for stage, (depth, dim) in enumerate(zip(CONVNEXT_TINY_DEPTHS, CONVNEXT_TINY_WIDTHS)):
        if stage > 0:
            x = _ln(nodes, f"downsample{stage}.norm", x)
            x = _conv(nodes, f"downsample{stage}.conv", x, dim, 2, 2, 0, bias=True)
        for block in range(depth):
            x = _convnext_block(nodes, f"stages.{stage}.{block}", x, dim)
    x = _ln(nodes, "head.norm", x)
    x = _simple(nodes, "gap", "global_avg_pool", x)
    nodes.append(GraphNode(
        id="head.fc", op="linear", inputs=[x],
        attrs={"in_features": CONVNEXT_TINY_WIDTHS[-1], "out_features": num_classes},
        weights=["head.fc.weight", "head.fc.bias"],
    ))
    return ModelGraph(nodes=nodes, output_node="head.fc", input_shape=(3, 224, 224),
                      class_labels=_labels(num_classes))


BUILDERS = {
    "resnet18": build_resnet18,
    "convnext_tiny": build_convnext_tiny,
}


def build(architecture: str, num_classes: int = 4) -> ModelGraph:
    if architecture not in BUILDERS:
        raise ValueError(f"unknown architecture {architecture!r}; choose from {sorted(BUILDERS)}")
    return BUILDERS[architecture](num_classes)


def replace_head(g: ModelGraph, num_classes: int = 4) -> ModelGraph:
    """Swap the final linear layer for a fresh one with num_classes outputs.

    All other nodes are untouched; class labels reset to the fixed 4-label
    order when num_classes is 4.  Idempotent for a matching head.
    """
    last = g.node(g.output_node)
    if last.op != "linear":
        raise HeadError(f"graph output node {last.id!r} is {last.op}, not linear")
    new_nodes = []
    for node in g.nodes:
        if node.id == last.id:
            attrs = dict(node.attrs)
            attrs["out_features"] = num_classes
            node = GraphNode(id=node.id, op="linear", inputs=list(node.inputs),
                             attrs=attrs, weights=list(node.weights))
        else:
            node = GraphNode(id=node.id, op=node.op, inputs=list(node.inputs),
                             attrs=dict(node.attrs), weights=list(node.weights))
        new_nodes.append(node)
    return ModelGraph(nodes=new_nodes, output_node=g.output_node,
                      input_shape=tuple(g.input_shape), class_labels=_labels(num_classes))
