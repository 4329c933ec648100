"""Declarative construction of the segmentation networks.

Networks are DAGs of LayerSpec records: the classic encoder-decoder
baseline, the three multiscale block variants (parallel multi-kernel bank,
chained 3x3 with concatenation, factorized 3x1/1x3), the compact patch
classifier, plus exact parameter counting and a line-oriented text
serialization.

Every conv and transpose conv is immediately followed by batch norm, then
relu (the final 1x1 output conv feeds sigmoid instead). Blocks end with a
1x1 projection so each block's declared filter number is its output width.
"""

from dataclasses import dataclass
from enum import Enum

INPUT_LAYER = "input"

UNET_WIDTHS = (64, 128, 256, 512, 1024)
MU_NET_WIDTHS = (16, 32, 64, 128, 256)

_KINDS = ("input", "conv", "bn", "relu", "maxpool", "upconv", "concat",
          "sigmoid", "softmax", "dense")


class BlockVariant(Enum):
    BLOCK_I = "b1"
    BLOCK_II = "b2"
    BLOCK_III = "b3"


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    kernel: tuple | None = None  # (kH, kW) for conv/upconv
    filters: int | None = None   # output channels (conv/upconv/dense/input)
    inputs: tuple = ()


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple          # topologically ordered, starts with the input layer
    width_schedule: tuple
    depth: int
    skip_pairs: tuple      # (encoder output name, decoder concat name)

    @property
    def output(self):
        return self.layers[-1].name

    def layer(self, name):
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)


def _conv_unit(layers, prefix, kernel, filters, src, final_relu=True):
    layers.append(LayerSpec(prefix, "conv", kernel, filters, (src,)))
    layers.append(LayerSpec(prefix + "_bn", "bn", None, None, (prefix,)))
    if final_relu:
        layers.append(LayerSpec(prefix + "_relu", "relu", None, None, (prefix + "_bn",)))
        return prefix + "_relu"
    return prefix + "_bn"


def _block_layers(variant, filters, prefix, src):
    """Append one multiscale block; returns the block output layer name."""
    layers = []
    if variant is BlockVariant.BLOCK_I:
        branch_outs = []
        for k in (1, 3, 5, 7):
            branch_outs.append(
                _conv_unit(layers, f"{prefix}_k{k}", (k, k), filters, src)
            )
        layers.append(LayerSpec(f"{prefix}_cat", "concat", None, None, tuple(branch_outs)))
        tip = f"{prefix}_cat"
    elif variant is BlockVariant.BLOCK_II:
        unit_outs = []
        tip = src
        for u in (1, 2, 3):
            tip = _conv_unit(layers, f"{prefix}_u{u}", (3, 3), filters, tip)
            unit_outs.append(tip)
        layers.append(LayerSpec(f"{prefix}_cat", "concat", None, None, tuple(unit_outs)))
        tip = f"{prefix}_cat"
    elif variant is BlockVariant.BLOCK_III:
        unit_outs = []
        tip = src
        for u in (1, 2, 3):
            tip = _conv_unit(layers, f"{prefix}_u{u}a", (3, 1), filters, tip)
            tip = _conv_unit(layers, f"{prefix}_u{u}b", (1, 3), filters, tip)
            unit_outs.append(tip)
        layers.append(LayerSpec(f"{prefix}_cat", "concat", None, None, tuple(unit_outs)))
        tip = f"{prefix}_cat"
    else:
        raise ValueError(f"unknown block variant: {variant!r}")
    out = _conv_unit(layers, f"{prefix}_proj", (1, 1), filters, tip)
    return layers, out


def build_block(variant, in_channels, filters):
    """One multiscale block as a standalone spec (input layer included)."""
    if not isinstance(variant, BlockVariant):
        raise ValueError(f"unknown block variant: {variant!r}")
    if in_channels < 1 or filters < 1:
        raise ValueError("in_channels and filters must be >= 1")
    layers = [LayerSpec(INPUT_LAYER, "input", None, in_channels, ())]
    block, _ = _block_layers(variant, filters, "block", INPUT_LAYER)
    layers.extend(block)
    return NetworkSpec(f"block-{variant.value}", tuple(layers), (filters,), 0, ())


def _check_input_divisible(input_hw, depth):
    if input_hw is None:
        return
    h, w = input_hw
    div = 2 ** depth
    if h % div or w % div:
        raise ValueError(
            f"input {h}x{w} must be divisible by {div} for {depth} pooling levels"
        )


def build_unet(width_schedule=UNET_WIDTHS, in_channels=1, input_hw=None):
    """Classic encoder-decoder net: two 3x3 conv units per level, 2x2 pool
    down, 2x2 transpose conv up, skip concatenation, 1x1 conv + sigmoid."""
    widths = tuple(int(w) for w in width_schedule)
    if len(widths) != 5 or any(w < 1 for w in widths):
        raise ValueError(f"width schedule needs 5 positive entries, got {widths}")
    depth = 4
    _check_input_divisible(input_hw, depth)
    layers = [LayerSpec(INPUT_LAYER, "input", None, in_channels, ())]
    skips = []
    tip = INPUT_LAYER
    for lvl in range(depth):
        tip = _conv_unit(layers, f"enc{lvl + 1}_c1", (3, 3), widths[lvl], tip)
        tip = _conv_unit(layers, f"enc{lvl + 1}_c2", (3, 3), widths[lvl], tip)
        skips.append(tip)
        layers.append(LayerSpec(f"enc{lvl + 1}_pool", "maxpool", None, None, (tip,)))
        tip = f"enc{lvl + 1}_pool"
    tip = _conv_unit(layers, "bot_c1", (3, 3), widths[4], tip)
    tip = _conv_unit(layers, "bot_c2", (3, 3), widths[4], tip)
    skip_pairs = []
    for lvl in reversed(range(depth)):
        up = f"dec{lvl + 1}_up"
        layers.append(LayerSpec(up, "upconv", (2, 2), widths[lvl], (tip,)))
        layers.append(LayerSpec(up + "_bn", "bn", None, None, (up,)))
        layers.append(LayerSpec(up + "_relu", "relu", None, None, (up + "_bn",)))
        cat = f"dec{lvl + 1}_cat"
        layers.append(LayerSpec(cat, "concat", None, None, (skips[lvl], up + "_relu")))
        skip_pairs.append((skips[lvl], cat))
        tip = _conv_unit(layers, f"dec{lvl + 1}_c1", (3, 3), widths[lvl], cat)
        tip = _conv_unit(layers, f"dec{lvl + 1}_c2", (3, 3), widths[lvl], tip)
    layers.append(LayerSpec("out_conv", "conv", (1, 1), 1, (tip,)))
    layers.append(LayerSpec("out_conv_bn", "bn", None, None, ("out_conv",)))
    layers.append(LayerSpec("prob", "sigmoid", None, None, ("out_conv_bn",)))
    return NetworkSpec("unet", tuple(layers), widths, depth, tuple(skip_pairs))


def build_mu_net(variant, width_schedule=MU_NET_WIDTHS, in_channels=1, input_hw=None):
    """Encoder-decoder skeleton with one multiscale block per level.

    Blocks 1-4 encode, 5 is the bottleneck, 6-9 decode; widths pair
    symmetrically (block 1 and block 9 share the first width, and so on).
    """
    if not isinstance(variant, BlockVariant):
        raise ValueError(f"unknown block variant: {variant!r}")
    widths = tuple(int(w) for w in width_schedule)
    if len(widths) != 5 or any(w < 1 for w in widths):
        raise ValueError(f"width schedule needs 5 positive entries, got {widths}")
    depth = 4
    _check_input_divisible(input_hw, depth)
    layers = [LayerSpec(INPUT_LAYER, "input", None, in_channels, ())]
    skips = []
    tip = INPUT_LAYER
    for lvl in range(depth):
        block, tip = _block_layers(variant, widths[lvl], f"block{lvl + 1}", tip)
        layers.extend(block)
        skips.append(tip)
        layers.append(LayerSpec(f"block{lvl + 1}_pool", "maxpool", None, None, (tip,)))
        tip = f"block{lvl + 1}_pool"
    block, tip = _block_layers(variant, widths[4], "block5", tip)
    layers.extend(block)
    skip_pairs = []
    for i, lvl in enumerate(reversed(range(depth))):
        bnum = 6 + i
        up = f"block{bnum}_up"
        layers.append(LayerSpec(up, "upconv", (2, 2), widths[lvl], (tip,)))
        layers.append(LayerSpec(up + "_bn", "bn", None, None, (up,)))
        layers.append(LayerSpec(up + "_relu", "relu", None, None, (up + "_bn",)))
        cat = f"block{bnum}_skipcat"
        layers.append(LayerSpec(cat, "concat", None, None, (skips[lvl], up + "_relu")))
        skip_pairs.append((skips[lvl], cat))
        block, tip = _block_layers(variant, widths[lvl], f"block{bnum}", cat)
        layers.extend(block)
    layers.append(LayerSpec("out_conv", "conv", (1, 1), 1, (tip,)))
    layers.append(LayerSpec("out_conv_bn", "bn", None, None, ("out_conv",)))
    layers.append(LayerSpec("prob", "sigmoid", None, None, ("out_conv_bn",)))
    return NetworkSpec(f"mu-net-{variant.value}", tuple(layers), widths, depth,
                       tuple(skip_pairs))


def build_patch_classifier(patch_size=8, in_channels=1):
    """Compact patch net: two conv+bn+relu stages (8 then 16 filters), one
    2x2 max pool, dense head to 2 logits, softmax."""
    if patch_size < 4:
        raise ValueError(f"patch size must be >= 4, got {patch_size}")
    if patch_size % 2:
        raise ValueError(f"patch size must be even, got {patch_size}")
    layers = [LayerSpec(INPUT_LAYER, "input", None, in_channels, ())]
    tip = _conv_unit(layers, "c1", (3, 3), 8, INPUT_LAYER)
    tip = _conv_unit(layers, "c2", (3, 3), 16, tip)
    layers.append(LayerSpec("pool", "maxpool", None, None, (tip,)))
    layers.append(LayerSpec("fc", "dense", None, 2, ("pool",)))
    layers.append(LayerSpec("probs", "softmax", None, None, ("fc",)))
    return NetworkSpec("patch-classifier", tuple(layers), (8, 16), 1, ())


# ---------------------------------------------------------------------------
# shape propagation and validation

def propagate_channels(spec, input_hw=None):
    """Walk the DAG computing per-layer (channels, H, W); raises on any
    inconsistency (unresolved input, concat mismatch, odd pool dims)."""
    shapes = {}
    for layer in spec.layers:
        if layer.kind == "input":
            if layer.filters is None:
                raise ValueError(f"input layer {layer.name!r} needs a channel count")
            shapes[layer.name] = (layer.filters,) + (tuple(input_hw) if input_hw else (None, None))
            continue
        for src in layer.inputs:
            if src not in shapes:
                raise ValueError(f"layer {layer.name!r} consumes unknown layer {src!r}")
        srcs = [shapes[s] for s in layer.inputs]
        c, h, w = srcs[0]
        if layer.kind in ("conv", "upconv"):
            c = layer.filters
            if layer.kind == "upconv" and h is not None:
                h, w = 2 * h, 2 * w
        elif layer.kind == "maxpool":
            if h is not None and (h % 2 or w % 2):
                raise ValueError(f"maxpool {layer.name!r} needs even dims, got {h}x{w}")
            if h is not None:
                h, w = h // 2, w // 2
        elif layer.kind == "concat":
            for s in srcs[1:]:
                if s[1:] != srcs[0][1:]:
                    raise ValueError(
                        f"concat {layer.name!r} operands disagree on spatial dims: "
                        f"{srcs[0][1:]} vs {s[1:]}"
                    )
            c = sum(s[0] for s in srcs)
        elif layer.kind == "dense":
            c, h, w = layer.filters, None, None
        elif layer.kind in ("bn", "relu", "sigmoid", "softmax"):
            pass
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r} in {layer.name!r}")
        shapes[layer.name] = (c, h, w)
    return shapes


# ---------------------------------------------------------------------------
# parameter counting

@dataclass(frozen=True)
class ParameterCount:
    rows: tuple          # (name, kind, count) for every parameterized layer
    trainable: int
    non_trainable: int

    @property
    def total(self):
        return self.trainable + self.non_trainable


def count_parameters(spec, input_hw=None):
    """Exact per-layer and total parameter counts.

    conv/upconv: F*(kH*kW*C + 1); bn: 2C trainable + 2C running;
    dense: out*(in + 1).
    """
    shapes = propagate_channels(spec, input_hw)
    rows = []
    trainable = 0
    non_trainable = 0
    for layer in spec.layers:
        if layer.kind in ("conv", "upconv"):
            c_in = shapes[layer.inputs[0]][0]
            kh, kw = layer.kernel
            n = layer.filters * (kh * kw * c_in + 1)
            rows.append((layer.name, layer.kind, n))
            trainable += n
        elif layer.kind == "bn":
            c = shapes[layer.inputs[0]][0]
            rows.append((layer.name, "bn", 4 * c))
            trainable += 2 * c
            non_trainable += 2 * c
        elif layer.kind == "dense":
            c, h, w = shapes[layer.inputs[0]]
            if h is None:
                raise ValueError(
                    f"dense layer {layer.name!r} needs a known input extent; "
                    f"pass input_hw to count_parameters"
                )
            n = layer.filters * (c * h * w + 1)
            rows.append((layer.name, "dense", n))
            trainable += n
    return ParameterCount(tuple(rows), trainable, non_trainable)


# ---------------------------------------------------------------------------
# text serialization

def to_text(spec):
    """One layer per line: ``name kind kHxkW filters inputs=a,b`` with ``-``
    for fields a kind does not use; header comments carry the metadata."""
    lines = [
        "# mscc-netspec v1",
        f"# name {spec.name}",
        f"# widths {','.join(str(w) for w in spec.width_schedule)}",
        f"# depth {spec.depth}",
        f"# skips {';'.join(f'{a}:{b}' for a, b in spec.skip_pairs)}",
    ]
    for l in spec.layers:
        kern = f"{l.kernel[0]}x{l.kernel[1]}" if l.kernel else "-"
        filt = str(l.filters) if l.filters is not None else "-"
        ins = ",".join(l.inputs) if l.inputs else "-"
        lines.append(f"{l.name} {l.kind} {kern} {filt} inputs={ins}")
    return "\n".join(lines) + "\n"


def from_text(text):
    meta = {"name": "network", "widths": "", "depth": "0", "skips": ""}
    layers = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].strip().split(None, 1)
            if len(parts) == 2 and parts[0] in meta:
                meta[parts[0]] = parts[1]
            continue
        fields = line.split()
        if len(fields) != 5 or not fields[4].startswith("inputs="):
            raise ValueError(f"malformed layer line: {raw!r}")
        name, kind, kern, filt = fields[:4]
        if kind not in _KINDS:
            raise ValueError(f"unknown layer kind {kind!r} in line: {raw!r}")
        kernel = None
        if kern != "-":
            kh, kw = kern.split("x")
            kernel = (int(kh), int(kw))
        filters = None if filt == "-" else int(filt)
        ins = fields[4][len("inputs="):]
        inputs = () if ins == "-" else tuple(ins.split(","))
        layers.append(LayerSpec(name, kind, kernel, filters, inputs))
    widths = tuple(int(w) for w in meta["widths"].split(",") if w)
    skips = tuple(tuple(p.split(":")) for p in meta["skips"].split(";") if p)
    spec = NetworkSpec(meta["name"], tuple(layers), widths, int(meta["depth"]), skips)
    propagate_channels(spec)  # validates the DAG
    return spec


def scaled_widths(widths, scale):
    out = tuple(max(1, int(round(w * scale))) for w in widths)
    return out
