"""Fixed architecture of the feature network.

The feature extractor is the familiar 19-layer VGG stack truncated after
the rectified conv5_1 response, with the two fully connected stages and
everything past conv5_1 removed because style and content statistics are
only read up to that depth.  This module is the single source of truth
for layer names, channel counts, the expected tensor shapes in a weight
file and the receptive-field geometry of every layer; both the weight
file reader and the network model build from it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import UnknownLayerError

# (conv layer name, output channels) in network order.  Input channels of
# each conv are the previous conv's output channels (3 for the first).
CONV_PLAN = (
    ("conv1_1", 64),
    ("conv1_2", 64),
    ("conv2_1", 128),
    ("conv2_2", 128),
    ("conv3_1", 256),
    ("conv3_2", 256),
    ("conv3_3", 256),
    ("conv3_4", 256),
    ("conv4_1", 512),
    ("conv4_2", 512),
    ("conv4_3", 512),
    ("conv4_4", 512),
    ("conv5_1", 512),
)

_CONVS_PER_BLOCK = (2, 2, 4, 4, 1)


@dataclass(frozen=True)
class LayerDef:
    """One layer of the network: kind is 'conv', 'relu' or 'pool'."""

    name: str
    kind: str


def layer_sequence() -> tuple[LayerDef, ...]:
    """The full layer list in forward order, ending at relu5_1."""
    layers: list[LayerDef] = []
    conv_iter = iter(CONV_PLAN)
    for block, n_convs in enumerate(_CONVS_PER_BLOCK, start=1):
        for _ in range(n_convs):
            name, _channels = next(conv_iter)
            layers.append(LayerDef(name, "conv"))
            layers.append(LayerDef("relu" + name[4:], "relu"))
        if block < 5:
            layers.append(LayerDef(f"pool{block}", "pool"))
    return tuple(layers)


LAYER_SEQUENCE = layer_sequence()
LAYER_NAMES = tuple(layer.name for layer in LAYER_SEQUENCE)
CONV_NAMES = tuple(name for name, _ in CONV_PLAN)


def conv_channels() -> dict[str, tuple[int, int]]:
    """Map conv layer name -> (in_channels, out_channels)."""
    table = {}
    prev = 3
    for name, out in CONV_PLAN:
        table[name] = (prev, out)
        prev = out
    return table


CONV_CHANNELS = conv_channels()

# Expected tensor shapes for every entry of a weight file, in the
# canonical storage order (weight then bias, layers in network order).
EXPECTED_SHAPES: dict[str, tuple[int, ...]] = {}
for _name, (_cin, _cout) in CONV_CHANNELS.items():
    EXPECTED_SHAPES[_name + ".weight"] = (_cout, _cin, 3, 3)
    EXPECTED_SHAPES[_name + ".bias"] = (_cout,)
ENTRY_ORDER = tuple(EXPECTED_SHAPES)


@dataclass(frozen=True)
class ReceptiveField:
    """Input-pixel geometry of one unit of a layer.

    size is the extent in pixels of the input patch a single unit sees,
    stride the pixel step between horizontally adjacent units, and offset
    the (possibly negative) pixel coordinate of the top-left corner of
    unit (0, 0)'s patch.  Negative offsets mean the patch hangs over the
    zero-padded border.
    """

    size: int
    stride: int
    offset: int


def receptive_fields() -> dict[str, ReceptiveField]:
    """Receptive field of every layer, composed layer by layer.

    For a layer with kernel k, stride s and padding p appended to a stack
    with field (r, j, o):  r' = r + (k - 1) * j,  j' = j * s,
    o' = o - p * j.
    """
    fields = {}
    r, j, o = 1, 1, 0
    for layer in LAYER_SEQUENCE:
        if layer.kind == "conv":
            r, o = r + 2 * j, o - j
        elif layer.kind == "pool":
            r, j = r + j, j * 2
        fields[layer.name] = ReceptiveField(size=r, stride=j, offset=o)
    return fields


RECEPTIVE_FIELDS = receptive_fields()


def spatial_size(layer: str, image_hw: tuple[int, int]) -> tuple[int, int]:
    """Spatial grid size of a layer's response for a given input size."""
    if layer == "input":
        return tuple(image_hw)
    if layer not in RECEPTIVE_FIELDS:
        raise UnknownLayerError(f"no layer named {layer!r}")
    h, w = image_hw
    for step in LAYER_SEQUENCE:
        if step.kind == "pool":
            h, w = h // 2, w // 2
        if step.name == layer:
            return h, w
    raise UnknownLayerError(f"no layer named {layer!r}")


def response_layer(layer: str) -> str:
    """Capture point carrying a layer's rectified response.

    Statistics are read after the rectifier, so a conv name maps to its
    relu; relu, pool and 'input' names pass through unchanged.
    """
    if layer == "input":
        return layer
    if layer not in RECEPTIVE_FIELDS:
        raise UnknownLayerError(f"no layer named {layer!r}")
    if layer.startswith("conv"):
        return "relu" + layer[4:]
    return layer


def feature_channels(layer: str) -> int:
    """Number of channels in a layer's response ('input' has 3)."""
    if layer == "input":
        return 3
    if layer not in RECEPTIVE_FIELDS:
        raise UnknownLayerError(f"no layer named {layer!r}")
    if layer.startswith("pool"):
        # A pool layer carries the channels of the conv block it closes.
        block = int(layer[4:])
        last_conv = [n for n in CONV_NAMES if n.startswith(f"conv{block}_")][-1]
        return CONV_CHANNELS[last_conv][1]
    return CONV_CHANNELS["conv" + layer[4:]][1]
