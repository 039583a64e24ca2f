"""The convolutional feature network and its forward/backward machinery.

A NetworkModel bundles the fixed layer stack with one set of loaded conv
parameters, the preprocessing constants from the weight file and a
pooling choice.  Images enter as RGB arrays in [0, 1]; preprocessing
scales to [0, 255], reorders channels if the weights expect BGR and
subtracts the stored channel means.  The model is immutable after
construction and safe to share across threads: forward and backward
passes allocate all their scratch space locally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import architecture as arch
from . import tensor_nn as tn
from .errors import ConfigurationError, NumericError, UnknownLayerError
from .weights_io import WeightFile, read_weight_file


@dataclass(frozen=True)
class NetworkModel:
    conv_specs: dict[str, tn.ConvSpec]
    channel_means: np.ndarray  # (3,), in the network's channel order
    channel_order: str  # "rgb" or "bgr"
    pooling: str = "average"
    _pool_spec: tn.PoolSpec = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if set(self.conv_specs) != set(arch.CONV_NAMES):
            raise ConfigurationError("conv parameter set does not match the architecture")
        for name, spec in self.conv_specs.items():
            cin, cout = arch.CONV_CHANNELS[name]
            if (spec.in_channels, spec.out_channels) != (cin, cout):
                raise ConfigurationError(
                    f"{name} has channels {spec.in_channels}->{spec.out_channels}, "
                    f"architecture requires {cin}->{cout}"
                )
        object.__setattr__(self, "_pool_spec", tn.PoolSpec(self.pooling))

    # -- construction -------------------------------------------------

    @classmethod
    def from_weight_file(cls, weights: WeightFile, pooling: str = "average") -> "NetworkModel":
        specs = {
            name: tn.ConvSpec(
                weights=weights.entries[name + ".weight"],
                bias=weights.entries[name + ".bias"],
            )
            for name in arch.CONV_NAMES
        }
        return cls(
            conv_specs=specs,
            channel_means=np.asarray(weights.channel_means, dtype=np.float32),
            channel_order=weights.channel_order,
            pooling=pooling,
        )

    # -- architecture queries -----------------------------------------

    @property
    def layer_names(self) -> tuple[str, ...]:
        return arch.LAYER_NAMES

    def receptive_field(self, layer: str) -> arch.ReceptiveField:
        try:
            return arch.RECEPTIVE_FIELDS[layer]
        except KeyError:
            raise UnknownLayerError(f"no layer named {layer!r}") from None

    def layer_size(self, layer: str, image_hw: tuple[int, int]) -> tuple[int, int]:
        return arch.spatial_size(layer, image_hw)

    # -- image <-> network tensor -------------------------------------

    def preprocess(self, image: np.ndarray) -> np.ndarray:
        """RGB image in [0, 1], shape (3, H, W) -> network input tensor.

        The dtype is preserved so float64 images give a float64 network
        pass.  Values outside [0, 1] are accepted (the optimiser roams
        outside the box); non-finite values are not.
        """
        if image.ndim != 3 or image.shape[0] != 3:
            raise ConfigurationError(f"image must have shape (3, H, W), got {image.shape}")
        if not np.all(np.isfinite(image)):
            raise NumericError("image contains non-finite values")
        x = image * np.asarray(255.0, dtype=image.dtype)
        if self.channel_order == "bgr":
            x = x[::-1]
        return x - self.channel_means.astype(image.dtype)[:, None, None]

    def deprocess(self, tensor: np.ndarray) -> np.ndarray:
        """Inverse of preprocess.  Does not clip; callers clip at export."""
        if tensor.ndim != 3 or tensor.shape[0] != 3:
            raise ConfigurationError(f"tensor must have shape (3, H, W), got {tensor.shape}")
        x = tensor + self.channel_means.astype(tensor.dtype)[:, None, None]
        if self.channel_order == "bgr":
            x = x[::-1]
        return x / np.asarray(255.0, dtype=tensor.dtype)

    # -- forward / backward -------------------------------------------

    def _deepest_index(self, capture: Iterable[str]) -> int:
        deepest = -1
        for name in capture:
            if name == "input":
                continue
            if name not in arch.RECEPTIVE_FIELDS:
                raise UnknownLayerError(f"no layer named {name!r}")
            deepest = max(deepest, arch.LAYER_NAMES.index(name))
        return deepest

    def _apply(self, layer: arch.LayerDef, x: np.ndarray) -> np.ndarray:
        if layer.kind == "conv":
            return tn.conv2d_forward(x, self.conv_specs[layer.name])
        if layer.kind == "relu":
            return tn.relu_forward(x)
        return tn.pool_forward(x, self._pool_spec)

    def _apply_backward(self, layer: arch.LayerDef, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        if layer.kind == "conv":
            return tn.conv2d_backward(x, self.conv_specs[layer.name], g)
        if layer.kind == "relu":
            return tn.relu_backward(x, g)
        return tn.pool_backward(x, self._pool_spec, g)

    def forward(self, tensor: np.ndarray, capture: Iterable[str]) -> dict[str, np.ndarray]:
        """Run the network and return the responses at the named layers.

        Layer names are raw capture points: 'conv3_1' is the pre-rectifier
        output, 'relu3_1' the rectified one, and 'input' the tensor
        itself.  Only the prefix up to the deepest requested layer runs.
        """
        capture = list(capture)
        acts, _ = self._forward_trace(tensor, capture, keep_inputs=False)
        return acts

    def forward_with_pullback(
        self, tensor: np.ndarray, capture: Iterable[str], *, single_use: bool = False
    ) -> tuple[dict[str, np.ndarray], Callable[[dict[str, np.ndarray]], np.ndarray]]:
        """Forward pass returning activations and a gradient pullback.

        The pullback maps {capture name -> gradient of a scalar with
        respect to that response} to the gradient with respect to the
        input tensor, reusing the stored intermediate inputs.  With
        single_use=True those stored inputs are released as the backward
        pass consumes them, which bounds peak memory on large images but
        limits the pullback to one invocation.
        """
        capture = list(capture)
        acts, trace = self._forward_trace(tensor, capture, keep_inputs=True)
        consumed = False

        def pullback(grads: dict[str, np.ndarray]) -> np.ndarray:
            nonlocal consumed
            if consumed:
                raise ConfigurationError(
                    "this pullback was created single_use and has already run"
                )
            for name in grads:
                if name != "input" and name not in acts:
                    raise ConfigurationError(
                        f"gradient supplied for {name!r} which was not captured"
                    )
            g = None
            for i in range(len(trace) - 1, -1, -1):
                layer, stored = trace[i]
                if layer.kind == "relu":
                    # The rectifier's input is not stored: its backward
                    # mask (input > 0) equals (output > 0), and the output
                    # is the next layer's stored input, or the captured
                    # response when the rectifier ends the trace.
                    stored = trace[i + 1][1] if i + 1 < len(trace) else acts[layer.name]
                inject = grads.get(layer.name)
                if inject is not None:
                    inject = inject.astype(tensor.dtype, copy=False)
                    g = inject if g is None else g + inject
                elif g is None:
                    g = self._zeros_like_output(layer, stored, tensor.dtype)
                g = self._apply_backward(layer, stored, g)
                if single_use and i + 1 < len(trace):
                    trace[i + 1][1] = None
            if single_use:
                consumed = True
            if g is None:
                g = np.zeros_like(tensor)
            if "input" in grads:
                g = g + grads["input"]
            return g.astype(tensor.dtype, copy=False)

        return acts, pullback

    def _zeros_like_output(self, layer: arch.LayerDef, stored: np.ndarray, dtype) -> np.ndarray:
        # Zero gradient shaped like a layer's output, for the rare
        # pullback with no injected gradient at the deepest layer.  For a
        # rectifier `stored` is already its output (see pullback).
        c, h, w = stored.shape
        if layer.kind == "conv":
            return np.zeros((self.conv_specs[layer.name].out_channels, h, w), dtype=dtype)
        if layer.kind == "relu":
            return np.zeros((c, h, w), dtype=dtype)
        return np.zeros((c, h // 2, w // 2), dtype=dtype)

    def _forward_trace(self, tensor: np.ndarray, capture: list[str], keep_inputs: bool):
        if tensor.ndim != 3 or tensor.shape[0] != 3:
            raise ConfigurationError(f"tensor must have shape (3, H, W), got {tensor.shape}")
        deepest = self._deepest_index(capture)
        acts: dict[str, np.ndarray] = {}
        if "input" in capture:
            acts["input"] = tensor
        trace = []
        x = tensor
        for layer in arch.LAYER_SEQUENCE[: deepest + 1]:
            if keep_inputs:
                # Rectifier inputs are recoverable from neighbouring
                # entries, so only conv and pool inputs are kept; this
                # roughly halves what the trace pins in memory.
                trace.append([layer, None if layer.kind == "relu" else x])
            x = self._apply(layer, x)
            if layer.name in capture:
                acts[layer.name] = x
        return acts, trace


def load_model(path, pooling: str = "average") -> NetworkModel:
    """Read a weight file and build the network with the given pooling."""
    return NetworkModel.from_weight_file(read_weight_file(path), pooling=pooling)
