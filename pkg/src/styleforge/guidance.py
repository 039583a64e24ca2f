"""Propagation of spatial guidance masks to the network's layer grids.

A mask is a (H, W) map in [0, 1] at image resolution marking one region.
Propagation produces one channel per (layer, region) on that layer's
grid.  Two modes exist:

* "simple" follows the network's own downsampling: the mask passes
  through a 2x2 average pool at every pooling stage, so each layer cell
  holds the area fraction of its pixel block inside the region.

* "eroded" starts from the simple channel, binarises it at 0.5 and then
  keeps only cells whose receptive field lies entirely inside the
  region, approximated conservatively by a square minimum filter whose
  half-width is the receptive-field half-width in layer units,
  ceil((size - 1) / (2 * stride)).  Cells outside the surviving core are
  zeroed; positions beyond the image border count as outside.  Thin
  regions can die out entirely at deep layers, which normalisation
  reports as an error.

An optional constant global channel covers everything the region masks
miss (and overlaps them; the statistics tolerate overlap).  Channels are
normalised to unit sum of squares before use in the guided losses, with
the pre-normalisation mass kept for diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import minimum_filter

from . import architecture as arch
from .errors import ConfigurationError, ZeroMassRegionError

GLOBAL_REGION = "global"

_BINARISE_THRESHOLD = 0.5


def erosion_half_width(layer: str) -> int:
    """Receptive-field half-width of a layer in its own grid units."""
    rf = arch.RECEPTIVE_FIELDS[layer]
    return math.ceil((rf.size - 1) / (2 * rf.stride))


def _check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ConfigurationError(f"mask must be a (H, W) array, got shape {mask.shape}")
    if not np.all(np.isfinite(mask)):
        raise ConfigurationError("mask contains non-finite values")
    if mask.min() < 0.0 or mask.max() > 1.0:
        raise ConfigurationError(
            f"mask values must lie in [0, 1], got range "
            f"[{mask.min():.4g}, {mask.max():.4g}]"
        )
    return mask


def _pools_before(layer: str) -> int:
    count = 0
    for step in arch.LAYER_SEQUENCE:
        if step.kind == "pool":
            count += 1
        if step.name == layer:
            return count
    raise ConfigurationError(f"no layer named {layer!r}")


def _downsample_like_network(mask: np.ndarray, n_pools: int) -> np.ndarray:
    out = mask
    for _ in range(n_pools):
        h, w = out.shape
        if h < 2 or w < 2:
            raise ConfigurationError(
                f"mask of size {mask.shape} is too small for the requested layer"
            )
        out = out[: 2 * (h // 2), : 2 * (w // 2)]
        out = out.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return out


def propagate_mask(
    mask: np.ndarray, layers, mode: str = "simple"
) -> dict[str, np.ndarray]:
    """Raw (unnormalised) guidance channels of one mask at the given layers."""
    if mode not in ("simple", "eroded"):
        raise ConfigurationError(f"guidance mode must be 'simple' or 'eroded', got {mode!r}")
    mask = _check_mask(mask)
    out = {}
    for layer in layers:
        if layer not in arch.RECEPTIVE_FIELDS:
            raise ConfigurationError(f"no layer named {layer!r}")
        down = _downsample_like_network(mask, _pools_before(layer))
        if mode == "eroded":
            binary = (down >= _BINARISE_THRESHOLD).astype(np.float64)
            h = erosion_half_width(layer)
            inside = minimum_filter(binary, size=2 * h + 1, mode="constant", cval=0.0)
            down = down * inside
        out[layer] = down
    return out


@dataclass
class GuidanceChannel:
    values: np.ndarray  # (h, w) on the layer grid
    mass: float = 0.0  # sum of squares before normalisation
    normalised: bool = False

    def raw(self) -> np.ndarray:
        """The channel as it was before normalisation."""
        if not self.normalised:
            return self.values
        return self.values * np.sqrt(self.mass)


@dataclass
class GuidancePyramid:
    """Guidance channels for every (style layer, region) pair.

    channels maps layer -> region -> GuidanceChannel; all layers hold the
    same region set.  The pyramid as a whole is either raw or normalised.
    """

    image_size: tuple[int, int]
    layers: tuple[str, ...]
    channels: dict[str, dict[str, GuidanceChannel]] = field(default_factory=dict)
    global_region: str | None = None
    normalised: bool = False

    @property
    def regions(self) -> tuple[str, ...]:
        if not self.layers or not self.channels:
            return ()
        return tuple(sorted(self.channels[self.layers[0]]))

    def channel(self, layer: str, region: str) -> GuidanceChannel:
        try:
            return self.channels[layer][region]
        except KeyError:
            raise ConfigurationError(
                f"no guidance channel for layer {layer!r}, region {region!r}"
            ) from None

    def normalised_values(self, layer: str) -> dict[str, np.ndarray]:
        if not self.normalised:
            raise ConfigurationError("pyramid has not been normalised")
        return {r: ch.values for r, ch in self.channels[layer].items()}

    def raw_values(self, layer: str) -> dict[str, np.ndarray]:
        return {r: ch.raw() for r, ch in self.channels[layer].items()}

    def add_region(self, region: str, layer_channels: dict[str, np.ndarray]) -> None:
        if self.normalised:
            raise ConfigurationError("cannot add regions after normalisation")
        if set(layer_channels) != set(self.layers):
            raise ConfigurationError(
                f"channels cover layers {sorted(layer_channels)}, pyramid has "
                f"{sorted(self.layers)}"
            )
        for layer in self.layers:
            per_layer = self.channels.setdefault(layer, {})
            if region in per_layer:
                raise ConfigurationError(f"region {region!r} already present")
            per_layer[region] = GuidanceChannel(
                values=np.asarray(layer_channels[layer], dtype=np.float64)
            )


def add_global_channel(pyramid: GuidancePyramid) -> None:
    """Add a constant all-ones channel under the reserved region id.

    The global channel covers the whole frame at every layer; it is the
    only channel of an otherwise empty pyramid when a spatial job has no
    region masks at all.
    """
    if pyramid.normalised:
        raise ConfigurationError("cannot add the global channel after normalisation")
    if pyramid.global_region is not None:
        raise ConfigurationError("pyramid already has a global channel")
    for region in pyramid.regions:
        if region == GLOBAL_REGION:
            raise ConfigurationError(
                f"region id {GLOBAL_REGION!r} is reserved for the global channel"
            )
    for layer in pyramid.layers:
        h, w = arch.spatial_size(layer, pyramid.image_size)
        per_layer = pyramid.channels.setdefault(layer, {})
        per_layer[GLOBAL_REGION] = GuidanceChannel(values=np.ones((h, w)))
    pyramid.global_region = GLOBAL_REGION


def normalise_pyramid(pyramid: GuidancePyramid) -> None:
    """Scale every channel to unit sum of squares, keeping its mass.

    Raises ZeroMassRegionError naming the first (layer, region) whose
    channel has vanished, which happens when an eroded region is too
    thin to survive at that layer's receptive-field size.
    """
    if pyramid.normalised:
        return
    for layer in pyramid.layers:
        for region in sorted(pyramid.channels.get(layer, {})):
            ch = pyramid.channels[layer][region]
            mass = float(np.sum(ch.values * ch.values))
            if mass <= 0.0:
                raise ZeroMassRegionError(layer=layer, region=region)
            ch.values = ch.values / np.sqrt(mass)
            ch.mass = mass
            ch.normalised = True
    pyramid.normalised = True


def build_pyramid(
    masks: dict[str, np.ndarray],
    image_size: tuple[int, int],
    layers,
    mode: str = "simple",
    global_channel: bool = False,
    normalise: bool = True,
) -> GuidancePyramid:
    """Propagate region masks, optionally add the global channel, normalise."""
    layers = tuple(layers)
    pyramid = GuidancePyramid(image_size=tuple(image_size), layers=layers)
    for region in sorted(masks):
        mask = np.asarray(masks[region])
        if mask.shape != tuple(image_size):
            raise ConfigurationError(
                f"mask for region {region!r} has shape {mask.shape}, image is {image_size}"
            )
        pyramid.add_region(region, propagate_mask(mask, layers, mode=mode))
    if global_channel:
        add_global_channel(pyramid)
    if not pyramid.regions:
        raise ConfigurationError("guidance needs at least one region or the global channel")
    if normalise:
        normalise_pyramid(pyramid)
    return pyramid
