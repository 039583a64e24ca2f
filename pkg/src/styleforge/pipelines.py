"""End-to-end synthesis procedures.

Every pipeline follows the same pattern: build loss targets from the
content and style images, assemble a LossProgram, minimise it over the
image tensor and return the result with a full RunReport.  The report's
settings dict echoes every effective parameter.

Pipelines:

* transfer             - plain content + style synthesis.
* transfer_spatial     - per-region style statistics under guidance masks.
* transfer_luminance_preserving - stylise brightness only, keep chroma.
* transfer_color_matched - recolour the style to the content's palette first.
* make_mixed_style     - merge fine statistics of one style onto another's
                         coarse structure (no content image involved).
* transfer_mixed_style - the above followed by a plain transfer.
* transfer_highres     - coarse-to-fine: solve small, upsample, refine.

Degenerate controls reduce exactly: a spatial job with no region masks,
a colour-matched job with the identity transform and a high-resolution
job with reduction factor 1 and zero refinement iterations each produce
bit-for-bit the plain transfer() output for the same seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import color as col
from . import guidance as gd
from . import losses
from .architecture import response_layer
from .errors import ConfigurationError
from .model import NetworkModel
from .optimize import OptimizerConfig, RunReport, minimise
from .tensor_nn import resample_bilinear

DEFAULT_CONTENT_LAYERS = ("conv4_2",)
DEFAULT_STYLE_LAYERS = ("conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1")
DEFAULT_FINE_LAYERS = ("conv1_1", "conv2_1")

MIN_SIDE = 32


@dataclass
class StyleInput:
    """One style image with optional per-region guidance masks."""

    image: np.ndarray
    masks: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class TransferSettings:
    content_layers: tuple[str, ...] = DEFAULT_CONTENT_LAYERS
    style_layers: tuple[str, ...] = DEFAULT_STYLE_LAYERS
    content_weight: float = 1.0
    style_weight: float = 1000.0
    style_layer_weights: dict[str, float] | None = None
    region_weights: dict[str, float] = field(default_factory=dict)
    guidance_mode: str = "eroded"
    spatial_method: str = "gram"  # "gram" (per-region) or "sum" (stacked)
    add_global_channel: bool | None = None  # None: yes for single-style jobs
    init: str = "content"  # "content" | "noise" | "provided"
    init_image: np.ndarray | None = None
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def layer_weight(self, layer: str) -> float:
        if self.style_layer_weights is None:
            return 1.0 / len(self.style_layers)
        return float(self.style_layer_weights[layer])

    def validated(self) -> "TransferSettings":
        if not self.style_layers:
            raise ConfigurationError("at least one style layer is required")
        if self.style_layer_weights is not None:
            missing = set(self.style_layers) - set(self.style_layer_weights)
            extra = set(self.style_layer_weights) - set(self.style_layers)
            if missing or extra:
                raise ConfigurationError(
                    f"style_layer_weights must cover exactly the style layers; "
                    f"missing {sorted(missing)}, unexpected {sorted(extra)}"
                )
        if self.init not in ("content", "noise", "provided"):
            raise ConfigurationError(
                f"init must be 'content', 'noise' or 'provided', got {self.init!r}"
            )
        if self.init == "provided" and self.init_image is None:
            raise ConfigurationError("init 'provided' needs init_image")
        if self.guidance_mode not in ("simple", "eroded"):
            raise ConfigurationError(
                f"guidance_mode must be 'simple' or 'eroded', got {self.guidance_mode!r}"
            )
        if self.spatial_method not in ("gram", "sum"):
            raise ConfigurationError(
                f"spatial_method must be 'gram' or 'sum', got {self.spatial_method!r}"
            )
        return self


@dataclass
class TransferResult:
    image: np.ndarray
    report: RunReport


# -- objective ---------------------------------------------------------


class StyleObjective:
    """Loss program composed with the network, cached between the
    line search's value-only probes and the gradient evaluation that
    follows acceptance of the same point."""

    def __init__(self, model: NetworkModel, program: losses.LossProgram, dtype=np.float32):
        self.model = model
        self.program = program
        self.dtype = np.dtype(dtype)
        self._cached_x: np.ndarray | None = None
        # [total, by_kind, loss grads, pullback, input gradient]; the last
        # slot is filled on the first gradient request, after which the
        # pullback's stored activations are gone.
        self._cached: list | None = None

    def _evaluate(self, x: np.ndarray) -> list:
        if self._cached_x is not None and np.array_equal(x, self._cached_x):
            return self._cached
        xt = np.ascontiguousarray(x, dtype=self.dtype)
        acts, pull = self.model.forward_with_pullback(
            xt, self.program.capture_layers, single_use=True
        )
        total, by_kind, grads = self.program.evaluate(acts)
        self._cached_x = np.array(x, copy=True)
        self._cached = [total, by_kind, grads, pull, None]
        return self._cached

    def value(self, x):
        total, by_kind = self._evaluate(x)[:2]
        return total, by_kind

    def value_and_grad(self, x):
        entry = self._evaluate(x)
        if entry[4] is None:
            entry[4] = entry[3](entry[2])
            entry[2] = entry[3] = None
        return entry[0], entry[1], entry[4]


# -- shared helpers ----------------------------------------------------


def _check_image(img: np.ndarray, name: str) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ConfigurationError(f"{name} must have shape (3, H, W), got {img.shape}")
    if min(img.shape[1], img.shape[2]) < MIN_SIDE:
        raise ConfigurationError(
            f"{name} must be at least {MIN_SIDE} px per side, got "
            f"{img.shape[1]}x{img.shape[2]}"
        )
    return img


def _fit_to(img: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    if img.shape[1:] == hw:
        return img
    return resample_bilinear(img, hw[0], hw[1])


def _initial_image(content: np.ndarray, settings: TransferSettings) -> np.ndarray:
    if settings.init == "content":
        return content
    if settings.init == "noise":
        rng = np.random.default_rng(settings.seed)
        return rng.uniform(0.0, 1.0, size=content.shape)
    init = np.asarray(settings.init_image)
    if init.shape[1:] != content.shape[1:]:
        init = _fit_to(_check_image(init, "init_image"), content.shape[1:])
    return init


def _settings_echo(settings: TransferSettings, model: NetworkModel, hw, mode: str) -> dict:
    echo = {
        "mode": mode,
        "image_size": [int(hw[0]), int(hw[1])],
        "content_layers": list(settings.content_layers),
        "style_layers": list(settings.style_layers),
        "content_weight": settings.content_weight,
        "style_weight": settings.style_weight,
        "style_layer_weights": {
            layer: settings.layer_weight(layer) for layer in settings.style_layers
        },
        "init": settings.init,
        "seed": settings.seed,
        "pooling": model.pooling,
        "optimizer": asdict(settings.optimizer),
    }
    return echo


def _style_gram_targets(
    model: NetworkModel, style_img: np.ndarray, layers
) -> dict[str, np.ndarray]:
    captures = [response_layer(layer) for layer in layers]
    acts = model.forward(
        model.preprocess(style_img.astype(np.float32, copy=False)), captures
    )
    return {layer: losses.gram_matrix(acts[response_layer(layer)]) for layer in layers}


def _content_terms(
    model: NetworkModel, content: np.ndarray, settings: TransferSettings
) -> list:
    if settings.content_weight == 0.0 or not settings.content_layers:
        return []
    captures = [response_layer(layer) for layer in settings.content_layers]
    acts = model.forward(
        model.preprocess(content.astype(np.float32, copy=False)), captures
    )
    per_layer = settings.content_weight / len(settings.content_layers)
    return [
        losses.ContentTerm(
            layer=layer,
            target=acts[response_layer(layer)].astype(np.float64),
            weight=per_layer,
        )
        for layer in settings.content_layers
    ]


def _run(
    model: NetworkModel,
    program: losses.LossProgram,
    init01: np.ndarray,
    settings: TransferSettings,
    echo: dict,
    callback=None,
) -> TransferResult:
    """The optimisation itself is unconstrained, so intermediate iterates
    may leave the displayable range; the final image is clamped to [0, 1]."""
    objective = StyleObjective(model, program, dtype=np.float32)
    x0 = model.preprocess(init01.astype(np.float32, copy=False))
    x_best, report = minimise(
        objective, x0.astype(np.float64), settings.optimizer, callback=callback
    )
    report.settings = echo
    image = model.deprocess(x_best.astype(np.float32))
    return TransferResult(image=np.clip(image.astype(np.float64), 0.0, 1.0), report=report)


# -- plain transfer ----------------------------------------------------


def build_transfer_program(
    model: NetworkModel,
    content: np.ndarray,
    style: np.ndarray,
    settings: TransferSettings,
) -> losses.LossProgram:
    """Content terms plus one plain style term per style layer."""
    terms = _content_terms(model, content, settings)
    targets = _style_gram_targets(model, style, settings.style_layers)
    for layer in settings.style_layers:
        terms.append(
            losses.StyleTerm(
                layer=layer,
                target=targets[layer],
                weight=settings.style_weight * settings.layer_weight(layer),
            )
        )
    return losses.LossProgram(terms=terms)


def _single_style(styles) -> StyleInput:
    styles = list(styles)
    if len(styles) != 1:
        raise ConfigurationError(
            f"this pipeline takes exactly one style image, got {len(styles)}"
        )
    return styles[0]


def transfer(
    model: NetworkModel,
    content: np.ndarray,
    styles,
    settings: TransferSettings = TransferSettings(),
    callback=None,
) -> TransferResult:
    """Plain stylization: one content image, one style image."""
    settings = settings.validated()
    content = _check_image(content, "content")
    style = _fit_to(_check_image(_single_style(styles).image, "style"), content.shape[1:])
    program = build_transfer_program(model, content, style, settings)
    echo = _settings_echo(settings, model, content.shape[1:], "transfer")
    return _run(model, program, _initial_image(content, settings), settings, echo, callback)


# -- spatial control ---------------------------------------------------


def build_spatial_program(
    model: NetworkModel,
    content: np.ndarray,
    styles: list[StyleInput],
    content_masks: dict[str, np.ndarray],
    settings: TransferSettings,
) -> tuple[losses.LossProgram, dict]:
    """Guided style terms for every style layer plus the content terms.

    Each region id must be defined by exactly one style's mask set and by
    the content-side mask set; the style image carrying a region supplies
    that region's target statistic.  With a single style and no explicit
    choice, a constant global channel is added on both sides to cover
    whatever the masks miss.
    """
    hw = content.shape[1:]
    region_to_style: dict[str, int] = {}
    for idx, style in enumerate(styles):
        for region in style.masks:
            if region in region_to_style:
                raise ConfigurationError(
                    f"region {region!r} is defined by more than one style image"
                )
            region_to_style[region] = idx
    regions = sorted(region_to_style)
    if set(content_masks) != set(regions):
        raise ConfigurationError(
            f"content masks cover regions {sorted(content_masks)}, styles define "
            f"{regions}; the sets must match"
        )

    add_global = settings.add_global_channel
    if add_global is None:
        add_global = len(styles) == 1
    if add_global and len(styles) > 1:
        raise ConfigurationError(
            "a global channel is ambiguous with multiple styles; set "
            "add_global_channel=False and cover the frame with masks"
        )
    if settings.spatial_method == "sum" and len(styles) > 1:
        raise ConfigurationError(
            "the stacked-statistic method supports a single style image"
        )

    # Synthesis-side pyramid from the content masks.
    synth_pyramid = gd.build_pyramid(
        {r: np.asarray(content_masks[r], dtype=np.float64) for r in regions},
        hw,
        settings.style_layers,
        mode=settings.guidance_mode,
        global_channel=add_global,
        normalise=(settings.spatial_method == "gram"),
    )

    # Style-side pyramids, one per style image, on the synthesis grid.
    style_images = [
        _fit_to(_check_image(s.image, f"style {i}"), hw) for i, s in enumerate(styles)
    ]
    style_pyramids: list[gd.GuidancePyramid | None] = []
    for idx, style in enumerate(styles):
        masks = {
            region: _mask_to(np.asarray(mask, dtype=np.float64), hw)
            for region, mask in style.masks.items()
        }
        if not masks and not (add_global and idx == 0):
            raise ConfigurationError(f"style {idx} defines no regions")
        style_pyramids.append(
            gd.build_pyramid(
                masks,
                hw,
                settings.style_layers,
                mode=settings.guidance_mode,
                global_channel=(add_global and idx == 0),
                normalise=(settings.spatial_method == "gram"),
            )
        )

    style_acts = []
    captures = [response_layer(layer) for layer in settings.style_layers]
    for img in style_images:
        acts = model.forward(model.preprocess(img.astype(np.float32)), captures)
        style_acts.append(acts)

    all_regions = list(regions)
    if add_global:
        all_regions.append(gd.GLOBAL_REGION)
        region_to_style[gd.GLOBAL_REGION] = 0

    terms = _content_terms(model, content, settings)
    for layer in settings.style_layers:
        cap = response_layer(layer)
        weight = settings.style_weight * settings.layer_weight(layer)
        if settings.spatial_method == "gram":
            targets, channels = {}, {}
            for region in all_regions:
                sidx = region_to_style[region]
                t_style = style_pyramids[sidx].channel(layer, region).values
                targets[region] = losses.guided_gram(style_acts[sidx][cap], t_style)
                channels[region] = synth_pyramid.channel(layer, region).values
            terms.append(
                losses.GuidedStyleTerm(
                    layer=layer,
                    targets=targets,
                    channels=channels,
                    region_weights=dict(settings.region_weights),
                    weight=weight,
                )
            )
        else:
            style_raw = style_pyramids[0].raw_values(layer)
            target = losses.stacked_gram(style_acts[0][cap], style_raw)
            terms.append(
                losses.StackedGramTerm(
                    layer=layer,
                    target=target,
                    raw_channels=synth_pyramid.raw_values(layer),
                    weight=weight,
                )
            )

    info = {
        "regions": all_regions,
        "global_channel": add_global,
        "guidance_mode": settings.guidance_mode,
        "spatial_method": settings.spatial_method,
        "region_weights": {
            r: float(settings.region_weights.get(r, 1.0)) for r in all_regions
        },
        "n_styles": len(styles),
    }
    return losses.LossProgram(terms=terms), info


def _mask_to(mask: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    if mask.shape == hw:
        return mask
    return np.clip(resample_bilinear(mask, hw[0], hw[1]), 0.0, 1.0)


def transfer_spatial(
    model: NetworkModel,
    content: np.ndarray,
    styles,
    content_masks: dict[str, np.ndarray] | None = None,
    settings: TransferSettings = TransferSettings(),
    callback=None,
) -> TransferResult:
    """Region-guided stylization.

    With no region masks at all the guidance collapses to one global
    channel, which is mathematically the plain style loss; that case is
    dispatched to transfer() outright so the outputs are identical.
    """
    settings = settings.validated()
    content = _check_image(content, "content")
    content_masks = dict(content_masks or {})
    styles = list(styles)
    no_region_masks = not content_masks and all(not s.masks for s in styles)
    if no_region_masks and len(styles) == 1 and settings.add_global_channel in (None, True):
        result = transfer(model, content, styles, settings, callback)
        result.report.settings["mode"] = "spatial"
        result.report.settings["degenerated_to"] = "transfer"
        return result

    content_masks = {
        region: _mask_to(np.asarray(mask, dtype=np.float64), content.shape[1:])
        for region, mask in content_masks.items()
    }
    program, info = build_spatial_program(
        model, content, styles, content_masks, settings
    )
    echo = _settings_echo(settings, model, content.shape[1:], "spatial")
    echo.update(info)
    return _run(model, program, _initial_image(content, settings), settings, echo, callback)


# -- colour control ----------------------------------------------------


def transfer_luminance_preserving(
    model: NetworkModel,
    content: np.ndarray,
    styles,
    settings: TransferSettings = TransferSettings(),
    prematch: str = "auto",
    callback=None,
) -> TransferResult:
    """Stylise the luminance channel only and keep the content's chroma.

    Both luminances feed the network replicated across its three input
    channels.  prematch controls the moment matching of the style
    luminance to the content's ("on", "off", or "auto" which applies it
    when means or deviations differ by more than 0.01).

    The stylised luminance is clamped to [0, 1] and reattached to the
    content's untouched chroma channels; because an arbitrary luminance
    under the content's chroma can leave the RGB gamut, the returned
    image is NOT clamped again (clamping would alter the chroma, which
    this pipeline guarantees to preserve exactly).
    """
    if prematch not in ("auto", "on", "off"):
        raise ConfigurationError(
            f"prematch must be 'auto', 'on' or 'off', got {prematch!r}"
        )
    settings = settings.validated()
    content = _check_image(content, "content")
    style = _fit_to(_check_image(_single_style(styles).image, "style"), content.shape[1:])

    lum_c = col.luminance(content)
    lum_s = col.luminance(style)
    apply_match = prematch == "on"
    if prematch == "auto":
        apply_match = (
            abs(lum_s.mean() - lum_c.mean()) > 0.01
            or abs(lum_s.std() - lum_c.std()) > 0.01
        )
    if apply_match:
        lum_s = col.match_luminance_moments(lum_s, lum_c)

    grey_content = np.repeat(lum_c[None, :, :], 3, axis=0)
    grey_style = np.repeat(lum_s[None, :, :], 3, axis=0)
    program = build_transfer_program(model, grey_content, grey_style, settings)
    echo = _settings_echo(settings, model, content.shape[1:], "luminance")
    echo["luminance_prematch"] = prematch
    echo["luminance_prematch_applied"] = bool(apply_match)
    result = _run(model, program, _initial_image(grey_content, settings), settings, echo, callback)

    out_lum = col.luminance(np.asarray(result.image))
    result.image = col.recombine_luminance(out_lum, content)
    return result


def transfer_color_matched(
    model: NetworkModel,
    content: np.ndarray,
    styles,
    settings: TransferSettings = TransferSettings(),
    method: str = "symmetric",
    transform: col.ColorTransform | None = None,
    callback=None,
):
    """Plain transfer after recolouring the style to the content palette.

    The style image is mapped by an affine transform aligning its pixel
    mean and covariance with the content's; everything else is the plain
    pipeline.  A caller-supplied transform overrides the fitted one (the
    identity gives exactly the plain transfer result).  Returns
    (TransferResult, ColorTransform).
    """
    settings = settings.validated()
    content = _check_image(content, "content")
    style = _check_image(_single_style(styles).image, "style")
    fitted = transform is None
    if fitted:
        transform = col.fit_color_transform(style, content, method=method)
    matched = col.apply_color_transform(style, transform)
    result = transfer(model, content, [StyleInput(image=matched)], settings, callback)
    result.report.settings["mode"] = "color_matched"
    result.report.settings["color_method"] = method if fitted else "provided"
    return result, transform


# -- scale control -----------------------------------------------------


def make_mixed_style(
    model: NetworkModel,
    fine_style: np.ndarray,
    coarse_style: np.ndarray,
    fine_layers: tuple[str, ...] = DEFAULT_FINE_LAYERS,
    settings: TransferSettings = TransferSettings(),
    callback=None,
) -> TransferResult:
    """Synthesise a style image with one source's fine statistics on the
    other's coarse structure.

    The optimisation starts from the coarse image, has no content term
    and matches only the fine source's statistics at the given low
    layers; everything the low layers cannot see keeps the coarse
    image's structure (empirically - the optimiser gives no guarantee).
    """
    settings = settings.validated()
    if not fine_layers:
        raise ConfigurationError("at least one fine layer is required")
    coarse = _check_image(coarse_style, "coarse_style")
    fine = _fit_to(_check_image(fine_style, "fine_style"), coarse.shape[1:])

    targets = _style_gram_targets(model, fine, fine_layers)
    weight = settings.style_weight / len(fine_layers)
    terms = [
        losses.StyleTerm(layer=layer, target=targets[layer], weight=weight)
        for layer in fine_layers
    ]
    program = losses.LossProgram(terms=terms)
    mix_settings = replace(settings, init="provided", init_image=coarse)
    echo = _settings_echo(mix_settings, model, coarse.shape[1:], "mix_style")
    echo["fine_layers"] = list(fine_layers)
    echo["style_layers"] = list(fine_layers)
    echo["style_layer_weights"] = {layer: 1.0 / len(fine_layers) for layer in fine_layers}
    echo["content_layers"] = []
    echo["content_weight"] = 0.0
    return _run(model, program, coarse, mix_settings, echo, callback)


@dataclass
class MixedStyleResult:
    image: np.ndarray
    report: RunReport
    mixed_style: np.ndarray
    mix_report: RunReport


def transfer_mixed_style(
    model: NetworkModel,
    content: np.ndarray,
    fine_style: np.ndarray,
    coarse_style: np.ndarray,
    fine_layers: tuple[str, ...] = DEFAULT_FINE_LAYERS,
    settings: TransferSettings = TransferSettings(),
    mix_settings: TransferSettings | None = None,
    callback=None,
) -> MixedStyleResult:
    """Build the mixed style, then run the plain transfer with it."""
    mixed = make_mixed_style(
        model, fine_style, coarse_style, fine_layers, mix_settings or settings, callback
    )
    result = transfer(model, content, [StyleInput(image=mixed.image)], settings, callback)
    result.report.settings["mode"] = "mix_style"
    result.report.settings["fine_layers"] = list(fine_layers)
    return MixedStyleResult(
        image=result.image,
        report=result.report,
        mixed_style=mixed.image,
        mix_report=mixed.report,
    )


@dataclass(frozen=True)
class HighResConfig:
    """Coarse-to-fine schedule.

    budget_pixels caps H*W of the first stage; the reduction factor is
    the smallest integer k with (H/k)*(W/k) within budget.  Later stages
    halve the reduction until full size, each initialised from the
    previous result upsampled, and each runs refinement_fraction of the
    previous stage's iterations (refinement_iterations overrides the
    final count directly; 0 skips refinement entirely).
    """

    budget_pixels: int = 250_000
    refinement_fraction: float = 1.0 / 2.5
    refinement_iterations: int | None = None

    def __post_init__(self):
        if self.budget_pixels < MIN_SIDE * MIN_SIDE:
            raise ConfigurationError(
                f"budget_pixels must be at least {MIN_SIDE * MIN_SIDE}"
            )
        if not 0.0 < self.refinement_fraction <= 1.0:
            raise ConfigurationError("refinement_fraction must lie in (0, 1]")
        if self.refinement_iterations is not None and self.refinement_iterations < 0:
            raise ConfigurationError("refinement_iterations must be non-negative")

    def reduction_factor(self, hw: tuple[int, int]) -> int:
        return max(1, math.ceil(math.sqrt(hw[0] * hw[1] / self.budget_pixels)))


@dataclass
class StageReport:
    size: tuple[int, int]
    reduction_factor: int
    iterations: int
    report: RunReport


@dataclass
class HighResResult:
    image: np.ndarray
    reduction_factor: int
    stages: list[StageReport]

    @property
    def report(self) -> RunReport:
        return self.stages[-1].report


def transfer_highres(
    model: NetworkModel,
    content: np.ndarray,
    styles,
    settings: TransferSettings = TransferSettings(),
    config: HighResConfig = HighResConfig(),
    callback=None,
) -> HighResResult:
    """Two-or-more-stage synthesis: solve within the pixel budget first,
    then repeatedly upsample and refine with fewer iterations.

    Stage sizes follow the reduction factors k, ceil(k/2), ..., 1.  With
    k = 1 this is a plain transfer plus one short refinement pass, and
    zero refinement iterations reduce it to the plain transfer exactly.
    """
    settings = settings.validated()
    content = _check_image(content, "content")
    style = _check_image(_single_style(styles).image, "style")
    h, w = content.shape[1:]
    k = config.reduction_factor((h, w))

    factors = [k]
    while factors[-1] > 1:
        factors.append(math.ceil(factors[-1] / 2))
    # k == 1 still gets a refinement pass at the same size.
    if k == 1:
        factors.append(1)

    stages: list[StageReport] = []
    image = None
    stage_settings = settings
    iterations = settings.optimizer.max_iterations
    for stage_idx, factor in enumerate(factors):
        hw = (h // factor, w // factor)
        stage_content = _fit_to(content, hw)
        stage_style = _fit_to(style, hw)
        if stage_idx > 0:
            iterations = (
                config.refinement_iterations
                if config.refinement_iterations is not None
                else round(iterations * config.refinement_fraction)
            )
            if iterations == 0:
                break
            stage_settings = replace(
                settings,
                init="provided",
                init_image=_fit_to(image, hw),
                optimizer=replace(settings.optimizer, max_iterations=iterations),
            )
        result = transfer(
            model, stage_content, [StyleInput(image=stage_style)], stage_settings, callback
        )
        result.report.settings["mode"] = "highres"
        result.report.settings["stage"] = stage_idx
        result.report.settings["reduction_factor"] = factor
        image = result.image
        stages.append(
            StageReport(
                size=hw,
                reduction_factor=factor,
                iterations=iterations,
                report=result.report,
            )
        )
    return HighResResult(image=image, reduction_factor=k, stages=stages)
