"""Loss terms over network responses, with analytic gradients.

Content distance compares responses directly; style distance compares
channel cross-correlation (Gram) statistics.  Spatial guidance enters in
two ways: either each region gets its own Gram built from guidance-
weighted feature columns (the per-region form), or the raw guidance
channels are stacked under the feature rows and a single augmented Gram
captures feature/feature, feature/guidance and guidance/guidance
products in one statistic (the augmented form).

All statistics and loss arithmetic run in float64 regardless of the
activation dtype; gradients are cast back to the activation dtype at the
end.  A LossProgram bundles weighted terms, evaluates them against one
set of captured activations and hands per-capture-point gradients to the
network pullback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .architecture import response_layer
from .errors import ConfigurationError, NumericError

_CHANNEL_NORM_TOL = 1e-4


def _rows(feats: np.ndarray) -> np.ndarray:
    """(C, H, W) activation -> (C, M) float64 row matrix."""
    if feats.ndim != 3:
        raise ConfigurationError(f"expected (channels, h, w) activation, got {feats.shape}")
    return feats.reshape(feats.shape[0], -1).astype(np.float64, copy=False)


def gram_matrix(feats: np.ndarray) -> np.ndarray:
    """Mean channel cross-correlation: G[a, b] = (1 / M) sum_p F[a, p] F[b, p]."""
    fv = _rows(feats)
    return (fv @ fv.T) / fv.shape[1]


def content_loss(f_hat: np.ndarray, f_target: np.ndarray):
    """Mean squared response distance, normalised by channels x positions.

    Returns (value, gradient with respect to f_hat).
    """
    if f_hat.shape != f_target.shape:
        raise ConfigurationError(
            f"response shapes differ: {f_hat.shape} vs {f_target.shape}"
        )
    diff = f_hat.astype(np.float64, copy=False) - f_target.astype(np.float64, copy=False)
    n = f_hat.shape[0]
    m = f_hat.shape[1] * f_hat.shape[2]
    scale = 1.0 / (n * m)
    value = scale * float(np.sum(diff * diff))
    grad = (2.0 * scale) * diff
    return value, grad


def style_layer_loss(f_hat: np.ndarray, gram_target: np.ndarray):
    """Squared Gram distance with the 1 / (4 N^2) normalisation.

    The per-position normalisation already sits inside gram_matrix, so
    outputs are comparable across image sizes.  Returns (value, grad).
    """
    fv = _rows(f_hat)
    n, m = fv.shape
    if gram_target.shape != (n, n):
        raise ConfigurationError(
            f"target statistic has shape {gram_target.shape}, expected ({n}, {n})"
        )
    diff = (fv @ fv.T) / m - gram_target.astype(np.float64, copy=False)
    value = float(np.sum(diff * diff)) / (4.0 * n * n)
    grad_rows = (diff @ fv) / (n * n * m)
    return value, grad_rows.reshape(f_hat.shape)


def _check_normalised(channel: np.ndarray, m: int) -> np.ndarray:
    t = channel.reshape(-1).astype(np.float64, copy=False)
    if t.size != m:
        raise ConfigurationError(
            f"guidance channel has {t.size} positions, features have {m}"
        )
    total = float(np.sum(t * t))
    if abs(total - 1.0) > _CHANNEL_NORM_TOL:
        raise ConfigurationError(
            f"guidance channel is not normalised: sum of squares is {total:.6g}"
        )
    return t


def guided_gram(feats: np.ndarray, channel: np.ndarray) -> np.ndarray:
    """Cross-correlation of guidance-weighted feature rows.

    The channel must be normalised to unit sum of squares; that built-in
    weighting replaces the 1 / M of the plain statistic, so a uniform
    channel of value 1 / sqrt(M) reproduces gram_matrix exactly.
    """
    fv = _rows(feats)
    t = _check_normalised(channel, fv.shape[1])
    w = fv * t[None, :]
    return w @ w.T


def guided_style_layer_loss(
    f_hat: np.ndarray,
    targets: dict[str, np.ndarray],
    channels: dict[str, np.ndarray],
    region_weights: dict[str, float] | None = None,
):
    """Sum of per-region guided Gram distances at one layer.

    targets and channels are keyed by region id; channels are the
    synthesis-side normalised guidance channels.  Each region's squared
    distance carries the 1 / (4 N^2) normalisation and an optional region
    weight.  Returns (value, grad).
    """
    fv = _rows(f_hat)
    n, m = fv.shape
    if set(targets) != set(channels):
        raise ConfigurationError(
            f"regions of targets {sorted(targets)} and channels {sorted(channels)} differ"
        )
    region_weights = region_weights or {}
    value = 0.0
    grad_rows = np.zeros_like(fv)
    for region in sorted(targets):
        weight = float(region_weights.get(region, 1.0))
        t = _check_normalised(channels[region], m)
        target = targets[region].astype(np.float64, copy=False)
        if target.shape != (n, n):
            raise ConfigurationError(
                f"target for region {region!r} has shape {target.shape}, expected ({n}, {n})"
            )
        w = fv * t[None, :]
        diff = w @ w.T - target
        value += weight * float(np.sum(diff * diff)) / (4.0 * n * n)
        grad_rows += (weight / (n * n)) * ((diff @ w) * t[None, :])
    return value, grad_rows.reshape(f_hat.shape)


def stacked_gram(feats: np.ndarray, raw_channels: dict[str, np.ndarray]) -> np.ndarray:
    """Augmented statistic: raw guidance channels stacked under the
    feature rows, then the plain mean cross-correlation.

    The top-left N x N block is exactly gram_matrix(feats); the border
    rows/columns hold mean guidance-weighted feature sums and the
    bottom-right block the mean products of the guidance channels
    themselves.  Regions are stacked in sorted id order.
    """
    fv = _rows(feats)
    n, m = fv.shape
    rows = [fv]
    for region in sorted(raw_channels):
        t = raw_channels[region].reshape(-1).astype(np.float64, copy=False)
        if t.size != m:
            raise ConfigurationError(
                f"guidance channel for region {region!r} has {t.size} positions, "
                f"features have {m}"
            )
        rows.append(t[None, :])
    s = np.concatenate(rows, axis=0)
    return (s @ s.T) / m


def stacked_gram_loss(
    f_hat: np.ndarray,
    target: np.ndarray,
    raw_channels: dict[str, np.ndarray],
):
    """Squared distance between augmented statistics.

    The 1 / (4 N'^2) normalisation uses the augmented row count
    N' = N + R so the loss scale tracks the statistic actually compared.
    Gradients flow only into the feature rows; the guidance rows are
    constants of the synthesis.  Returns (value, grad).
    """
    fv = _rows(f_hat)
    n, m = fv.shape
    n_aug = n + len(raw_channels)
    if target.shape != (n_aug, n_aug):
        raise ConfigurationError(
            f"augmented target has shape {target.shape}, expected ({n_aug}, {n_aug})"
        )
    g_hat = stacked_gram(f_hat, raw_channels)
    diff = g_hat - target.astype(np.float64, copy=False)
    value = float(np.sum(diff * diff)) / (4.0 * n_aug * n_aug)
    rows = [fv] + [
        raw_channels[r].reshape(1, -1).astype(np.float64, copy=False)
        for r in sorted(raw_channels)
    ]
    s = np.concatenate(rows, axis=0)
    grad_full = (diff @ s) / (n_aug * n_aug * m)
    return value, grad_full[:n].reshape(f_hat.shape)


# -- weighted terms and programs --------------------------------------


@dataclass
class ContentTerm:
    layer: str
    target: np.ndarray
    weight: float = 1.0
    kind: str = field(default="content", init=False)

    def value_and_grad(self, f_hat):
        v, g = content_loss(f_hat, self.target)
        return self.weight * v, self.weight * g


@dataclass
class StyleTerm:
    layer: str
    target: np.ndarray  # Gram matrix of the style layer
    weight: float = 1.0
    kind: str = field(default="style", init=False)

    def value_and_grad(self, f_hat):
        v, g = style_layer_loss(f_hat, self.target)
        return self.weight * v, self.weight * g


@dataclass
class GuidedStyleTerm:
    layer: str
    targets: dict[str, np.ndarray]
    channels: dict[str, np.ndarray]
    region_weights: dict[str, float] | None = None
    weight: float = 1.0
    kind: str = field(default="guided_style", init=False)

    def value_and_grad(self, f_hat):
        v, g = guided_style_layer_loss(
            f_hat, self.targets, self.channels, self.region_weights
        )
        return self.weight * v, self.weight * g


@dataclass
class StackedGramTerm:
    layer: str
    target: np.ndarray
    raw_channels: dict[str, np.ndarray]
    weight: float = 1.0
    kind: str = field(default="stacked_style", init=False)

    def value_and_grad(self, f_hat):
        v, g = stacked_gram_loss(f_hat, self.target, self.raw_channels)
        return self.weight * v, self.weight * g


@dataclass
class LossProgram:
    """A weighted sum of loss terms over named layer responses."""

    terms: list

    def __post_init__(self):
        if not self.terms:
            raise ConfigurationError("a loss program needs at least one term")

    @property
    def capture_layers(self) -> tuple[str, ...]:
        seen = []
        for term in self.terms:
            cap = response_layer(term.layer)
            if cap not in seen:
                seen.append(cap)
        return tuple(seen)

    def evaluate(self, acts: dict[str, np.ndarray]):
        """Evaluate all terms against captured activations.

        Returns (total, per-kind totals, {capture layer -> gradient}).
        Gradients are accumulated in float64 and cast to each
        activation's dtype.
        """
        total = 0.0
        by_kind: dict[str, float] = {}
        grads: dict[str, np.ndarray] = {}
        for term in self.terms:
            cap = response_layer(term.layer)
            f_hat = acts[cap]
            value, grad = term.value_and_grad(f_hat)
            total += value
            by_kind[term.kind] = by_kind.get(term.kind, 0.0) + value
            if cap in grads:
                grads[cap] = grads[cap] + grad
            else:
                grads[cap] = grad.astype(np.float64, copy=False)
        if not np.isfinite(total):
            raise NumericError(f"loss is not finite: {total}")
        out_grads = {
            cap: g.astype(acts[cap].dtype, copy=False) for cap, g in grads.items()
        }
        return total, by_kind, out_grads
