"""Dense tensor kernels for the convolutional feature network.

All operations work on channel-first arrays of shape (C, H, W) in float32
or float64.  Convolutions accumulate in float64 regardless of storage
dtype and the result is cast back to the input dtype, so float64 inputs
get a full float64 path (used by the finite-difference tests) while
float32 inputs pay no accuracy cliff at layer boundaries.

The convolution is fixed at kernel 3x3, stride 1, zero padding 1, which
is the only geometry the feature network uses.  Each call gathers the
nine shifted windows of the padded input into one float64 column matrix
and performs a single GEMM against the flattened kernel, which keeps the
whole accumulation inside one BLAS call.  The backward passes are exact
adjoints of the forwards, so gradients match central finite differences
to the precision of the arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError

_FLOAT_DTYPES = (np.float32, np.float64)

# Upper bound on the transient column-matrix buffer.  Small images use a
# single strip; large ones are processed in horizontal bands so memory
# stays flat while each output element is still one dot product of one
# GEMM call.
_COLS_BUDGET_BYTES = 256 * 1024 * 1024


def _check_image(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 3:
        raise ConfigurationError(
            f"{name} must have shape (channels, height, width), got {x.shape}"
        )
    if x.dtype not in _FLOAT_DTYPES:
        raise ConfigurationError(
            f"{name} must be float32 or float64, got {x.dtype}"
        )


@dataclass(frozen=True)
class ConvSpec:
    """Parameters of one 3x3 convolution layer.

    weights has shape (out_channels, in_channels, 3, 3) and bias shape
    (out_channels,); both are stored as float32.  A float64 copy of the
    kernel, flattened for the column-matrix product, is materialised
    lazily for the accumulation path.
    """

    weights: np.ndarray
    bias: np.ndarray
    _cache: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        w, b = self.weights, self.bias
        if w.ndim != 4 or w.shape[2:] != (3, 3):
            raise ConfigurationError(
                f"conv weights must have shape (out, in, 3, 3), got {w.shape}"
            )
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ConfigurationError(
                f"conv bias shape {b.shape} does not match {w.shape[0]} output channels"
            )
        if w.dtype != np.float32:
            object.__setattr__(self, "weights", np.ascontiguousarray(w, dtype=np.float32))
        if b.dtype != np.float32:
            object.__setattr__(self, "bias", np.ascontiguousarray(b, dtype=np.float32))
        if not np.all(np.isfinite(self.weights)) or not np.all(np.isfinite(self.bias)):
            raise NumericError("conv parameters contain non-finite values")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_matrix(self) -> np.ndarray:
        """Float64 kernel flattened to (out, 9 * in), tap-major to match
        the window gathering order of conv2d_forward."""
        if not self._cache:
            flat = self.weights.astype(np.float64).transpose(0, 2, 3, 1)
            self._cache.append(np.ascontiguousarray(flat.reshape(self.out_channels, -1)))
            self._cache.append(self.bias.astype(np.float64))
        return self._cache[0]

    @property
    def bias64(self) -> np.ndarray:
        self.kernel_matrix
        return self._cache[1]


@dataclass(frozen=True)
class PoolSpec:
    """Parameters of one 2x2, stride-2 pooling layer."""

    kind: str = "average"

    def __post_init__(self):
        if self.kind not in ("average", "max"):
            raise ConfigurationError(
                f"pooling kind must be 'average' or 'max', got {self.kind!r}"
            )


def conv2d_forward(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """3x3 convolution, stride 1, zero padding 1.  Output spatial size equals input."""
    _check_image(x)
    if x.shape[0] != spec.in_channels:
        raise ConfigurationError(
            f"input has {x.shape[0]} channels but layer expects {spec.in_channels}"
        )
    if not np.all(np.isfinite(x)):
        raise NumericError("conv input contains non-finite values")
    c, h, w = x.shape
    xpad = np.zeros((c, h + 2, w + 2), dtype=x.dtype)
    xpad[:, 1:-1, 1:-1] = x
    out = np.empty((spec.out_channels, h, w), dtype=x.dtype)
    # Gather the nine shifted windows into one float64 column matrix and
    # contract against the flattened kernel in a single GEMM, banding the
    # rows so the transient buffer stays within _COLS_BUDGET_BYTES.
    band = max(1, min(h, _COLS_BUDGET_BYTES // (9 * c * w * 8)))
    for i0 in range(0, h, band):
        i1 = min(h, i0 + band)
        n = i1 - i0
        cols = np.empty((3, 3, c, n, w), dtype=np.float64)
        for di in range(3):
            for dj in range(3):
                cols[di, dj] = xpad[:, i0 + di:i1 + di, dj:dj + w]
        o = spec.kernel_matrix @ cols.reshape(9 * c, n * w)
        o += spec.bias64[:, None]
        out[:, i0:i1] = o.reshape(spec.out_channels, n, w)
    return out


def conv2d_backward(x: np.ndarray, spec: ConvSpec, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of conv2d_forward with respect to its input.

    x is only used for its shape/dtype; the convolution is linear in the
    input so the gradient does not depend on the values.
    """
    _check_image(x)
    _check_image(grad_out, "grad_out")
    c, h, w = x.shape
    if grad_out.shape != (spec.out_channels, h, w):
        raise ConfigurationError(
            f"grad_out shape {grad_out.shape} does not match output shape "
            f"({spec.out_channels}, {h}, {w})"
        )
    gpad = np.zeros((c, h + 2, w + 2), dtype=np.float64)
    band = max(1, min(h, _COLS_BUDGET_BYTES // (9 * c * w * 8)))
    for i0 in range(0, h, band):
        i1 = min(h, i0 + band)
        n = i1 - i0
        g = grad_out[:, i0:i1].reshape(spec.out_channels, -1)
        gcols = (spec.kernel_matrix.T @ g.astype(np.float64, copy=False))
        gcols = gcols.reshape(3, 3, c, n, w)
        for di in range(3):
            for dj in range(3):
                gpad[:, i0 + di:i1 + di, dj:dj + w] += gcols[di, dj]
    return gpad[:, 1:-1, 1:-1].astype(x.dtype, copy=False)


def relu_forward(x: np.ndarray) -> np.ndarray:
    _check_image(x)
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of relu; the subgradient at exactly zero is taken as zero."""
    if x.shape != grad_out.shape:
        raise ConfigurationError(
            f"grad_out shape {grad_out.shape} does not match input shape {x.shape}"
        )
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def _pool_views(x: np.ndarray):
    c, h, w = x.shape
    ho, wo = h // 2, w // 2
    if ho < 1 or wo < 1:
        raise ConfigurationError(
            f"pooling needs height and width of at least 2, got {h}x{w}"
        )
    # Odd trailing rows/columns are dropped, matching floor output sizing.
    xt = x[:, : 2 * ho, : 2 * wo]
    return xt.reshape(c, ho, 2, wo, 2), ho, wo


def pool_forward(x: np.ndarray, spec: PoolSpec) -> np.ndarray:
    """2x2 pooling with stride 2.  Output size is floor(h/2) x floor(w/2)."""
    _check_image(x)
    views, ho, wo = _pool_views(x)
    if spec.kind == "average":
        out = views.mean(axis=(2, 4), dtype=np.float64)
        return out.astype(x.dtype, copy=False)
    return views.max(axis=(2, 4))


def pool_backward(x: np.ndarray, spec: PoolSpec, grad_out: np.ndarray) -> np.ndarray:
    _check_image(x)
    views, ho, wo = _pool_views(x)
    c, h, w = x.shape
    if grad_out.shape != (c, ho, wo):
        raise ConfigurationError(
            f"grad_out shape {grad_out.shape} does not match pooled shape ({c}, {ho}, {wo})"
        )
    grad = np.zeros((c, h, w), dtype=grad_out.dtype)
    gview = grad[:, : 2 * ho, : 2 * wo].reshape(c, ho, 2, wo, 2)
    if spec.kind == "average":
        gview += grad_out[:, :, None, :, None] * np.asarray(0.25, dtype=grad_out.dtype)
        return grad
    # Max pooling routes each gradient to the first maximal element of its
    # window (row-major order), so ties resolve deterministically.
    win = views.transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, 4)
    idx = win.argmax(axis=3)
    onehot = (np.arange(4)[None, None, None, :] == idx[..., None])
    spread = onehot * grad_out[..., None]
    gview += spread.reshape(c, ho, wo, 2, 2).transpose(0, 1, 3, 2, 4)
    return grad


def _resample_axis_weights(n_src: int, n_dst: int):
    """Sample positions and blend weights for one axis of bilinear resampling.

    Destination pixel centres map to source coordinates via
    (dst + 0.5) * (n_src / n_dst) - 0.5, clamped to the valid range, which
    treats both grids as covering the same extent (no corner alignment).
    """
    scale = n_src / n_dst
    pos = (np.arange(n_dst, dtype=np.float64) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, n_src - 1.0)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, n_src - 2) if n_src > 1 else np.zeros_like(lo)
    frac = pos - lo
    if n_src == 1:
        frac = np.zeros_like(frac)
    return lo, frac


def resample_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resampling to (out_h, out_w).

    Accepts (C, H, W) or a single-channel (H, W) array and preserves the
    arrangement.  Values are interpolated in float64 and cast back.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    _check_image(x)
    if out_h < 1 or out_w < 1:
        raise ConfigurationError(f"target size {out_h}x{out_w} must be positive")
    c, h, w = x.shape
    lo_r, fr_r = _resample_axis_weights(h, out_h)
    lo_c, fr_c = _resample_axis_weights(w, out_w)
    xi = x.astype(np.float64, copy=False)
    rows = xi[:, lo_r, :] * (1.0 - fr_r)[None, :, None]
    if h > 1:
        rows = rows + xi[:, lo_r + 1, :] * fr_r[None, :, None]
    out = rows[:, :, lo_c] * (1.0 - fr_c)[None, None, :]
    if w > 1:
        out = out + rows[:, :, lo_c + 1] * fr_c[None, None, :]
    out = out.astype(x.dtype, copy=False)
    return out[0] if squeeze else out


def resample_nearest(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resampling with the same grid convention as bilinear."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    _check_image(x)
    if out_h < 1 or out_w < 1:
        raise ConfigurationError(f"target size {out_h}x{out_w} must be positive")
    c, h, w = x.shape
    rr = np.clip(((np.arange(out_h) + 0.5) * (h / out_h) - 0.5).round(), 0, h - 1).astype(np.int64)
    cc = np.clip(((np.arange(out_w) + 0.5) * (w / out_w) - 0.5).round(), 0, w - 1).astype(np.int64)
    out = x[:, rr][:, :, cc]
    return out[0] if squeeze else out
