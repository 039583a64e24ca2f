"""Colour-space helpers for luminance-only transfer and colour matching.

Two strategies keep the content photograph's colours in the output:

* Luminance-only: the stylization runs on luminance alone and the
  content's chroma planes are reattached afterwards.  Images convert to
  a luma/chroma space (NTSC YIQ: Y carries brightness, I and Q carry
  chroma); optionally the style luminance is first shifted and scaled to
  match the content's mean and standard deviation so the style's
  brightness statistics do not fight the content's.

* Colour matching: the style image's pixel distribution is mapped by an
  affine transform p' = A p + b chosen so its mean and covariance equal
  the content's; stylization then proceeds normally on the recoloured
  style.  A is the symmetric square-root solution by default, with a
  Cholesky-factor alternative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError

# RGB -> YIQ (NTSC) analysis matrix; the synthesis matrix is its inverse.
YIQ_FROM_RGB = np.array(
    [
        [0.299, 0.587, 0.114],
        [0.595716, -0.274453, -0.321263],
        [0.211456, -0.522591, 0.311135],
    ]
)
RGB_FROM_YIQ = np.linalg.inv(YIQ_FROM_RGB)

_STD_FLOOR = 1e-8


def _check_rgb(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ConfigurationError(f"{name} must have shape (3, H, W), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise NumericError(f"{name} contains non-finite values")
    return img


def rgb_to_yiq(img: np.ndarray) -> np.ndarray:
    img = _check_rgb(img)
    return np.einsum("ij,jhw->ihw", YIQ_FROM_RGB, img.astype(np.float64, copy=False))


def yiq_to_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ConfigurationError(f"image must have shape (3, H, W), got {img.shape}")
    return np.einsum("ij,jhw->ihw", RGB_FROM_YIQ, img.astype(np.float64, copy=False))


def luminance(img: np.ndarray) -> np.ndarray:
    """The Y plane of an RGB image, shape (H, W)."""
    img = _check_rgb(img)
    return np.einsum("j,jhw->hw", YIQ_FROM_RGB[0], img.astype(np.float64, copy=False))


def match_luminance_moments(
    style_lum: np.ndarray, content_lum: np.ndarray
) -> np.ndarray:
    """Shift/scale the style luminance to the content's mean and deviation.

    L' = (sigma_content / sigma_style) * (L - mu_style) + mu_content.
    A flat style luminance has no scale to adjust and is rejected.
    """
    s = np.asarray(style_lum, dtype=np.float64)
    c = np.asarray(content_lum, dtype=np.float64)
    mu_s, mu_c = float(s.mean()), float(c.mean())
    sd_s, sd_c = float(s.std()), float(c.std())
    if sd_s < _STD_FLOOR:
        raise NumericError(
            "style luminance is constant; its deviation cannot be matched"
        )
    return (sd_c / sd_s) * (s - mu_s) + mu_c


@dataclass(frozen=True)
class ColorTransform:
    """Affine pixel map p' = matrix @ p + offset over RGB triples."""

    matrix: np.ndarray  # (3, 3)
    offset: np.ndarray  # (3,)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        o = np.asarray(self.offset, dtype=np.float64)
        if m.shape != (3, 3) or o.shape != (3,):
            raise ConfigurationError(
                f"transform needs a (3, 3) matrix and (3,) offset, got "
                f"{m.shape} and {o.shape}"
            )
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", o)

    @classmethod
    def identity(cls) -> "ColorTransform":
        return cls(matrix=np.eye(3), offset=np.zeros(3))


def _mean_cov(img: np.ndarray):
    p = img.reshape(3, -1).astype(np.float64, copy=False)
    mu = p.mean(axis=1)
    centred = p - mu[:, None]
    cov = (centred @ centred.T) / p.shape[1]
    return mu, cov


def _sym_sqrt(cov: np.ndarray, inverse: bool) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, _STD_FLOOR * _STD_FLOOR)
    root = np.sqrt(vals)
    if inverse:
        root = 1.0 / root
    return (vecs * root[None, :]) @ vecs.T


def fit_color_transform(
    source: np.ndarray,
    target: np.ndarray,
    method: str = "symmetric",
    regularisation: float = 1e-8,
) -> ColorTransform:
    """Affine map making source pixel statistics match the target's.

    Applying the result to the source image produces pixels whose mean
    and covariance equal the target's (up to the regularisation added to
    both covariances for stability).  method "symmetric" uses matrix
    square roots, "cholesky" uses triangular factors; both satisfy
    A Sigma_s A^T = Sigma_t and differ only by a rotation.
    """
    source = _check_rgb(source, "source")
    target = _check_rgb(target, "target")
    if method not in ("symmetric", "cholesky"):
        raise ConfigurationError(
            f"method must be 'symmetric' or 'cholesky', got {method!r}"
        )
    mu_s, cov_s = _mean_cov(source)
    mu_t, cov_t = _mean_cov(target)
    reg = regularisation * np.eye(3)
    cov_s = cov_s + reg
    cov_t = cov_t + reg
    if method == "symmetric":
        a = _sym_sqrt(cov_t, inverse=False) @ _sym_sqrt(cov_s, inverse=True)
    else:
        ls = np.linalg.cholesky(cov_s)
        lt = np.linalg.cholesky(cov_t)
        a = lt @ np.linalg.inv(ls)
    return ColorTransform(matrix=a, offset=mu_t - a @ mu_s)


def apply_color_transform(img: np.ndarray, transform: ColorTransform) -> np.ndarray:
    """Apply p' = A p + b to every pixel.  Values are not clipped."""
    img = _check_rgb(img)
    out = np.einsum(
        "ij,jhw->ihw", transform.matrix, img.astype(np.float64, copy=False)
    )
    return out + transform.offset[:, None, None]


def recombine_luminance(new_lum: np.ndarray, chroma_source: np.ndarray) -> np.ndarray:
    """RGB image with the given luminance and the chroma of another image."""
    yiq = rgb_to_yiq(chroma_source)
    yiq[0] = np.asarray(new_lum, dtype=np.float64)
    return yiq_to_rgb(yiq)
