"""Statistical illuminant estimators over masked linear raw-RGB images.

All estimators are pure functions of an immutable :class:`RawImage` and
return a unit-norm illuminant direction. Masked pixels are excluded from
every sum, maximum and selection (never zero-filled), so altering masked
pixel values can never change an estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .color import normalize
from .errors import (
    BadLevels,
    EigenFailure,
    SelectionEmpty,
    TooSmall,
    ZeroVector,
)

__all__ = [
    "RawImage",
    "Method",
    "EstimatorConfig",
    "normalize_raw",
    "downsample",
    "gray_world",
    "max_rgb",
    "shades_of_gray",
    "gray_edge",
    "pca_bright_dark",
    "estimate",
]


@dataclass(frozen=True)
class RawImage:
    """Linear 3-channel raw-RGB image in [0, 1] with an optional mask.

    Attributes:
        pixels: (H, W, 3) float64 array, values in [0, 1].
        mask: optional (H, W) bool array, True = excluded (e.g. color chart).
    """

    pixels: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"pixels must be (H, W, 3), got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels contain non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixels must lie in [0, 1]; run normalize_raw first")
        object.__setattr__(self, "pixels", px)
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != px.shape[:2]:
                raise ValueError(f"mask shape {m.shape} != image shape {px.shape[:2]}")
            if m.all():
                raise ValueError("image has no unmasked pixels")
            object.__setattr__(self, "mask", m)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def valid(self) -> np.ndarray:
        """(H, W) bool array of pixels that participate in statistics."""
        if self.mask is None:
            return np.ones(self.pixels.shape[:2], dtype=bool)
        return ~self.mask

    def unmasked_pixels(self) -> np.ndarray:
        """(N, 3) array of unmasked pixels in row-major order."""
        if self.mask is None:
            return self.pixels.reshape(-1, 3)
        return self.pixels[~self.mask]


class Method(str, Enum):
    """Estimator selector, with the CLI-facing spelling as value."""

    GRAY_WORLD = "gray-world"
    MAX_RGB = "max-rgb"
    SHADES_OF_GRAY = "shades-of-gray"
    GRAY_EDGE_1 = "gray-edge-1"
    GRAY_EDGE_2 = "gray-edge-2"
    PCA_BRIGHT_DARK = "pca-bright-dark"


# Published defaults: SoG pools with p=4, Gray Edge with p=6 and a 2 px
# Gaussian, PCA selects the brightest/darkest 3.5%.
_DEFAULT_P = {Method.SHADES_OF_GRAY: 4.0, Method.GRAY_EDGE_1: 6.0, Method.GRAY_EDGE_2: 6.0}
DEFAULT_GE_SIGMA = 2.0
DEFAULT_PCA_PERCENT = 0.035

_ALIASES = {
    "gw": Method.GRAY_WORLD,
    "grayworld": Method.GRAY_WORLD,
    "maxrgb": Method.MAX_RGB,
    "wp": Method.MAX_RGB,
    "sog": Method.SHADES_OF_GRAY,
    "ge1": Method.GRAY_EDGE_1,
    "ge2": Method.GRAY_EDGE_2,
    "pca": Method.PCA_BRIGHT_DARK,
}


def parse_method(name: str) -> Method:
    """Resolve a method name or alias (``gw``, ``sog``, ``ge1``, ...)."""
    key = name.strip().lower()
    if key in _ALIASES:
        return _ALIASES[key]
    try:
        return Method(key)
    except ValueError:
        valid = sorted({m.value for m in Method} | set(_ALIASES))
        raise ValueError(f"unknown estimator {name!r}; expected one of {valid}") from None


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator selection plus its knobs.

    ``p`` defaults per method (4 for Shades-of-Gray, 6 for Gray Edge);
    ``sigma`` is the Gray Edge blur std-dev in pixels; ``pca_percent`` the
    bright/dark selection fraction.
    """

    method: Method = Method.GRAY_WORLD
    p: float | None = None
    sigma: float = DEFAULT_GE_SIGMA
    pca_percent: float = DEFAULT_PCA_PERCENT

    def __post_init__(self):
        if self.p is not None and self.p < 1:
            raise ValueError(f"Minkowski order p must be >= 1, got {self.p}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.pca_percent < 0.5:
            raise ValueError(f"pca_percent must be in (0, 0.5), got {self.pca_percent}")

    def resolved_p(self) -> float:
        if self.p is not None:
            return float(self.p)
        return _DEFAULT_P.get(self.method, 1.0)


def estimate(img: RawImage, cfg: EstimatorConfig) -> np.ndarray:
    """Run the configured estimator on ``img``."""
    m = cfg.method
    if m is Method.GRAY_WORLD:
        return gray_world(img)
    if m is Method.MAX_RGB:
        return max_rgb(img)
    if m is Method.SHADES_OF_GRAY:
        return shades_of_gray(img, cfg.resolved_p())
    if m is Method.GRAY_EDGE_1:
        return gray_edge(img, 1, cfg.resolved_p(), cfg.sigma)
    if m is Method.GRAY_EDGE_2:
        return gray_edge(img, 2, cfg.resolved_p(), cfg.sigma)
    if m is Method.PCA_BRIGHT_DARK:
        return pca_bright_dark(img, cfg.pca_percent)
    raise ValueError(f"unhandled method {m}")


# ---------------------------------------------------------------------------
# Raw normalization and resizing
# ---------------------------------------------------------------------------

def normalize_raw(raw16, black, saturation) -> RawImage:
    """Map integer sensor values to [0, 1] using black/saturation levels.

    Each channel value ``v`` becomes ``clip((v - black) / (sat - black), 0, 1)``.
    ``black`` and ``saturation`` may be scalars or per-channel 3-vectors.

    Raises:
        BadLevels: if any channel has saturation <= black.
    """
    arr = np.asarray(raw16, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {arr.shape}")
    blk = np.broadcast_to(np.asarray(black, dtype=np.float64), (3,)).copy()
    sat = np.broadcast_to(np.asarray(saturation, dtype=np.float64), (3,)).copy()
    if np.any(sat <= blk):
        raise BadLevels(f"saturation {sat.tolist()} must exceed black {blk.tolist()}")
    scaled = (arr - blk) / (sat - blk)
    return RawImage(np.clip(scaled, 0.0, 1.0))


def _overlap_weights(n_src: int, n_dst: int) -> np.ndarray:
    """(n_dst, n_src) matrix of box-filter overlap lengths along one axis."""
    # output pixel j covers source interval [j*s, (j+1)*s) with s = n_src/n_dst
    s = n_src / n_dst
    w = np.zeros((n_dst, n_src))
    for j in range(n_dst):
        lo = j * s
        hi = (j + 1) * s
        i0 = int(math.floor(lo))
        i1 = min(int(math.ceil(hi)), n_src)
        for i in range(i0, i1):
            w[j, i] = min(hi, i + 1) - max(lo, i)
    return w


def downsample(img: RawImage, target_w: int, target_h: int) -> RawImage:
    """Area-averaged (box filter) resize honoring the pixel mask.

    Masked source pixels are excluded from the averages; an output pixel
    whose entire source window is masked comes out masked.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    h, w = img.height, img.width
    if (target_w, target_h) == (w, h) and img.mask is None:
        return img
    wy = _overlap_weights(h, target_h)
    wx = _overlap_weights(w, target_w)
    valid = img.valid().astype(np.float64)
    den = wy @ valid @ wx.T
    out = np.empty((target_h, target_w, 3))
    for c in range(3):
        num = wy @ (img.pixels[:, :, c] * valid) @ wx.T
        out[:, :, c] = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    out_mask = den <= 0
    if out_mask.all():
        raise ValueError("downsample produced a fully masked image")
    return RawImage(np.clip(out, 0.0, 1.0), out_mask if out_mask.any() else None)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def gray_world(img: RawImage) -> np.ndarray:
    """Direction of the per-channel mean over unmasked pixels."""
    means = img.unmasked_pixels().mean(axis=0)
    if np.linalg.norm(means) < 1e-15:
        raise ZeroVector("all channel means are zero")
    return normalize(means)


def max_rgb(img: RawImage) -> np.ndarray:
    """Direction of the per-channel maxima over unmasked pixels."""
    maxima = img.unmasked_pixels().max(axis=0)
    if np.linalg.norm(maxima) < 1e-15:
        raise ZeroVector("image is all black")
    return normalize(maxima)


def shades_of_gray(img: RawImage, p: float) -> np.ndarray:
    """Direction of the per-channel Minkowski p-mean ``(mean(I^p))^(1/p)``.

    p=1 reduces to gray world; large p approaches max-RGB.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    px = img.unmasked_pixels()
    if p == 1:
        pooled = px.mean(axis=0)
    else:
        pooled = np.power(np.power(px, p).mean(axis=0), 1.0 / p)
    if np.linalg.norm(pooled) < 1e-15:
        raise ZeroVector("all pooled channel responses are zero")
    return normalize(pooled)


def _masked_gaussian(channel: np.ndarray, valid: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur that lets only unmasked pixels contribute.

    Normalized convolution: blur(I * valid) / blur(valid). The kernel is
    truncated at 3 sigma and renormalized; positions with no valid support
    come out zero.
    """
    num = ndimage.gaussian_filter(channel * valid, sigma, truncate=3.0, mode="constant")
    den = ndimage.gaussian_filter(valid, sigma, truncate=3.0, mode="constant")
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def gray_edge(img: RawImage, order: int, p: float, sigma: float) -> np.ndarray:
    """Minkowski pool of derivative magnitudes of the blurred channels.

    Order 1 pools ``sqrt(Ix^2 + Iy^2)``, order 2 the Hessian magnitude
    ``sqrt(Ixx^2 + 2 Ixy^2 + Iyy^2)``, both from central differences of the
    Gaussian-smoothed channel. Masked pixels and a border of width
    ``ceil(3 sigma)`` are excluded from the pooling.

    Raises:
        TooSmall: if either image side is below ``ceil(6 sigma + 1)``.
        ZeroVector: if there is no gradient energy (constant image).
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    support = math.ceil(6 * sigma + 1)
    if img.height < support or img.width < support:
        raise TooSmall(
            f"{img.width}x{img.height} image too small for sigma={sigma} "
            f"(needs >= {support} per side)"
        )
    valid = img.valid().astype(np.float64)
    border = math.ceil(3 * sigma)
    pool = img.valid().copy()
    pool[:border, :] = False
    pool[-border:, :] = False
    pool[:, :border] = False
    pool[:, -border:] = False
    if not pool.any():
        raise ZeroVector("no unmasked pixels left inside the pooling border")

    pooled = np.empty(3)
    for c in range(3):
        sm = _masked_gaussian(img.pixels[:, :, c], valid, sigma)
        gy, gx = np.gradient(sm)
        if order == 1:
            mag = np.hypot(gx, gy)
        else:
            gyy, gyx = np.gradient(gy)
            gxy, gxx = np.gradient(gx)
            mag = np.sqrt(gxx**2 + 2.0 * gxy**2 + gyy**2)
        vals = mag[pool]
        pooled[c] = np.power(np.power(vals, p).mean(), 1.0 / p)
    if np.linalg.norm(pooled) < 1e-12:
        raise ZeroVector("no gradient energy: constant image")
    return normalize(pooled)


def _dominant_eigenvector(scatter: np.ndarray, tol: float = 1e-12, max_steps: int = 1000) -> np.ndarray:
    """Dominant eigenvector of a 3x3 PSD matrix by power iteration."""
    v = np.full(3, 1.0 / math.sqrt(3.0))
    for _ in range(max_steps):
        nxt = scatter @ v
        n = np.linalg.norm(nxt)
        if n < 1e-30:
            raise EigenFailure("scatter matrix annihilated the iterate")
        nxt = nxt / n
        if np.linalg.norm(nxt - v) < tol:
            return nxt
        v = nxt
    raise EigenFailure(f"power iteration did not converge in {max_steps} steps")


def pca_bright_dark(img: RawImage, percent: float) -> np.ndarray:
    """Dominant direction of the brightest and darkest pixel colors.

    Pixels are scored by projection onto the mean color direction; the top
    and bottom ``percent`` fractions are pooled into a 3x3 scatter matrix
    whose dominant eigenvector is the estimate.

    Raises:
        SelectionEmpty: if a selection would be empty.
        EigenFailure: if power iteration fails to converge in 1000 steps.
    """
    if not 0.0 < percent <= 0.5:
        raise ValueError(f"percent must be in (0, 0.5], got {percent}")
    px = img.unmasked_pixels()
    n = px.shape[0]
    k = math.ceil(percent * n)
    if k < 1 or n < 1:
        raise SelectionEmpty(f"selection of {percent:.3%} from {n} pixels is empty")
    mean = px.mean(axis=0)
    mn = np.linalg.norm(mean)
    if mn < 1e-15:
        raise ZeroVector("mean color is zero")
    scores = px @ (mean / mn)
    order = np.argsort(scores, kind="stable")
    chosen = np.unique(np.concatenate([order[:k], order[n - k:]]))
    sel = px[chosen]
    scatter = sel.T @ sel
    v = _dominant_eigenvector(scatter)
    if v.sum() < 0:
        v = -v
    return normalize(v)
