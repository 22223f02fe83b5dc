"""Classical comparison filters: complex boxcar and Goldstein."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_raster, check_raster_list
from .coherence import raw_coherence

# spectral transforms used by the Goldstein filter
fft2 = np.fft.fft2
ifft2 = np.fft.ifft2


def boxcar_filter(raster, k=3):
    """Complex mean over a ``k`` x ``k`` mirror-extended window."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"boxcar window must be odd and >= 1, got {k}")
    z = check_raster(raster).astype(np.complex128)
    if k == 1:
        return z.astype(np.complex64)
    re = ndimage.uniform_filter(z.real, size=k, mode="mirror")
    im = ndimage.uniform_filter(z.imag, size=k, mode="mirror")
    return (re + 1j * im).astype(np.complex64)


@dataclass
class GoldsteinParams:
    alpha: float = 0.5
    patch: int = 32
    overlap: int = 16
    smooth: int = 3

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.patch < 2 or self.patch & (self.patch - 1):
            raise ValueError(f"patch size must be a power of two, got {self.patch}")
        if not 0 <= self.overlap < self.patch:
            raise ValueError("overlap must satisfy 0 <= overlap < patch")
        if self.smooth < 1:
            raise ValueError("smoothing kernel must be >= 1")


def blend_window(n, overlap):
    """1-D taper: flat in the middle, raised-cosine ramps of length ``overlap``.

    Shifted copies spaced ``n - overlap`` apart sum to one wherever they overlap.
    """
    w = np.ones(n)
    if overlap:
        ramp = np.sin(0.5 * np.pi * (np.arange(overlap) + 0.5) / overlap) ** 2
        w[:overlap] = ramp
        w[n - overlap:] = ramp[::-1]
    return w


def goldstein_filter(raster, params=None):
    """Patchwise spectrum weighting by the smoothed spectral magnitude.

    Each patch spectrum ``S`` is multiplied by ``smooth(|S|) ** alpha``.  No
    normalisation is applied, so scaling the input by ``c`` scales the output
    by ``c ** (1 + alpha)``.  Patches are blended with raised-cosine tapers and
    the accumulated taper weight is divided out.
    """
    p = params or GoldsteinParams()
    z = check_raster(raster).astype(np.complex128)
    h, w = z.shape
    step = p.patch - p.overlap
    # pad so every pixel sits under full-weight taper coverage
    pad = p.overlap
    ph = _padded_extent(h + 2 * pad, p.patch, step)
    pw = _padded_extent(w + 2 * pad, p.patch, step)
    padded = np.pad(z, ((pad, ph - h - pad), (pad, pw - w - pad)), mode="symmetric")

    taper = np.outer(blend_window(p.patch, p.overlap), blend_window(p.patch, p.overlap))
    out = np.zeros_like(padded)
    weight = np.zeros(padded.shape)
    for top in range(0, ph - p.patch + 1, step):
        for left in range(0, pw - p.patch + 1, step):
            block = padded[top:top + p.patch, left:left + p.patch]
            spec = fft2(block)
            mag = np.abs(spec)
            if p.smooth > 1:
                mag = ndimage.uniform_filter(mag, size=p.smooth, mode="wrap")
            filtered = ifft2(spec * mag ** p.alpha)
            out[top:top + p.patch, left:left + p.patch] += taper * filtered
            weight[top:top + p.patch, left:left + p.patch] += taper
    out /= weight
    return out[pad:pad + h, pad:pad + w].astype(np.complex64)


def _padded_extent(n, patch, step):
    if n <= patch:
        return patch
    return patch + int(np.ceil((n - patch) / step)) * step


def baseline_coherence(u1, u2, k=11):
    """Windowed coherence for the comparison filters (shares the raw-coherence code path)."""
    return raw_coherence(u1, u2, window=k)


class BoxcarFilter(BaseEstimator, TransformerMixin):
    """Stateless boxcar filter with the transformer interface."""

    def __init__(self, k=3):
        self.k = k

    def fit(self, X=None, y=None):
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"k must be odd and >= 1, got {self.k}")
        return self

    def transform(self, X):
        single = isinstance(X, np.ndarray) and X.ndim == 2
        out = [boxcar_filter(x, self.k) for x in check_raster_list(X)]
        return out[0] if single else out


class GoldsteinFilter(BaseEstimator, TransformerMixin):
    def __init__(self, alpha=0.5, patch=32, overlap=16, smooth=3):
        self.alpha = alpha
        self.patch = patch
        self.overlap = overlap
        self.smooth = smooth

    def _params(self):
        return GoldsteinParams(self.alpha, self.patch, self.overlap, self.smooth)

    def fit(self, X=None, y=None):
        self._params()
        return self

    def transform(self, X):
        params = self._params()
        single = isinstance(X, np.ndarray) and X.ndim == 2
        out = [goldstein_filter(x, params) for x in check_raster_list(X)]
        return out[0] if single else out
