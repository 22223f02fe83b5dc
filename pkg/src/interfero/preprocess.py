"""Amplitude outlier saturation and channel normalisation for the CNNs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_raster

OUTLIER_THRESHOLD = 3.5
MAD_CONSISTENCY = 0.6745
# E|X - median| = 0.7979 sigma for a normal X
MEANAD_CONSISTENCY = 0.7979


@dataclass
class NormalizedPair:
    """Two-channel (real, imaginary) network input in [0, 2] plus its scale."""

    channels: np.ndarray
    scale: float

    def __post_init__(self):
        if self.channels.ndim != 3 or self.channels.shape[0] != 2:
            raise ValueError(f"channels must be 2 x H x W, got {self.channels.shape}")
        if self.channels.size and (self.channels.min() < 0 or self.channels.max() > 2):
            raise ValueError("channel values must lie in [0, 2]")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def shape(self):
        return self.channels.shape[1:]


def modified_zscore(values):
    """Robust z-scores ``0.6745 (x - median) / MAD``.

    When the MAD is zero the mean absolute deviation about the median is used
    instead, ``0.7979 (x - median) / meanAD``.  If both are zero every score is
    zero.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    med = np.median(values)
    dev = values - med
    mad = np.median(np.abs(dev))
    if mad > 0:
        return MAD_CONSISTENCY * dev / mad
    meanad = np.mean(np.abs(dev))
    if meanad > 0:
        return MEANAD_CONSISTENCY * dev / meanad
    return np.zeros_like(values)


def detect_outliers(raster, threshold=OUTLIER_THRESHOLD):
    """Boolean mask of pixels whose amplitude is a modified-z-score outlier."""
    z = check_raster(raster)
    amp = np.abs(z).astype(np.float64)
    if not np.any(amp > 0):
        raise ValueError("raster has no nonzero amplitude")
    scores = modified_zscore(amp)
    return (np.abs(scores) > threshold).reshape(z.shape)


def saturate_amplitudes(raster, mask):
    """Clip flagged amplitudes to the largest unflagged amplitude, keeping phase.

    Only flagged pixels above that ceiling are touched; zero-amplitude pixels
    are left alone since their phase is undefined.
    """
    z = check_raster(raster)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != z.shape:
        raise ValueError(f"mask shape {mask.shape} != raster shape {z.shape}")
    if not mask.any():
        return z.copy()
    amp = np.abs(z).astype(np.float64)
    inliers = amp[~mask]
    ceiling = inliers.max() if inliers.size else np.median(amp)
    clip = mask & (amp > ceiling)
    out = z.astype(np.complex128)
    out[clip] *= ceiling / amp[clip]
    return out.astype(np.complex64)


def normalize_shift(raster):
    """Divide by the peak amplitude and add 1, giving channels in [0, 2]."""
    z = check_raster(raster)
    scale = float(np.abs(z.astype(np.complex128)).max())
    if scale == 0:
        raise ValueError("cannot normalise an all-zero raster")
    z = z.astype(np.complex128) / scale
    channels = np.stack([z.real, z.imag]) + 1.0
    np.clip(channels, 0.0, 2.0, out=channels)
    return NormalizedPair(channels.astype(np.float32), scale)


def denormalize(pair):
    """Inverse of :func:`normalize_shift`."""
    c = pair.channels.astype(np.float64) - 1.0
    return ((c[0] + 1j * c[1]) * pair.scale).astype(np.complex64)


def preprocess(raster):
    """Outlier detection, saturation and normalisation in one call."""
    z = check_raster(raster)
    return normalize_shift(saturate_amplitudes(z, detect_outliers(z)))
