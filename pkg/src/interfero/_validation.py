"""Input checks shared by the estimators and the functional API."""
import numpy as np


def check_raster(z, name="raster"):
    """Return ``z`` as a finite 2-D complex64 array."""
    z = np.asarray(z)
    if z.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {z.shape}")
    if z.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.iscomplexobj(z):
        z = z.astype(np.complex64)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{name} contains non-finite samples")
    return z.astype(np.complex64, copy=False)


def check_real_map(a, name="map"):
    a = np.asarray(a)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if np.iscomplexobj(a):
        raise ValueError(f"{name} must be real")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_coherence(a, name="coherence"):
    a = check_real_map(a, name)
    if a.min() < 0 or a.max() > 1:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return a


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{names[0]} shape {np.shape(a)} != {names[1]} shape {np.shape(b)}")


def check_raster_list(X, name="X"):
    """Accept one raster, a list of rasters, or an ``(n, H, W)`` stack."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [check_raster(X, name)]
    if isinstance(X, np.ndarray) and X.ndim == 3:
        return [check_raster(x, f"{name}[{i}]") for i, x in enumerate(X)]
    X = list(X)
    if not X:
        raise ValueError(f"{name} is empty")
    return [check_raster(x, f"{name}[{i}]") for i, x in enumerate(X)]
