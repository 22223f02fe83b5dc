"""Windowed raw coherence, Chan-Vese segmentation, training targets and the
coherence-estimation CNN.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (check_coherence, check_raster, check_raster_list, check_real_map,
                          check_same_shape)
from .network import Network, train_network
from .preprocess import preprocess

COHERENCE_ARCHITECTURE = ("conv(2,8,relu) > conv(8,16,relu) > conv(16,8,relu,std={lam!r})"
                          " > conv(8,1,sigmoid)")
DEFAULT_LAMBDA = 1e-3
_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


# --------------------------------------------------------------------------
# raw coherence

def _window_sum(a, window):
    """Sum over ``window`` x ``window`` neighbourhoods with mirror extension."""
    r = window // 2
    p = np.pad(a, r, mode="reflect")
    s = np.zeros((p.shape[0] + 1, p.shape[1] + 1), dtype=p.dtype)
    np.cumsum(np.cumsum(p, axis=0), axis=1, out=s[1:, 1:])
    k = window
    return s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]


def raw_coherence(u1, u2, window=11):
    """Magnitude of the normalised windowed cross-correlation of two rasters.

    ``|sum(u1 * conj(u2))| / sqrt(sum|u1|^2 * sum|u2|^2)`` over each
    ``window`` x ``window`` neighbourhood (borders mirror-extended).  Windows
    with zero energy give 0.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    a = check_raster(u1, "u1").astype(np.complex128)
    b = check_raster(u2, "u2").astype(np.complex128)
    check_same_shape(a, b, ("u1", "u2"))
    num = np.abs(_window_sum(a * np.conj(b), window))
    e1 = _window_sum(np.abs(a) ** 2, window)
    e2 = _window_sum(np.abs(b) ** 2, window)
    den = np.sqrt(np.maximum(e1, 0) * np.maximum(e2, 0))
    out = np.zeros(a.shape)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# --------------------------------------------------------------------------
# Chan-Vese

@dataclass
class LabelMap:
    """Connected regions of a two-class segmentation.

    ``labels`` holds a region id per pixel and ``coherent[id]`` says whether
    that region belongs to the coherent class.
    """

    labels: np.ndarray
    coherent: np.ndarray
    energy: list = field(default_factory=list)
    iterations: int = 0

    @property
    def shape(self):
        return self.labels.shape

    @property
    def n_regions(self):
        return len(self.coherent)

    def coherent_mask(self):
        return self.coherent[self.labels]


def heaviside(phi, eps=1.0):
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(phi / eps))


def dirac(phi, eps=1.0):
    return eps / (np.pi * (eps * eps + phi * phi))


def region_means(u, phi, eps=1.0):
    """Means of ``u`` weighted by the smoothed inside/outside indicators."""
    hin = heaviside(phi, eps)
    hout = 1.0 - hin
    c1 = float(np.sum(hin * u) / max(np.sum(hin), 1e-12))
    c2 = float(np.sum(hout * u) / max(np.sum(hout), 1e-12))
    return c1, c2


def chan_vese_energy(u, phi, mu, eps=1.0):
    """Regularised Chan-Vese energy of level set ``phi`` on image ``u``.

    ``mu * sum(dirac(phi) |grad phi|)`` plus the Heaviside-weighted squared
    deviations from the optimal region means.
    """
    c1, c2 = region_means(u, phi, eps)
    gy, gx = np.gradient(phi)
    length = float(np.sum(dirac(phi, eps) * np.sqrt(gx * gx + gy * gy)))
    hin = heaviside(phi, eps)
    fit = float(np.sum(hin * (u - c1) ** 2 + (1.0 - hin) * (u - c2) ** 2))
    return mu * length + fit


def _semi_implicit_step(u, phi, mu, dt, eps, c1, c2):
    """One semi-implicit (Jacobi) update of the level set.

    The curvature term is linearised with coefficients frozen at ``phi``, which
    keeps the update stable for large steps; ``dt -> 0`` gives ``phi`` back.
    """
    eta = 1e-8
    p = np.pad(phi, 1, mode="edge")
    c = p[1:-1, 1:-1]
    down, up = p[2:, 1:-1], p[:-2, 1:-1]
    right, left = p[1:-1, 2:], p[1:-1, :-2]
    # coefficients on the edges towards the next row (a) and next column (b)
    a = 1.0 / np.sqrt(eta + (down - c) ** 2 + ((right - left) / 2.0) ** 2)
    b = 1.0 / np.sqrt(eta + (right - c) ** 2 + ((down - up) / 2.0) ** 2)
    a_up = np.pad(a, ((1, 0), (0, 0)), mode="edge")[:-1]
    b_left = np.pad(b, ((0, 0), (1, 0)), mode="edge")[:, :-1]
    # no flux across the image border
    a[-1] = 0.0
    a_up[0] = 0.0
    b[:, -1] = 0.0
    b_left[:, 0] = 0.0
    w = dt * dirac(phi, eps)
    num = phi + w * (mu * (a * down + a_up * up + b * right + b_left * left)
                     - (u - c1) ** 2 + (u - c2) ** 2)
    return num / (1.0 + w * mu * (a + a_up + b + b_left))


def chan_vese_segment(cmap, mu=None, dt=0.5, eps=1.0, tol=1e-4, max_iter=500,
                      max_halvings=12):
    """Two-phase Chan-Vese segmentation of a real map.

    The level set starts from a ``sin(pi x / 5) sin(pi y / 5)`` checkerboard and
    evolves by a semi-implicit scheme, with the region means re-estimated every
    iteration.  A step that would raise the regularised energy is retried
    with half the time step; if no step up to ``max_halvings`` halvings helps,
    the evolution stops.  Iteration also stops once fewer than ``tol`` of the
    pixels change sign in a step that lowers the energy by less than a
    relative ``tol``, or after ``max_iter`` steps.

    The class with the higher mean is flagged coherent, and both classes are
    split into 4-connected regions.
    """
    u = check_real_map(cmap).astype(np.float64)
    spread = float(u.max() - u.min())
    if spread < 1e-12:
        labels = np.zeros(u.shape, dtype=np.int32)
        return LabelMap(labels, np.array([u.mean() >= 0.5]), [0.0], 0)
    if mu is None:
        mu = 0.1 * spread ** 2
    # evolve on the map rescaled to [0, 1]; with mu scaled alike this only
    # rescales the energy by spread**2 and makes dt independent of contrast
    original = u
    u = (u - u.min()) / spread
    mu = mu / spread ** 2

    yy, xx = np.mgrid[0:u.shape[0], 0:u.shape[1]]
    phi = np.sin(np.pi * xx / 5.0) * np.sin(np.pi * yy / 5.0)
    energy = chan_vese_energy(u, phi, mu, eps)
    history = [energy]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        inside = phi > 0
        c1 = float(u[inside].mean()) if inside.any() else 0.0
        c2 = float(u[~inside].mean()) if not inside.all() else 0.0
        step = dt
        for _ in range(max_halvings + 1):
            candidate = _semi_implicit_step(u, phi, mu, step, eps, c1, c2)
            cand_energy = chan_vese_energy(u, candidate, mu, eps)
            if cand_energy <= energy:
                break
            step *= 0.5
        else:
            break
        flipped = np.count_nonzero((candidate > 0) != (phi > 0)) / u.size
        # the level set can move for several steps between sign changes, so
        # a quiet step only counts once the energy has also levelled off
        settled = energy - cand_energy <= tol * abs(energy)
        phi, energy = candidate, cand_energy
        history.append(energy)
        if flipped < tol and settled:
            break

    return _label_regions(original, phi > 0, history, iterations)


def _label_regions(u, inside, history, iterations):
    classes = [m for m in (inside, ~inside) if m.any()]
    if len(classes) == 1:
        labels = np.zeros(u.shape, dtype=np.int32)
        return LabelMap(labels, np.array([u.mean() >= 0.5]), history, iterations)
    means = [u[m].mean() for m in classes]
    coherent_class = classes[int(np.argmax(means))]
    labels = np.empty(u.shape, dtype=np.int32)
    flags = []
    offset = 0
    for mask, is_coherent in ((coherent_class, True), (~coherent_class, False)):
        lab, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
        labels[mask] = lab[mask] - 1 + offset
        flags.extend([is_coherent] * n)
        offset += n
    return LabelMap(labels, np.array(flags, dtype=bool), history, iterations)


def preprocess_targets(raw, labels):
    """Coherent regions -> 1; each incoherent region -> clip(mean - std, 0, 1)."""
    raw = check_real_map(raw).astype(np.float64)
    check_same_shape(raw, labels.labels, ("raw", "labels"))
    lab = labels.labels.ravel()
    counts = np.bincount(lab, minlength=labels.n_regions).astype(np.float64)
    sums = np.bincount(lab, weights=raw.ravel(), minlength=labels.n_regions)
    means = sums / np.maximum(counts, 1)
    sq = np.bincount(lab, weights=(raw.ravel() - means[lab]) ** 2, minlength=labels.n_regions)
    stds = np.sqrt(sq / np.maximum(counts, 1))
    values = np.clip(means - stds, 0.0, 1.0)
    values[labels.coherent] = 1.0
    return values[labels.labels].astype(np.float32)


def build_targets(noisy, filtered, window=11, **segment_kwargs):
    """Raw coherence between a noisy raster and its filtered version, its
    segmentation, and the resulting training target map.
    """
    raw = raw_coherence(noisy, filtered, window)
    labels = chan_vese_segment(raw, **segment_kwargs)
    return raw, labels, preprocess_targets(raw, labels)


# --------------------------------------------------------------------------
# the CNN

@dataclass
class CoherenceConfig:
    patch_size: int = 64
    patches_per_image: int = 500
    epochs: int = 100
    batch_size: int = 32
    reg_lambda: float = DEFAULT_LAMBDA
    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        for name in ("patch_size", "patches_per_image", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")


def coherence_architecture(lam=DEFAULT_LAMBDA):
    return COHERENCE_ARCHITECTURE.format(lam=float(lam))


def build_coherence_model(seed=0, lam=DEFAULT_LAMBDA, architecture=None):
    net = Network(architecture or coherence_architecture(lam), seed)
    if net.in_channels != 2 or net.out_channels != 1:
        raise ValueError("coherence model must map 2 channels to 1")
    if net.layers[-1].activation != "sigmoid":
        raise ValueError("coherence model must end in a sigmoid")
    if net.spatial_multiple != 1:
        raise ValueError("coherence model must not resample")
    return net


def extract_pair_patches(channels, target, size, count, seed):
    """Aligned random patches from a 2 x H x W input and its H x W target."""
    _, h, w = channels.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than patch size {size}")
    check_same_shape(channels[0], target, ("input", "target"))
    rng = np.random.default_rng(seed)
    tops = rng.integers(0, h - size + 1, size=count)
    lefts = rng.integers(0, w - size + 1, size=count)
    x = np.stack([channels[:, t:t + size, l:l + size] for t, l in zip(tops, lefts)])
    y = np.stack([target[None, t:t + size, l:l + size] for t, l in zip(tops, lefts)])
    return x, y.astype(np.float32)


def train_coherence(noisy_patches, target_patches, config=None, model=None, log=None):
    """Fit the coherence CNN to ``(N,2,s,s)`` inputs and ``(N,1,s,s)`` targets.

    Returns ``(model, history)`` where history holds the per-epoch mean of
    MSE plus weight-std penalty.
    """
    cfg = config or CoherenceConfig()
    x = np.asarray(noisy_patches, dtype=np.float32)
    y = np.asarray(target_patches, dtype=np.float32)
    if y.ndim == 3:
        y = y[:, None]
    if len(x) != len(y):
        raise ValueError(f"{len(x)} input patches but {len(y)} target patches")
    if len(x) == 0:
        raise ValueError("no training patches")
    if x.shape[2:] != y.shape[2:]:
        raise ValueError(f"input patches {x.shape[2:]} and targets {y.shape[2:]} misaligned")
    net = model or build_coherence_model(cfg.seed, cfg.reg_lambda)
    history = train_network(net, x, y, epochs=cfg.epochs, batch_size=cfg.batch_size,
                            seed=cfg.seed, lr=cfg.learning_rate, beta1=cfg.beta1,
                            beta2=cfg.beta2, eps=cfg.epsilon, log=log)
    return net, history


def estimate_coherence(model, raster):
    """Per-pixel coherence in (0, 1) predicted from a single interferogram."""
    pair = preprocess(raster)
    out = model.predict(pair.channels)[0].astype(np.float64)
    # keep strictly inside (0, 1) after float32 rounding
    lo = np.finfo(np.float32).tiny
    hi = np.nextafter(np.float32(1), np.float32(0))
    return np.clip(out, lo, hi).astype(np.float32)


class CoherenceEstimator(BaseEstimator):
    """Coherence CNN with the estimator interface.

    ``fit(X, y)`` takes noisy interferograms and their target coherence maps
    (see :func:`build_targets`); ``predict(X)`` returns coherence maps.
    """

    def __init__(self, patch_size=64, patches_per_image=500, epochs=100, batch_size=32,
                 reg_lambda=DEFAULT_LAMBDA, learning_rate=1e-3, random_state=0,
                 verbose=False):
        self.patch_size = patch_size
        self.patches_per_image = patches_per_image
        self.epochs = epochs
        self.batch_size = batch_size
        self.reg_lambda = reg_lambda
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.verbose = verbose

    def _config(self):
        return CoherenceConfig(self.patch_size, self.patches_per_image, self.epochs,
                               self.batch_size, self.reg_lambda, self.random_state,
                               self.learning_rate)

    def fit(self, X, y):
        cfg = self._config()
        rasters = check_raster_list(X)
        targets = [check_coherence(t, f"y[{i}]") for i, t in enumerate(
            [y] if isinstance(y, np.ndarray) and y.ndim == 2 else y)]
        if len(rasters) != len(targets):
            raise ValueError(f"{len(rasters)} rasters but {len(targets)} targets")
        xs, ys = [], []
        for i, (z, t) in enumerate(zip(rasters, targets)):
            check_same_shape(z, t, (f"X[{i}]", f"y[{i}]"))
            px, py = extract_pair_patches(preprocess(z).channels, t, cfg.patch_size,
                                          cfg.patches_per_image, [cfg.seed, i])
            xs.append(px)
            ys.append(py)
        log = print if self.verbose else None
        self.network_, self.loss_history_ = train_coherence(
            np.concatenate(xs), np.concatenate(ys), cfg, log=log)
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        single = isinstance(X, np.ndarray) and X.ndim == 2
        out = [estimate_coherence(self.network_, z) for z in check_raster_list(X)]
        return out[0] if single else out
