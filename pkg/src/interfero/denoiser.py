"""Autoencoder that denoises complex interferograms without clean references.

The network reconstructs its own (preprocessed) input through a max-pool
bottleneck, so training needs only noisy data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_raster, check_raster_list
from .network import Network, train_network
from .preprocess import NormalizedPair, denormalize, preprocess

DENOISER_ARCHITECTURE = ("conv(2,8,relu) > conv(8,16,relu) > pool(3) > conv(16,16,relu)"
                         " > up(3) > conv(16,8,relu) > conv(8,2,relu)")
POOL_FACTOR = 3


@dataclass
class TrainConfig:
    patch_size: int = 60
    patches_per_image: int = 500
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % POOL_FACTOR:
            raise ValueError(f"patch size must be a positive multiple of {POOL_FACTOR}")
        for name in ("patches_per_image", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def build_denoiser(seed=0, architecture=DENOISER_ARCHITECTURE):
    net = Network(architecture, seed)
    if net.in_channels != 2 or net.out_channels != 2:
        raise ValueError("denoiser must map 2 channels to 2 channels")
    return net


def patch_corners(shape, size, count, seed):
    h, w = shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than patch size {size}")
    rng = np.random.default_rng(seed)
    return rng.integers(0, h - size + 1, size=count), rng.integers(0, w - size + 1, size=count)


def extract_patches(image, size=60, count=500, seed=0):
    """``count`` random ``2 x size x size`` patches from a normalised pair.

    ``image`` is a :class:`NormalizedPair` or a ``(2, H, W)`` array.
    """
    channels = image.channels if isinstance(image, NormalizedPair) else np.asarray(image)
    tops, lefts = patch_corners(channels.shape[1:], size, count, seed)
    return np.stack([channels[:, t:t + size, l:l + size] for t, l in zip(tops, lefts)])


def train_denoiser(patches, config=None, model=None, log=None):
    """Fit the autoencoder so that ``model(patch) ~= patch``.

    Returns ``(model, history)`` with one mean loss per epoch.
    """
    cfg = config or TrainConfig()
    x = np.asarray(patches, dtype=np.float32)
    if x.ndim != 4 or len(x) == 0:
        raise ValueError("patches must be a non-empty (N, 2, s, s) array")
    net = model or build_denoiser(cfg.seed)
    history = train_network(net, x, x, epochs=cfg.epochs, batch_size=cfg.batch_size,
                            seed=cfg.seed, lr=cfg.learning_rate, beta1=cfg.beta1,
                            beta2=cfg.beta2, eps=cfg.epsilon, log=log)
    return net, history


def _pad_to_multiple(channels, m):
    _, h, w = channels.shape
    ph, pw = (-h) % m, (-w) % m
    if ph == 0 and pw == 0:
        return channels
    return np.pad(channels, ((0, 0), (0, ph), (0, pw)), mode="symmetric")


def denoise(model, raster):
    """Denoise a whole interferogram of any size; output matches input shape."""
    z = check_raster(raster)
    pair = preprocess(z)
    h, w = z.shape
    padded = _pad_to_multiple(pair.channels, model.spatial_multiple)
    out = model.predict(padded)[:, :h, :w]
    out = np.clip(out, 0.0, 2.0)
    return denormalize(NormalizedPair(out.astype(np.float32), pair.scale))


class InterferogramDenoiser(BaseEstimator, TransformerMixin):
    """Unsupervised autoencoder denoiser with the transformer interface.

    ``fit(X)`` trains on random patches of the noisy interferograms in ``X``;
    ``transform(X)`` denoises whole rasters.
    """

    def __init__(self, patch_size=60, patches_per_image=500, epochs=50, batch_size=32,
                 learning_rate=1e-3, random_state=0, architecture=DENOISER_ARCHITECTURE,
                 verbose=False):
        self.patch_size = patch_size
        self.patches_per_image = patches_per_image
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.architecture = architecture
        self.verbose = verbose

    def fit(self, X, y=None):
        cfg = TrainConfig(self.patch_size, self.patches_per_image, self.epochs,
                          self.batch_size, self.random_state, self.learning_rate)
        patches = np.concatenate([
            extract_patches(preprocess(z), cfg.patch_size, cfg.patches_per_image,
                            [cfg.seed, i])
            for i, z in enumerate(check_raster_list(X))])
        model = build_denoiser(cfg.seed, self.architecture)
        log = print if self.verbose else None
        self.network_, self.loss_history_ = train_denoiser(patches, cfg, model, log=log)
        return self

    def transform(self, X):
        check_is_fitted(self, "network_")
        single = isinstance(X, np.ndarray) and X.ndim == 2
        out = [denoise(self.network_, z) for z in check_raster_list(X)]
        return out[0] if single else out
