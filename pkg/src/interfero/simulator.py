"""Synthetic interferograms: Gaussian bubbles, roads and buildings plus noise.

The clean signal is the unit phasor ``exp(j*phase)``.  Noise is circular
complex Gaussian with a spatially smooth standard deviation ``sigma``; the
coherence of the noisy sample against the clean signal is then
``1 / sqrt(1 + sigma**2)`` at every pixel.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

# stream ids for per-scene random generators
_CLEAN_STREAM = 0
_NOISE_STREAM = 1


@dataclass
class SceneConfig:
    size: int = 256
    bubbles: tuple = (1, 5)
    bubble_amplitude: float = 6 * np.pi
    bubble_sigma: tuple = (8.0, 40.0)
    roads: tuple = (0, 3)
    road_width: tuple = (3.0, 8.0)
    road_slope: float = 0.15
    buildings: tuple = (0, 5)
    building_extent: tuple = (10, 40)
    building_offset: float = np.pi
    sigma_range: tuple = (0.2, 2.0)
    # coarse grid of the smooth noise field, per side
    sigma_grid: int = 4

    def __post_init__(self):
        if self.size < 64:
            raise ValueError("scene size must be at least 64")
        for name in ("bubbles", "bubble_sigma", "roads", "road_width", "buildings",
                     "building_extent", "sigma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: {lo} > {hi}")
            setattr(self, name, (lo, hi))
        if self.sigma_range[0] < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.sigma_grid < 2:
            raise ValueError("sigma_grid must be at least 2")

    def to_json(self):
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        names = {f.name for f in fields(cls)}
        return cls(**{k: tuple(v) if isinstance(v, list) else v
                      for k, v in data.items() if k in names})


@dataclass
class SimulatedScene:
    clean_phase: np.ndarray
    noisy: np.ndarray
    gamma_true: np.ndarray
    sigma: np.ndarray

    @property
    def clean(self):
        return np.exp(1j * self.clean_phase).astype(np.complex64)


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


def simulate_clean(config=None, seed=0):
    """Unwrapped clean phase (radians) for one scene."""
    cfg = config or SceneConfig()
    rng = _rng(seed, _CLEAN_STREAM)
    n = cfg.size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    phase = np.zeros((n, n))

    for _ in range(rng.integers(cfg.bubbles[0], cfg.bubbles[1] + 1)):
        amp = rng.uniform(-cfg.bubble_amplitude, cfg.bubble_amplitude)
        sig = rng.uniform(*cfg.bubble_sigma)
        cy, cx = rng.uniform(0, n, size=2)
        phase += gaussian_bubble(yy, xx, cy, cx, amp, sig)

    for _ in range(rng.integers(cfg.roads[0], cfg.roads[1] + 1)):
        theta = rng.uniform(0, np.pi)
        cy, cx = rng.uniform(0, n, size=2)
        width = rng.uniform(*cfg.road_width)
        slope = rng.uniform(-cfg.road_slope, cfg.road_slope)
        along = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
        across = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
        strip = np.abs(across) <= width / 2
        phase[strip] += slope * along[strip]

    for _ in range(rng.integers(cfg.buildings[0], cfg.buildings[1] + 1)):
        h, w = rng.integers(cfg.building_extent[0], cfg.building_extent[1] + 1, size=2)
        top = rng.integers(0, n - h + 1)
        left = rng.integers(0, n - w + 1)
        phase[top:top + h, left:left + w] += rng.uniform(-cfg.building_offset,
                                                         cfg.building_offset)
    return phase


def gaussian_bubble(yy, xx, cy, cx, amplitude, sigma):
    return amplitude * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))


def sigma_field(config, rng):
    """Smooth noise-level field spanning the configured sigma range."""
    g = config.sigma_grid
    coarse = rng.uniform(size=(g, g))
    field = ndimage.zoom(coarse, config.size / g, order=1, mode="nearest", grid_mode=True)
    field = field[:config.size, :config.size]
    span = field.max() - field.min()
    field = (field - field.min()) / span if span > 0 else np.zeros_like(field)
    lo, hi = config.sigma_range
    return lo + field * (hi - lo)


def coherence_from_sigma(sigma):
    return 1.0 / np.sqrt(1.0 + np.asarray(sigma, dtype=np.float64) ** 2)


def add_noise(clean_phase, config=None, seed=0, sigma=None):
    """Add circular complex Gaussian noise to ``exp(j*clean_phase)``.

    ``sigma`` overrides the random smooth field (scalar or per-pixel array).
    The total complex variance is ``sigma**2``, split evenly between the real
    and imaginary parts.
    """
    cfg = config or SceneConfig()
    phase = np.asarray(clean_phase, dtype=np.float64)
    rng = _rng(seed, _NOISE_STREAM)
    if sigma is None:
        sigma = sigma_field(cfg, rng)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), phase.shape)
    noise = rng.standard_normal(phase.shape) + 1j * rng.standard_normal(phase.shape)
    noisy = np.exp(1j * phase) + sigma / np.sqrt(2) * noise
    return SimulatedScene(
        clean_phase=phase,
        noisy=noisy.astype(np.complex64),
        gamma_true=coherence_from_sigma(sigma).astype(np.float32),
        sigma=np.array(sigma),
    )


def simulate_scene(config=None, seed=0):
    cfg = config or SceneConfig()
    return add_noise(simulate_clean(cfg, seed), cfg, seed)


def scene_seeds(master_seed, count):
    return [int(s) for s in np.random.SeedSequence(master_seed).generate_state(count)]


def make_dataset(count, config=None, seed=0, out_dir="."):
    """Write ``count`` scenes plus ``manifest.txt`` to ``out_dir``.

    Returns the manifest path.  Each scene is stored as a PHSE clean phase, an
    IGRM noisy interferogram and a COHR true coherence file.
    """
    from . import io

    cfg = config or SceneConfig()
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for index, s in enumerate(scene_seeds(seed, count)):
        scene = simulate_scene(cfg, s)
        stem = f"scene_{index:04d}"
        names = (f"{stem}_clean.phse", f"{stem}_noisy.igrm", f"{stem}_gamma.cohr")
        try:
            io.write_raster(scene.clean_phase, os.path.join(out_dir, names[0]), kind="PHSE")
            io.write_raster(scene.noisy, os.path.join(out_dir, names[1]), kind="IGRM")
            io.write_raster(scene.gamma_true, os.path.join(out_dir, names[2]), kind="COHR")
        except OSError as exc:
            raise OSError(f"failed writing scene {index} to {out_dir}: {exc}") from exc
        records.append(io.ManifestRecord(index, s, *names))
    return io.write_manifest(records, os.path.join(out_dir, "manifest.txt"), cfg, seed)
