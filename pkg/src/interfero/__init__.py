"""CNN denoising and coherence estimation for InSAR interferograms."""
from .baselines import BoxcarFilter, GoldsteinFilter, boxcar_filter, goldstein_filter
from .coherence import (CoherenceEstimator, build_targets, chan_vese_segment,
                        preprocess_targets, raw_coherence)
from .denoiser import InterferogramDenoiser, denoise
from .metrics import cmse, phce
from .simulator import SceneConfig, simulate_scene

__all__ = [
    "BoxcarFilter",
    "CoherenceEstimator",
    "GoldsteinFilter",
    "InterferogramDenoiser",
    "SceneConfig",
    "boxcar_filter",
    "build_targets",
    "chan_vese_segment",
    "cmse",
    "denoise",
    "goldstein_filter",
    "phce",
    "preprocess_targets",
    "raw_coherence",
    "simulate_scene",
]

__version__ = "0.1.0"
