import os

import numpy as np
import pytest

from interfero import io
from interfero.coherence import raw_coherence
from interfero.simulator import (SceneConfig, add_noise, coherence_from_sigma, make_dataset,
                                 scene_seeds, simulate_clean, simulate_scene)

EMPTY = dict(bubbles=(0, 0), roads=(0, 0), buildings=(0, 0))


def test_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(size=32)
    with pytest.raises(ValueError):
        SceneConfig(bubbles=(3, 1))


def test_config_json_round_trip():
    cfg = SceneConfig(size=96, sigma_range=(0.1, 1.0))
    assert SceneConfig.from_json(cfg.to_json()) == cfg


def test_no_features_zero_phase():
    assert not simulate_clean(SceneConfig(**EMPTY), 3).any()


def test_single_bubble_peak_and_decay():
    cfg = SceneConfig(size=64, bubbles=(1, 1), roads=(0, 0), buildings=(0, 0))
    phase = simulate_clean(cfg, 11)
    cy, cx = np.unravel_index(np.argmax(np.abs(phase)), phase.shape)
    line = np.abs(phase[cy, cx:])
    assert np.all(np.diff(line) <= 1e-12)
    assert np.abs(phase).max() <= cfg.bubble_amplitude


def test_building_offset():
    cfg = SceneConfig(size=64, bubbles=(0, 0), roads=(0, 0), buildings=(1, 1),
                      building_offset=np.pi / 2)
    phase = simulate_clean(cfg, 5)
    inside = phase[phase != 0]
    assert inside.size > 0 and np.allclose(inside, inside[0])
    assert abs(inside[0]) <= np.pi / 2


def test_deterministic_per_seed():
    a, b = simulate_scene(SceneConfig(size=64), 9), simulate_scene(SceneConfig(size=64), 9)
    np.testing.assert_array_equal(a.noisy, b.noisy)
    np.testing.assert_array_equal(a.clean_phase, b.clean_phase)
    c = simulate_scene(SceneConfig(size=64), 10)
    assert not np.array_equal(a.noisy, c.noisy)


def test_zero_sigma_is_clean():
    phase = simulate_clean(SceneConfig(size=64), 2)
    scene = add_noise(phase, SceneConfig(size=64), 2, sigma=0.0)
    np.testing.assert_allclose(np.abs(scene.noisy), 1.0, atol=1e-6)
    np.testing.assert_allclose(np.angle(scene.noisy * np.exp(-1j * phase)), 0, atol=1e-6)
    assert np.all(scene.gamma_true == 1.0)


@pytest.mark.parametrize("sigma, gamma", [(1.0, 0.70711), (3.0, 0.31623)])
def test_analytic_coherence_monte_carlo(sigma, gamma):
    assert coherence_from_sigma(sigma) == pytest.approx(gamma, abs=1e-5)
    phase = np.zeros((1000, 1000))
    scene = add_noise(phase, SceneConfig(), 1, sigma=sigma)
    u = scene.noisy.astype(np.complex128).ravel()
    s = np.exp(1j * phase).ravel()
    estimate = abs(np.mean(u * np.conj(s))) / np.sqrt(np.mean(abs(u) ** 2) * np.mean(abs(s) ** 2))
    assert estimate == pytest.approx(gamma, abs=0.003)


def test_noise_zero_mean():
    phase = np.zeros((1000, 1000))
    scene = add_noise(phase, SceneConfig(), 4, sigma=1.0)
    assert abs(np.mean(scene.noisy.astype(np.complex128) - 1.0)) < 0.01


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_windowed_coherence_calibration(sigma):
    cfg = SceneConfig()
    scene = add_noise(simulate_clean(cfg, 8), cfg, 8, sigma=sigma)
    measured = raw_coherence(scene.noisy, scene.clean, 11).mean()
    assert abs(measured - coherence_from_sigma(sigma)) <= 0.05


def test_sigma_field_range_and_gamma():
    scene = simulate_scene(SceneConfig(), 0)
    assert scene.sigma.min() == pytest.approx(0.2) and scene.sigma.max() == pytest.approx(2.0)
    np.testing.assert_allclose(scene.gamma_true, (1 + scene.sigma ** 2) ** -0.5, rtol=1e-6)
    assert scene.gamma_true.min() > 0 and scene.gamma_true.max() <= 1


def test_make_dataset(tmp_path):
    cfg = SceneConfig(size=64)
    manifest = make_dataset(4, cfg, 7, tmp_path)
    files = [f for f in os.listdir(tmp_path) if f != "manifest.txt"]
    assert len(files) == 12
    records, read_cfg = io.read_manifest(manifest)
    assert read_cfg == cfg
    assert [r.seed for r in records] == scene_seeds(7, 4)
    for r in records:
        scene = simulate_scene(cfg, r.seed)
        np.testing.assert_array_equal(io.read_raster(r.noisy), scene.noisy)
        np.testing.assert_array_equal(io.read_raster(r.gamma), scene.gamma_true)
        np.testing.assert_array_equal(io.read_raster(r.clean), scene.clean_phase.astype(np.float32))
