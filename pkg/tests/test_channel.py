import numpy as np
import pytest
from scipy.stats import spearmanr

from ccfusion.channel import (SPEED_OF_LIGHT, ChannelParams, path_list, pulse_taps,
                              sample_dataset, synthesize_cir)
from ccfusion.dataset import write_dataset
from ccfusion.world import LaserConfig, build_scene, generate_trajectory


def _line_scene(d):
    """UE at the origin side, one TRP exactly ``d`` away in the plane (equal heights)."""
    return build_scene([(-1, -1), (40, -1), (40, 1), (-1, 1)], [(d, 0.0, 1.5)])


def test_speed_of_light_exact():
    assert SPEED_OF_LIGHT == 299792458.0
    assert ChannelParams().c_light == 299792458.0


def test_params_validation():
    with pytest.raises(ValueError):
        ChannelParams(sample_rate_hz=50e6)
    with pytest.raises(ValueError):
        ChannelParams(reflection_coeff=1.5)


def test_los_delay_lands_on_tap_five(los_params):
    d = 12.2208
    assert d / SPEED_OF_LIGHT * 122.88e6 == pytest.approx(5.009, abs=1e-3)
    cir = synthesize_cir(_line_scene(d), (0.0, 0.0, 1.5), los_params, seed=0)
    assert np.argmax(np.abs(cir[0])) == 5


def test_single_path_row_is_one_pulse(los_params):
    d = 12.2208
    cir = synthesize_cir(_line_scene(d), (0.0, 0.0, 1.5), los_params, seed=1)
    idx, vals = pulse_taps(d / SPEED_OF_LIGHT * los_params.sample_rate_hz, los_params)
    expected = np.zeros(los_params.n_taps)
    expected[idx] = np.abs(vals) / d
    np.testing.assert_allclose(np.abs(cir[0]), expected, atol=1e-15)


def test_single_path_energy(los_params):
    # far enough that the +/-8 tap window is not clipped at tap 0
    for d in (20.5, 25.0, 31.7, 38.2):
        cir = synthesize_cir(_line_scene(d), (0.0, 0.0, 1.5), los_params, seed=2)
        # direct sinc-sum oracle over the full window, independent of pulse_taps
        frac = d / SPEED_OF_LIGHT * los_params.sample_rate_hz
        x = np.arange(-40, 80) - frac
        w = np.where(np.abs(x) < 8, 0.5 * (1 + np.cos(np.pi * x / 8)), 0.0)
        s = np.sinc(100e6 / 122.88e6 * x) * w
        s /= np.linalg.norm(s)
        energy = np.sum(np.abs(cir[0]) ** 2)
        assert energy == pytest.approx(np.sum(s ** 2) / d ** 2, rel=1e-6)
        assert energy == pytest.approx(1.0 / d ** 2, rel=1e-6)


def test_closer_ue_gets_more_power(los_params, scene):
    near = synthesize_cir(scene, (2.0, 12.0, 1.5), los_params, seed=0)
    far = synthesize_cir(scene, (12.0, 3.0, 1.5), los_params, seed=0)
    assert np.linalg.norm(near[0]) > np.linalg.norm(far[0])


def test_reflections_one_per_visible_wall(scene):
    paths = path_list(scene, np.array([10.0, 7.5, 1.5]), scene.trp_positions[0], 0.5)
    assert len(paths) == 5
    assert paths[0][1] == 1.0 and all(g == 0.5 for _, g in paths[1:])
    assert all(length > paths[0][0] for length, _ in paths[1:])


def test_power_monotone_in_distance(scene, los_params):
    traj = generate_trajectory(scene, 300, seed=8)
    ds = sample_dataset(scene, traj, los_params, seed=8, with_laser=False)
    power = np.linalg.norm(ds.features, axis=2)
    dist = np.linalg.norm(ds.ground_truth[:, None, :] - scene.trp_positions[None], axis=2)
    for m in range(scene.n_trps):
        assert spearmanr(-dist[:, m], power[:, m]).statistic >= 0.99


def test_dataset_shapes(scene):
    traj = generate_trajectory(scene, 100, seed=0)
    ds = sample_dataset(scene, traj, seed=0)
    assert ds.features.shape == (100, 2, 49)
    assert ds.toa.shape == (100, 2)
    assert ds.laser.shape == (100, LaserConfig().n_beams, 2)
    assert ds.ground_truth.shape == (100, 3)
    assert ds.features.dtype == np.float32


def test_dataset_deterministic(scene, tmp_path):
    traj = generate_trajectory(scene, 50, seed=4)
    for name in ("a", "b"):
        write_dataset(sample_dataset(scene, traj, seed=4), tmp_path / name)
    for f in ("features.f32", "toa.f32", "laser.f32", "ground_truth.f32", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_laser_setting_does_not_change_radio(scene):
    traj = generate_trajectory(scene, 40, seed=4)
    a = sample_dataset(scene, traj, seed=4, with_laser=True)
    b = sample_dataset(scene, traj, seed=4, with_laser=False)
    assert a.features.tobytes() == b.features.tobytes()


def test_noiseless_toa_within_one_tap(scene, los_params):
    traj = generate_trajectory(scene, 500, seed=6)
    ds = sample_dataset(scene, traj, los_params, seed=6, with_laser=False)
    dist = np.linalg.norm(ds.ground_truth[:, None, :] - scene.trp_positions[None], axis=2)
    tap = SPEED_OF_LIGHT / 122.88e6
    assert np.all(np.abs(ds.toa.astype(float) * SPEED_OF_LIGHT - dist) <= tap)


def test_los_peak_dominates_at_defaults(scene):
    """At the default reflection/noise settings the strongest tap brackets the LoS delay."""
    traj = generate_trajectory(scene, 1500, seed=10)
    ds = sample_dataset(scene, traj, seed=10, with_laser=False)
    dist = np.linalg.norm(ds.ground_truth[:, None, :] - scene.trp_positions[None], axis=2)
    frac = dist / SPEED_OF_LIGHT * 122.88e6
    peak = np.round(ds.toa.astype(float) * 122.88e6)
    bracket = (peak >= np.floor(frac)) & (peak <= np.ceil(frac))
    assert bracket.mean() >= 0.97
