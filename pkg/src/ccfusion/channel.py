"""Delay-domain CIR synthesis: LoS path plus first-order wall images."""

import math
from dataclasses import dataclass

import numpy as np

from .world import LaserConfig, simulate_laser_scan

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class ChannelParams:
    bandwidth_hz: float = 100e6
    sample_rate_hz: float = 122.88e6
    n_taps: int = 64
    carrier_wavelength: float = SPEED_OF_LIGHT / 3.5e9
    snr_db: float = 25.0
    reflection_coeff: float = 0.5
    c_light: float = SPEED_OF_LIGHT
    pulse_half_width: int = 8

    def __post_init__(self):
        if self.sample_rate_hz < self.bandwidth_hz:
            raise ValueError("sample_rate_hz must be >= bandwidth_hz")
        if not 0.0 <= self.reflection_coeff <= 1.0:
            raise ValueError("reflection_coeff must lie in [0, 1]")
        if self.n_taps < 1:
            raise ValueError("n_taps must be positive")

    @property
    def tap_length(self):
        """Range spanned by one delay tap, in meters."""
        return self.c_light / self.sample_rate_hz


def pulse_taps(delay_taps, params):
    """Unit-energy windowed sinc centred at a fractional tap index.

    Returns ``(indices, values)`` of the nonzero support that falls inside
    the CIR. Normalisation uses the whole window, so the energy of a path is
    exactly its squared amplitude unless the pulse is clipped by the CIR end.
    """
    w = params.pulse_half_width
    centre = int(math.floor(delay_taps))
    idx = np.arange(centre - w, centre + w + 2)
    x = idx - delay_taps
    win = np.where(np.abs(x) < w, 0.5 * (1.0 + np.cos(np.pi * x / w)), 0.0)
    vals = np.sinc(params.bandwidth_hz / params.sample_rate_hz * x) * win
    vals /= np.linalg.norm(vals)
    keep = (idx >= 0) & (idx < params.n_taps)
    return idx[keep], vals[keep]


def image_sources(trp, room_polygon):
    """Mirror a TRP across every wall line; returns ``(images, walls)``."""
    v = np.asarray(room_polygon, dtype=float)
    a, b = v, np.roll(v, -1, axis=0)
    e = b - a
    n = np.stack([-e[:, 1], e[:, 0]], axis=1) / np.linalg.norm(e, axis=1, keepdims=True)
    dist = np.sum((trp[None, :2] - a) * n, axis=1)
    img = trp[None, :2] - 2.0 * dist[:, None] * n
    z = np.full((len(v), 1), trp[2])
    return np.hstack([img, z]), np.stack([a, b], axis=1)


def _segments_cross(p, q, walls):
    """True where segment p->q crosses each wall segment (2D)."""
    a, b = walls[:, 0], walls[:, 1]
    d = q - p
    e = b - a
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    w = a - p
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
        s = (w[:, 0] * d[1] - w[:, 1] * d[0]) / denom
    return (np.abs(denom) > 1e-12) & (t >= 0) & (t <= 1) & (s >= 0) & (s <= 1)


def path_list(scene, ue_position, trp, reflection_coeff):
    """``(length, amplitude)`` of the LoS path and valid first-order reflections."""
    ue = np.asarray(ue_position, dtype=float)
    paths = [(float(np.linalg.norm(trp - ue)), 1.0)]
    if reflection_coeff > 0:
        images, walls = image_sources(trp, scene.room_polygon)
        for img, wall in zip(images, walls):
            if _segments_cross(ue[:2], img[:2], wall[None])[0]:
                paths.append((float(np.linalg.norm(img - ue)), reflection_coeff))
    return paths


def synthesize_cir(scene, ue_position, params=ChannelParams(), seed=None, rng=None):
    """Complex M x C impulse response for a UE position.

    Each path has amplitude ``gain / length`` and an i.i.d. uniform phase,
    deposited with :func:`pulse_taps`. Complex AWGN is added at ``snr_db``
    relative to the LoS path power of each row.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    trps = scene.trp_positions
    cir = np.zeros((len(trps), params.n_taps), dtype=complex)
    fs = params.sample_rate_hz
    for m, trp in enumerate(trps):
        paths = path_list(scene, ue_position, trp, params.reflection_coeff)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=len(paths))
        for (length, gain), phi in zip(paths, phases):
            idx, vals = pulse_taps(length / params.c_light * fs, params)
            cir[m, idx] += gain / length * np.exp(1j * phi) * vals
        if np.isfinite(params.snr_db):
            los_power = (1.0 / paths[0][0]) ** 2
            sigma = math.sqrt(los_power / 10 ** (params.snr_db / 10) / 2.0)
            cir[m] += sigma * (rng.standard_normal(params.n_taps)
                               + 1j * rng.standard_normal(params.n_taps))
    return cir


def sample_dataset(scene, trajectory, params=ChannelParams(), laser=LaserConfig(),
                   seed=0, c_bar=49, with_laser=True):
    """Simulate CIR features, ToA and laser scans along a trajectory.

    Ground truth is kept in its own field of the returned dataset.
    """
    from .dataset import Dataset
    from .features import extract_toa, truncate_and_abs

    rng = np.random.default_rng(seed)
    # independent streams so laser settings never perturb the radio draws
    radio_rng, laser_rng = (np.random.default_rng(s) for s in rng.spawn(2))
    n = len(trajectory)
    features = np.empty((n, scene.n_trps, c_bar), dtype=np.float32)
    toa = np.empty((n, scene.n_trps), dtype=np.float32)
    scans = np.empty((n, laser.n_beams, 2), dtype=np.float32) if with_laser else None
    for i, (u, h) in enumerate(zip(trajectory.positions, trajectory.headings)):
        cir = synthesize_cir(scene, u, params, rng=radio_rng)
        y = truncate_and_abs(cir, c_bar)
        features[i] = y
        toa[i] = extract_toa(y, params.sample_rate_hz)
        if with_laser:
            scans[i] = simulate_laser_scan(scene, (u[0], u[1], h), laser,
                                           rng=laser_rng).as_array()
    return Dataset(
        features=features,
        toa=toa,
        trp_positions=np.asarray(scene.trp_positions, dtype=float),
        sample_rate_hz=params.sample_rate_hz,
        dt=trajectory.dt,
        ue_height=scene.ue_height,
        laser=scans,
        ground_truth=trajectory.positions.astype(np.float32),
        room_bbox=scene.bbox,
    )
