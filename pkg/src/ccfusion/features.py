"""CIR preprocessing: truncated magnitudes, ToA picking and received power."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .channel import SPEED_OF_LIGHT


class NoPathError(ValueError):
    """Raised when a CIR row carries no energy at all."""


def truncate_and_abs(cir, c_bar):
    """Element-wise modulus of the first ``c_bar`` taps.

    Works on a single ``(M, C)`` matrix or a stack ``(..., M, C)``.
    """
    cir = np.asarray(cir)
    if not 1 <= c_bar <= cir.shape[-1]:
        raise ValueError(f"c_bar must lie in [1, {cir.shape[-1]}], got {c_bar}")
    return np.abs(cir[..., :c_bar])


def extract_toa(feature, sample_rate):
    """LoS time of arrival per row: index of the strongest tap over ``sample_rate``.

    Tap 0 is zero delay; ties resolve to the earliest tap (``np.argmax``).
    """
    y = np.asarray(feature, dtype=float)
    if np.any(~np.any(y != 0, axis=-1)):
        raise NoPathError("CIR row is all zeros, no path to detect")
    return np.argmax(y, axis=-1) / sample_rate


def compute_rx_power(cir):
    """Received power per row in dB, ``20 log10 ||row||``."""
    norm = np.linalg.norm(np.asarray(cir), axis=-1)
    if np.any(norm == 0):
        raise NoPathError("zero CIR row has no received power")
    return 20.0 * np.log10(norm)


def check_power_distance(features, ground_truth, trp_positions, margin_db=0.0,
                         n_triples=10_000, seed=0):
    """Fraction of sampled ``(n_c, n_f, m)`` triples where the closer sample is louder.

    Triples are drawn uniformly and oriented so that step ``n_c`` is strictly
    closer to TRP ``m`` than step ``n_f``; the returned rate is the share
    satisfying ``gamma[n_c, m] > gamma[n_f, m] + margin_db``.
    """
    if ground_truth is None:
        raise ValueError("power/distance diagnostic needs ground-truth positions")
    gamma = compute_rx_power(features)
    u = np.asarray(ground_truth, dtype=float)
    x = np.asarray(trp_positions, dtype=float)
    dist = np.linalg.norm(u[:, None, :] - x[None, :, :], axis=-1)
    rng = np.random.default_rng(seed)
    n, m_count = dist.shape
    a = rng.integers(0, n, size=n_triples)
    b = rng.integers(0, n, size=n_triples)
    m = rng.integers(0, m_count, size=n_triples)
    da, db = dist[a, m], dist[b, m]
    keep = da != db
    close = np.where(da < db, a, b)[keep]
    far = np.where(da < db, b, a)[keep]
    m = m[keep]
    if close.size == 0:
        return float("nan")
    return float(np.mean(gamma[close, m] > gamma[far, m] + margin_db))


class CirFeatureExtractor(TransformerMixin, BaseEstimator):
    """Turn complex CIR stacks ``(N, M, C)`` into truncated magnitudes.

    Parameters
    ----------
    c_bar : int
        Number of leading taps kept.
    sample_rate_hz : float
        Used by :meth:`toa` to convert the picked tap into seconds.
    """

    def __init__(self, c_bar=49, sample_rate_hz=122.88e6):
        self.c_bar = c_bar
        self.sample_rate_hz = sample_rate_hz

    def fit(self, X, y=None):
        X = np.asarray(X)
        if X.ndim != 3:
            raise ValueError(f"expected (N, M, C) CIR stack, got shape {X.shape}")
        if not 1 <= self.c_bar <= X.shape[-1]:
            raise ValueError(f"c_bar must lie in [1, {X.shape[-1]}]")
        self.n_trps_ = X.shape[1]
        return self

    def transform(self, X):
        return truncate_and_abs(X, self.c_bar)

    def toa(self, X):
        return extract_toa(self.transform(X), self.sample_rate_hz)

    def ranges(self, X):
        return self.toa(X) * SPEED_OF_LIGHT
