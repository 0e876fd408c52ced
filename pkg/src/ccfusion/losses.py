"""Bilateration and displacement losses on chart outputs.

Every loss takes 2D chart positions and returns per-sample (or per-pair)
values together with the gradient of their sum with respect to the
positions, so a caller can push it back through the network.
"""

import numpy as np

from .channel import SPEED_OF_LIGHT

EPS = 1e-9

VARIANTS = ("split_toa", "pair_toa", "hinge")


def lift3d(p, ue_height):
    """Append the known UE height to 2D chart points."""
    p = np.asarray(p, dtype=float)
    z = np.full(p.shape[:-1] + (1,), float(ue_height))
    return np.concatenate([p, z], axis=-1)


def _trp_distance(p, trps, ue_height):
    """3D distances ``(n, M)`` from lifted points to TRPs and their gradients wrt ``p``.

    The gradient array has shape ``(n, M, 2)``.
    """
    diff = lift3d(p, ue_height)[:, None, :] - np.asarray(trps, dtype=float)[None]
    d = np.sqrt(np.sum(diff ** 2, axis=-1) + EPS)
    return d, diff[..., :2] / d[..., None]


def toa_sample_loss(p, trps, toa, ue_height, c=SPEED_OF_LIGHT):
    """Per-sample ranging loss ``sum_m (||x_m - lift(p)|| - tau_m c)^2``.

    Parameters
    ----------
    p : (n, 2) chart positions
    trps : (M, 3) TRP positions
    toa : (n, M) times of arrival in seconds

    Returns
    -------
    loss : (n,)
    grad : (n, 2), gradient of ``loss.sum()``
    """
    p = np.atleast_2d(p)
    d, dd = _trp_distance(p, trps, ue_height)
    res = d - np.atleast_2d(toa) * c
    return np.sum(res ** 2, axis=1), np.sum(2.0 * res[..., None] * dd, axis=1)


def pair_toa_loss(pc, pf, trps, toa_c, toa_f, ue_height, c=SPEED_OF_LIGHT):
    """Differential ranging loss on a pair of samples.

    Per TRP the sample with the smaller ToA is treated as the closer one and
    the residual is ``d_close - d_far + |tau_c - tau_f| c``. Returns
    ``(loss, grad_c, grad_f)`` with ``loss`` of shape ``(B,)``.
    """
    pc, pf = np.atleast_2d(pc), np.atleast_2d(pf)
    dc, gc = _trp_distance(pc, trps, ue_height)
    df, gf = _trp_distance(pf, trps, ue_height)
    toa_c, toa_f = np.atleast_2d(toa_c), np.atleast_2d(toa_f)
    sign = np.where(toa_c <= toa_f, 1.0, -1.0)
    res = sign * (dc - df) + np.abs(toa_c - toa_f) * c
    w = (2.0 * res * sign)[..., None]
    return np.sum(res ** 2, axis=1), np.sum(w * gc, axis=1), -np.sum(w * gf, axis=1)


def hinge_loss(pc, pf, trps, power_c, power_f, margin, ue_height):
    """Margin bilateration loss ``sum_m max(d_close - d_far + margin, 0)``.

    The louder sample of the pair (higher received power at TRP ``m``) is the
    one expected to be closer. Returns ``(loss, grad_c, grad_f)``.
    """
    if margin <= 0:
        raise ValueError("hinge margin must be positive")
    pc, pf = np.atleast_2d(pc), np.atleast_2d(pf)
    dc, gc = _trp_distance(pc, trps, ue_height)
    df, gf = _trp_distance(pf, trps, ue_height)
    sign = np.where(np.atleast_2d(power_c) >= np.atleast_2d(power_f), 1.0, -1.0)
    res = sign * (dc - df) + margin
    active = (res > 0) * sign
    return (np.sum(np.maximum(res, 0.0), axis=1),
            np.sum(active[..., None] * gc, axis=1), -np.sum(active[..., None] * gf, axis=1))


def laser_loss(pc, pf, t_hat):
    """``(||p_c - p_f|| - T)^2`` with the planar chart displacement.

    Returns ``(loss, grad_c, grad_f)``.
    """
    pc, pf = np.atleast_2d(pc), np.atleast_2d(pf)
    diff = pc - pf
    dist = np.sqrt(np.sum(diff ** 2, axis=1) + EPS)
    res = dist - np.asarray(t_hat, dtype=float)
    g = (2.0 * res / dist)[:, None] * diff
    return res ** 2, g, -g


def total_pair_loss(pc, pf, trps, toa_c, toa_f, ue_height, lam=0.0, t_hat=0.0,
                    variant="split_toa", power_c=None, power_f=None, margin=1.0):
    """Fused loss of a batch of pairs, summed over TRPs.

    ``sum_m (L^b_m + lam L^laser)``; the laser term carries no TRP index so
    it enters ``M`` times. Returns ``(loss, grad_c, grad_f)`` per pair.
    """
    m = len(trps)
    if variant == "split_toa":
        lc, gc = toa_sample_loss(pc, trps, toa_c, ue_height)
        lf, gf = toa_sample_loss(pf, trps, toa_f, ue_height)
        loss = lc + lf
    elif variant == "pair_toa":
        loss, gc, gf = pair_toa_loss(pc, pf, trps, toa_c, toa_f, ue_height)
    elif variant == "hinge":
        if power_c is None or power_f is None:
            raise ValueError("hinge variant needs received power of both samples")
        loss, gc, gf = hinge_loss(pc, pf, trps, power_c, power_f, margin, ue_height)
    else:
        raise ValueError(f"unknown loss variant {variant!r}; choose from {VARIANTS}")
    lam = np.broadcast_to(np.asarray(lam, dtype=float), loss.shape)
    if np.any(lam != 0):
        ll, lgc, lgf = laser_loss(pc, pf, np.broadcast_to(t_hat, loss.shape))
        w = m * lam
        loss = loss + w * ll
        gc = gc + w[:, None] * lgc
        gf = gf + w[:, None] * lgf
    return loss, gc, gf
