"""Global-best particle swarm optimisation, chart offset search and a TDoA baseline."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .channel import SPEED_OF_LIGHT
from .losses import lift3d


@dataclass(frozen=True)
class PsoConfig:
    swarm_size: int = 100
    iterations: int = 300
    inertia: float = 0.72
    c1: float = 1.49
    c2: float = 1.49
    seed: int = 0

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValueError("swarm_size must be >= 2")
        if not 0.0 < self.inertia <= 1.0:
            raise ValueError("inertia must lie in (0, 1]")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def _as_bounds(bounds):
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError("bounds must be a (D, 2) array of [low, high]")
    if not np.all(np.isfinite(b)) or np.any(b[:, 1] < b[:, 0]):
        raise ValueError("bounds must be finite with low <= high")
    return b[:, 0], b[:, 1]


def pso_batch(objective, bounds, n_problems, cfg=PsoConfig(), init=None):
    """Run ``n_problems`` independent swarms in lockstep.

    ``objective`` maps an ``(S, P, D)`` array of candidates to ``(S, P)``
    values. ``init`` optionally fixes the first particles of every swarm
    (shape ``(k, D)`` shared, or ``(S, k, D)``). Velocities are clamped to the
    bound widths and positions clipped to the box.

    Returns ``(best_x, best_f, trace)`` with ``trace`` the global-best value
    per iteration, shape ``(iterations + 1, S)``.
    """
    lo, hi = _as_bounds(bounds)
    rng = np.random.default_rng(cfg.seed)
    s, p, d = n_problems, cfg.swarm_size, len(lo)
    span = hi - lo
    x = lo + rng.random((s, p, d)) * span
    if init is not None:
        init = np.asarray(init, dtype=float)
        init = np.broadcast_to(init, (s,) + init.shape[-2:])
        k = min(init.shape[1], p)
        x[:, :k] = np.clip(init[:, :k], lo, hi)
    v = (rng.random((s, p, d)) * 2.0 - 1.0) * span
    f = objective(x)
    pbest, pbest_f = x.copy(), f.copy()
    g = np.argmin(f, axis=1)
    rows = np.arange(s)
    gbest, gbest_f = x[rows, g].copy(), f[rows, g].copy()
    trace = [gbest_f.copy()]
    for _ in range(cfg.iterations):
        r1, r2 = rng.random((2, s, p, d))
        v = (cfg.inertia * v + cfg.c1 * r1 * (pbest - x)
             + cfg.c2 * r2 * (gbest[:, None, :] - x))
        v = np.clip(v, -span, span)
        x = np.clip(x + v, lo, hi)
        f = objective(x)
        better = f < pbest_f
        pbest[better], pbest_f[better] = x[better], f[better]
        g = np.argmin(pbest_f, axis=1)
        improved = pbest_f[rows, g] < gbest_f
        gbest[improved] = pbest[rows, g][improved]
        gbest_f[improved] = pbest_f[rows, g][improved]
        trace.append(gbest_f.copy())
    return gbest, gbest_f, np.array(trace)


def pso_minimize(objective, bounds, cfg=PsoConfig(), init=None):
    """Minimise ``objective`` (``(P, D) -> (P,)``) inside a box.

    Returns ``(x_best, f_best)``.
    """
    init = None if init is None else np.asarray(init, dtype=float)[None]
    x, f, _ = pso_batch(lambda z: objective(z[0])[None], bounds, 1, cfg, init)
    return x[0], float(f[0])


def offset_objective(positions, toa, trps, ue_height, c=SPEED_OF_LIGHT):
    """L1 ToA residual ``b -> sum_n sum_m | ||lift(p_n) - b - x_m|| / c - tau_mn |``.

    Candidates are planar offsets ``(P, 2)``; the vertical component of the
    offset is zero.
    """
    q = lift3d(positions, ue_height)
    toa = np.asarray(toa, dtype=float)
    trps = np.asarray(trps, dtype=float)

    def f(b):
        b = np.atleast_2d(b)
        total = np.zeros(len(b))
        for m, x in enumerate(trps):
            # (P, N) distances, one TRP at a time to bound memory
            dx = q[None, :, 0] - b[:, 0:1] - x[0]
            dy = q[None, :, 1] - b[:, 1:2] - x[1]
            dz = q[None, :, 2] - x[2]
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            total += np.abs(dist / c - toa[None, :, m]).sum(axis=1)
        return total

    return f


def estimate_bias(positions, toa, trps, ue_height, bounds, cfg=PsoConfig()):
    """Planar chart offset ``b*`` (returned as a 3-vector with ``b_z = 0``).

    ``positions`` are raw chart outputs of the training steps; ``bounds`` is
    the ``(2, 2)`` search box for ``(b_x, b_y)``. ``b = 0`` is always one of
    the initial particles, so the result never scores worse than no offset.
    """
    obj = offset_objective(positions, toa, trps, ue_height)
    b, _ = pso_minimize(obj, bounds, cfg, init=np.zeros((1, 2)))
    return np.array([b[0], b[1], 0.0])


def offset_bounds(room_bbox, pad=5.0):
    """Search box ``room bbox +/- pad`` as ``[[x_lo, x_hi], [y_lo, y_hi]]``."""
    x0, y0, x1, y1 = np.asarray(room_bbox, dtype=float)
    return np.array([[x0 - pad, x1 + pad], [y0 - pad, y1 + pad]])


def localize(positions, bias, ue_height):
    """``lift(p) - b`` for raw chart outputs ``p``."""
    return lift3d(positions, ue_height) - np.asarray(bias, dtype=float)


def tdoa_objective(toa, trps, ue_height, c=SPEED_OF_LIGHT):
    """Batched TDoA residual with TRP 0 as reference.

    ``toa`` is ``(S, M)``; the returned function maps ``(S, P, 2)`` candidates
    to ``(S, P)`` values ``sum_{m>=1} |(d_m - d_0)/c - (tau_m - tau_0)|``.
    """
    toa = np.atleast_2d(np.asarray(toa, dtype=float))
    trps = np.asarray(trps, dtype=float)
    tdoa = toa[:, 1:] - toa[:, :1]

    def f(u):
        dz2 = (ue_height - trps[:, 2]) ** 2
        d = np.sqrt((u[..., None, 0] - trps[:, 0]) ** 2 + (u[..., None, 1] - trps[:, 1]) ** 2
                    + dz2)
        pred = (d[..., 1:] - d[..., :1]) / c
        return np.abs(pred - tdoa[:, None, :]).sum(axis=-1)

    return f


def tdoa_pso_baseline(toa, trps, ue_height, bounds, cfg=PsoConfig(), chunk=256):
    """Per-step TDoA trilateration by PSO over the room box.

    ``toa`` is ``(N, M)`` with ``M >= 3``. Steps are solved in fixed chunks,
    each chunk with its own seed derived from ``cfg.seed`` and the chunk
    index, so results do not depend on anything but the inputs.
    Returns ``(N, 2)`` planar positions.
    """
    toa = np.atleast_2d(np.asarray(toa, dtype=float))
    trps = np.asarray(trps, dtype=float)
    if trps.shape[0] < 3 or toa.shape[1] != trps.shape[0]:
        raise ValueError("TDoA trilateration needs at least 3 TRPs with matching ToA columns")
    out = np.empty((len(toa), 2))
    for i, start in enumerate(range(0, len(toa), chunk)):
        part = toa[start:start + chunk]
        sub = PsoConfig(cfg.swarm_size, cfg.iterations, cfg.inertia, cfg.c1, cfg.c2,
                        seed=(cfg.seed, i))
        x, _, _ = pso_batch(tdoa_objective(part, trps, ue_height), bounds, len(part), sub)
        out[start:start + chunk] = x
    return out


class TdoaPsoLocalizer(BaseEstimator):
    """Predict-only estimator wrapping :func:`tdoa_pso_baseline`.

    ``predict`` takes an ``(N, M)`` ToA array and returns ``(N, 3)`` positions
    at the known UE height.
    """

    def __init__(self, trp_positions=None, ue_height=1.5, room_bbox=(0.0, 0.0, 20.0, 15.0),
                 swarm_size=100, iterations=300, random_state=0):
        self.trp_positions = trp_positions
        self.ue_height = ue_height
        self.room_bbox = room_bbox
        self.swarm_size = swarm_size
        self.iterations = iterations
        self.random_state = random_state

    def fit(self, X=None, y=None):
        return self

    def predict(self, toa):
        x0, y0, x1, y1 = self.room_bbox
        cfg = PsoConfig(self.swarm_size, self.iterations, seed=self.random_state)
        xy = tdoa_pso_baseline(toa, self.trp_positions, self.ue_height,
                               [[x0, x1], [y0, y1]], cfg)
        return lift3d(xy, self.ue_height)
