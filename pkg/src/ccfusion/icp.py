"""Point-to-point ICP for 2D laser scans and scan-based displacement estimates."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .world import NO_RETURN


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    w = math.atan2(math.sin(theta), math.cos(theta))
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class RigidTransform2D:
    theta: float = 0.0
    t: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "t", (float(self.t[0]), float(self.t[1])))

    @property
    def rotation(self):
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def translation(self):
        return np.array(self.t)

    @property
    def distance(self):
        return math.hypot(*self.t)

    def apply(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other):
        """``self o other``: apply ``other`` first."""
        t = self.rotation @ other.translation + self.translation
        return RigidTransform2D(self.theta + other.theta, t)

    def inverse(self):
        r = self.rotation
        return RigidTransform2D(-self.theta, -(r.T @ self.translation))


IDENTITY = RigidTransform2D()


@dataclass(frozen=True)
class IcpConfig:
    max_iter: int = 100
    tol_translation: float = 1e-4
    tol_rotation: float = 1e-4
    reject_dist: float = 0.5
    quality_gate: float = 0.6
    # use every n-th source point; the target keeps all points
    source_stride: int = 1
    # match onto the segments joining neighbouring target beams, not just the beam points
    interpolate: bool = True


@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform2D
    rms_residual: float
    matched_fraction: float
    iterations: int
    converged: bool


def scan_to_points(scan):
    """Cartesian body-frame points of every beam that returned.

    ``scan`` is a ``LaserScan`` or a ``(K, 2)`` array of ``(range, angle)``.
    """
    arr = scan.as_array() if hasattr(scan, "as_array") else np.asarray(scan, dtype=float)
    r, phi = arr[:, 0], arr[:, 1]
    keep = (r != NO_RETURN) & (r > 0)
    return np.stack([r[keep] * np.cos(phi[keep]), r[keep] * np.sin(phi[keep])], axis=1)


def fit_rigid(src, dst):
    """Least-squares rotation + translation mapping ``src`` onto ``dst``.

    Returns ``None`` when the cross-covariance is rank deficient.
    """
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, sv, vt = np.linalg.svd(h)
    if sv[0] <= 0 or sv[1] <= 1e-9 * sv[0]:
        return None
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, d]) @ u.T
    theta = math.atan2(r[1, 0], r[0, 0])
    return RigidTransform2D(theta, mu_d - r @ mu_s)


def _on_polyline(points, dst, idx, max_len):
    """Closest points to ``points`` on the target segments adjacent to ``dst[idx]``.

    Target points are in beam order, so ``idx +/- 1`` is the neighbouring
    beam. Segments longer than ``max_len`` join different surfaces and are
    skipped.
    """
    best = dst[idx]
    best_d = np.linalg.norm(points - best, axis=1)
    a = best
    for j in (np.maximum(idx - 1, 0), np.minimum(idx + 1, len(dst) - 1)):
        ab = dst[j] - a
        len2 = np.einsum("ij,ij->i", ab, ab)
        ok = (len2 > 0) & (len2 <= max_len * max_len)
        s = np.clip(np.einsum("ij,ij->i", points - a, ab) / np.where(ok, len2, 1.0), 0.0, 1.0)
        q = a + s[:, None] * ab
        d = np.linalg.norm(points - q, axis=1)
        better = ok & (d < best_d)
        best = np.where(better[:, None], q, best)
        best_d = np.where(better, d, best_d)
    return best, best_d


def _close(a, b, cfg):
    return (math.hypot(a.t[0] - b.t[0], a.t[1] - b.t[1]) < cfg.tol_translation
            and abs(wrap_angle(a.theta - b.theta)) < cfg.tol_rotation)


def icp_register(source, target, init=IDENTITY, cfg=IcpConfig(), tree=None):
    """Register ``source`` onto ``target`` (so ``target ~ T(source)``).

    Pairs farther apart than ``max(reject_dist, 3 * median NN distance)`` are
    dropped, which lets a poor initial guess still pull in correspondences
    while the final iterations use the configured gate.
    """
    src = np.asarray(source, dtype=float)[::cfg.source_stride]
    dst = np.asarray(target, dtype=float)
    if len(src) < 3 or len(dst) < 3:
        return IcpResult(init, math.inf, 0.0, 0, False)
    if tree is None:
        tree = cKDTree(dst)
    current = init
    previous = None
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        moved = current.apply(src)
        dist, idx = tree.query(moved)
        match = dst[idx]
        if cfg.interpolate:
            match, dist = _on_polyline(moved, dst, idx, cfg.reject_dist)
        gate = max(cfg.reject_dist, 3.0 * float(np.median(dist)))
        mask = dist <= gate
        if mask.sum() < 3:
            return IcpResult(current, math.inf, 0.0, it, False)
        new = fit_rigid(src[mask], match[mask])
        if new is None:
            return IcpResult(current, math.inf, 0.0, it, False)
        # a 2-cycle between correspondence sets counts as convergence
        if _close(new, current, cfg) or (previous is not None and _close(new, previous, cfg)):
            current = new
            converged = True
            break
        previous, current = current, new
    dist, _ = tree.query(current.apply(src))
    inlier = dist <= cfg.reject_dist
    rms = float(np.sqrt(np.mean(dist[inlier] ** 2))) if inlier.any() else math.inf
    return IcpResult(current, rms, float(inlier.mean()), it, converged)


class LaserOdometry:
    """Consecutive-scan ICP chain over a scan sequence, computed lazily.

    ``scans`` is an ``(N, K, 2)`` array of ``(range, angle)`` beams.
    """

    def __init__(self, scans, cfg=IcpConfig()):
        self.scans = scans
        self.cfg = cfg
        self._points = {}
        self._trees = {}
        self._links = []  # IcpResult for k -> k+1
        self._poses = [IDENTITY]

    def __len__(self):
        return len(self.scans)

    def points(self, n):
        if n not in self._points:
            self._points[n] = scan_to_points(self.scans[n])
        return self._points[n]

    def tree(self, n):
        if n not in self._trees:
            self._trees[n] = cKDTree(self.points(n))
        return self._trees[n]

    def _extend(self, upto):
        while len(self._links) < upto:
            k = len(self._links)
            init = self._links[-1].transform if self._links and self._links[-1].converged \
                else IDENTITY
            res = icp_register(self.points(k + 1), self.points(k), init, self.cfg,
                               tree=self.tree(k))
            self._links.append(res)
            self._poses.append(self._poses[-1].compose(res.transform))

    def link(self, k):
        self._extend(k + 1)
        return self._links[k]

    def pose(self, n):
        """Odometry pose of scan ``n`` in the frame of scan 0."""
        self._extend(n)
        return self._poses[n]

    def relative(self, n, n2):
        """Odometry transform mapping scan ``n2`` points into the frame of scan ``n``."""
        return self.pose(n).inverse().compose(self.pose(n2))

    def link_quality(self, n, n2):
        lo, hi = min(n, n2), max(n, n2)
        self._extend(hi)
        links = self._links[lo:hi]
        if not all(r.converged for r in links):
            return 0.0
        return min(r.matched_fraction for r in links)


def estimate_displacement(scans, n, n2, cfg=IcpConfig(), odometry=None):
    """Planar UE displacement between steps ``n`` and ``n2`` from laser scans.

    Direct ICP between the two scans, seeded with the composed consecutive
    odometry. Falls back to the odometry distance (at half the weakest link
    quality) when the direct registration fails the quality gate. Returns
    ``(distance, quality)``; quality is 0 when any odometry link diverged.
    """
    if n == n2:
        return 0.0, 1.0
    if odometry is None:
        odometry = LaserOdometry(scans, cfg)
    lo, hi = min(n, n2), max(n, n2)
    chain_quality = odometry.link_quality(lo, hi)
    guess = odometry.relative(lo, hi)
    if chain_quality == 0.0:
        return guess.distance, 0.0
    direct = icp_register(odometry.points(hi), odometry.points(lo), guess, cfg,
                          tree=odometry.tree(lo))
    if direct.converged and direct.matched_fraction >= cfg.quality_gate:
        return direct.transform.distance, direct.matched_fraction
    return guess.distance, 0.5 * chain_quality
