"""Neighbourhood-preservation scores and localisation error statistics."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist


@dataclass
class EvalReport:
    ct: float
    tw: float
    ce90: float
    mean_err: float
    k_neighbors: int
    n_steps: int
    per_step_errors: np.ndarray

    def summary(self):
        """JSON-friendly dict without the per-step array."""
        d = asdict(self)
        d.pop("per_step_errors")
        return d


def default_k(n):
    return max(1, int(np.floor(0.05 * n)))


def _check_k(n, k):
    if n < 4:
        raise ValueError("need at least 4 points")
    if not (1 <= k and 2 * n - 3 * k - 1 > 0 and k < n - 1):
        raise ValueError(f"k={k} out of range for N={n}")


def _rank_matrix(points):
    """``rank[i, j]``: position of ``j`` among the neighbours of ``i`` (1-based).

    Distance ties are broken by index; ``i`` itself gets rank 0.
    """
    d = cdist(points, points)
    n = len(d)
    np.fill_diagonal(d, -np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    rank = np.empty((n, n), dtype=np.int64)
    rank[np.arange(n)[:, None], order] = np.arange(n)[None, :]
    return rank


def trustworthiness(true_pts, chart_pts, k):
    """Penalise chart neighbours that are not true neighbours.

    ``1 - 2 / (N k (2N - 3k - 1)) * sum_i sum_{j in U_k(i)} (r(i, j) - k)``
    where ``U_k(i)`` are the chart k-NN of ``i`` outside its true k-NN and
    ``r`` ranks in the true space.
    """
    true_pts = np.asarray(true_pts, dtype=float)
    chart_pts = np.asarray(chart_pts, dtype=float)
    if len(true_pts) != len(chart_pts):
        raise ValueError("point sets differ in length")
    n = len(true_pts)
    _check_k(n, k)
    r_true = _rank_matrix(true_pts)
    r_chart = _rank_matrix(chart_pts)
    intruders = (r_chart >= 1) & (r_chart <= k) & (r_true > k)
    penalty = np.sum((r_true - k)[intruders])
    return float(1.0 - 2.0 / (n * k * (2 * n - 3 * k - 1)) * penalty)


def continuity(true_pts, chart_pts, k):
    """Trustworthiness with the two spaces swapped."""
    return trustworthiness(chart_pts, true_pts, k)


def ce90(errors):
    """90th percentile of the errors, linear interpolation between order statistics."""
    errors = np.asarray(errors, dtype=float).ravel()
    if errors.size == 0:
        raise ValueError("ce90 of an empty error list")
    return float(np.percentile(errors, 90))


def evaluate(estimates, ground_truth, k=None):
    """Score planar position estimates against ground truth.

    Both arrays are ``(N, 2)`` or ``(N, 3)``; only ``x, y`` are compared.
    """
    if ground_truth is None:
        raise ValueError("evaluation needs ground-truth positions")
    est = np.asarray(estimates, dtype=float)[:, :2]
    gt = np.asarray(ground_truth, dtype=float)[:, :2]
    if est.shape != gt.shape:
        raise ValueError(f"estimates {est.shape} and ground truth {gt.shape} differ")
    n = len(gt)
    k = default_k(n) if k is None else int(k)
    err = np.linalg.norm(est - gt, axis=1)
    return EvalReport(ct=continuity(gt, est, k), tw=trustworthiness(gt, est, k),
                      ce90=ce90(err), mean_err=float(err.mean()), k_neighbors=k,
                      n_steps=n, per_step_errors=err)
