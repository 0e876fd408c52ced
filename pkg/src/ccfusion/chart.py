"""Self-supervised channel chart estimator (CIR magnitudes -> planar position)."""

import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .icp import IcpConfig, LaserOdometry, estimate_displacement
from .features import compute_rx_power
from .losses import VARIANTS, lift3d, total_pair_loss
from .nn import ChartNetwork
from .pso import PsoConfig, estimate_bias

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def sample_pairs(n, n_pairs, rng):
    """Uniform ordered pairs ``(a, b)`` with ``a != b``."""
    a = rng.integers(0, n, size=n_pairs)
    b = (a + rng.integers(1, n, size=n_pairs)) % n
    return np.stack([a, b], axis=1)


def laser_weights(pairs, scans, lambda_value, window, icp_cfg=IcpConfig()):
    """Per-pair laser weight ``lambda * quality`` and ICP displacement.

    Pairs farther apart in time than ``window`` get weight 0 and no ICP run.
    """
    lam = np.zeros(len(pairs))
    t_hat = np.zeros(len(pairs))
    if lambda_value == 0:
        return lam, t_hat
    if scans is None:
        raise ValueError("laser scans are required when lambda_value > 0")
    odo = LaserOdometry(scans, icp_cfg)
    near = np.flatnonzero(np.abs(pairs[:, 0] - pairs[:, 1]) <= window)
    # walk pairs in time order so the odometry chain grows monotonically
    for i in near[np.argsort(np.maximum(pairs[near, 0], pairs[near, 1]), kind="stable")]:
        dist, quality = estimate_displacement(scans, int(pairs[i, 0]), int(pairs[i, 1]),
                                              icp_cfg, odometry=odo)
        lam[i] = lambda_value * quality
        t_hat[i] = dist
    return lam, t_hat


class ChannelChart(BaseEstimator):
    """Chart network trained on ToA bilateration fused with laser displacement.

    Parameters
    ----------
    trp_positions : array (M, 3)
        Known TRP coordinates.
    ue_height : float
        Fixed UE height used to lift chart points to 3D.
    loss : {"split_toa", "pair_toa", "hinge"}
        Radio part of the pair loss.
    lambda_value, lambda_window : float, int
        Laser loss weight and the largest step gap it applies to.
    hinge_margin : float
        Margin ``d`` of the hinge variant, meters.
    epochs, pairs_per_epoch, batch_size, learning_rate
        Adam schedule. One fixed pool of ``pairs_per_epoch`` uniform pairs is
        drawn per fit and reshuffled every epoch.
    output_scale : float
        Fixed gain on the network output, meters per unit activation.
    icp_stride : int
        Source-point subsampling for scan matching.
    random_state : int
        Seeds initialisation, pair sampling and shuffling.
    """

    def __init__(self, trp_positions=None, ue_height=1.5, loss="split_toa", lambda_value=5.0,
                 lambda_window=500, hinge_margin=1.0, epochs=6, pairs_per_epoch=20000,
                 batch_size=64, learning_rate=1e-3, output_scale=10.0, icp_stride=2,
                 random_state=0, verbose=False):
        self.trp_positions = trp_positions
        self.ue_height = ue_height
        self.loss = loss
        self.lambda_value = lambda_value
        self.lambda_window = lambda_window
        self.hinge_margin = hinge_margin
        self.epochs = epochs
        self.pairs_per_epoch = pairs_per_epoch
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.output_scale = output_scale
        self.icp_stride = icp_stride
        self.random_state = random_state
        self.verbose = verbose

    def _validate(self, X, toa):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3:
            raise ValueError(f"X must be (N, M, C_bar), got shape {X.shape}")
        trps = np.asarray(self.trp_positions, dtype=float)
        if trps.ndim != 2 or trps.shape != (X.shape[1], 3):
            raise ValueError(f"trp_positions must be ({X.shape[1]}, 3)")
        toa = np.asarray(toa, dtype=float)
        if toa.shape != X.shape[:2]:
            raise ValueError(f"toa must be {X.shape[:2]}, got {toa.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(toa))):
            raise ValueError("features and toa must be finite")
        return X, toa, trps

    def fit(self, X, toa, scans=None):
        X, toa, trps = self._validate(X, toa)
        if self.loss not in VARIANTS:
            raise ValueError(f"loss must be one of {VARIANTS}")
        if self.lambda_value < 0 or self.lambda_window < 0:
            raise ValueError("lambda_value and lambda_window must be >= 0")
        n = len(X)
        if n < 2:
            raise ValueError("need at least 2 time steps")
        rng = np.random.default_rng(self.random_state)
        std = X.std(axis=0)
        self.network_ = ChartNetwork(X.shape[1:], mean=X.mean(axis=0),
                                     std=np.where(std > 0, std, 1.0),
                                     output_scale=self.output_scale,
                                     seed=int(rng.integers(2 ** 31)))
        pairs = sample_pairs(n, self.pairs_per_epoch, rng)
        lam_value = self.lambda_value if self.lambda_window > 0 else 0.0
        lam, t_hat = laser_weights(pairs, scans, lam_value, self.lambda_window,
                                   IcpConfig(source_stride=self.icp_stride))
        power = compute_rx_power(X) if self.loss == "hinge" else None
        net = self.network_
        opt = Adam(net.parameters(), lr=self.learning_rate)
        history = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(pairs))
            for start in range(0, len(order), self.batch_size):
                sel = order[start:start + self.batch_size]
                value = self._step(net, opt, X, toa, trps, pairs[sel], lam[sel], t_hat[sel],
                                   power)
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, step {len(history)}; "
                        "try a smaller learning_rate")
                history.append(value)
            if self.verbose:
                log.info("epoch %d loss %.4f", epoch, np.mean(history[-len(order) // self.batch_size:]))
        self.loss_history_ = np.asarray(history)
        self.pairs_ = pairs
        self.pair_lambda_ = lam
        self.pair_displacement_ = t_hat
        self.bias_ = np.zeros(3)
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def _step(self, net, opt, X, toa, trps, pairs, lam, t_hat, power):
        idx, inv = np.unique(pairs.ravel(), return_inverse=True)
        inv = inv.reshape(pairs.shape)
        out = net.forward(X[idx]).astype(float)
        c, f = inv[:, 0], inv[:, 1]
        kw = {}
        if power is not None:
            kw = {"power_c": power[idx][c], "power_f": power[idx][f], "margin": self.hinge_margin}
        loss, gc, gf = total_pair_loss(out[c], out[f], trps, toa[idx][c], toa[idx][f],
                                       self.ue_height, lam, t_hat, self.loss, **kw)
        grad = np.zeros_like(out)
        np.add.at(grad, c, gc)
        np.add.at(grad, f, gf)
        grad /= len(pairs)
        net.backward(grad.astype(net.dtype))
        opt.step(net.gradients())
        return float(loss.mean())

    def transform(self, X):
        """Raw 2D chart coordinates ``f(Y)`` without offset correction."""
        check_is_fitted(self, "network_")
        X = np.asarray(X, dtype=float)
        out = [self.network_.forward(X[i:i + 1024]) for i in range(0, len(X), 1024)]
        return np.concatenate(out).astype(float) if out else np.empty((0, 2))

    def estimate_offset(self, X, toa, bounds, cfg=PsoConfig()):
        """Fit ``bias_`` by PSO on the L1 ToA residual of ``(X, toa)``."""
        check_is_fitted(self, "network_")
        X, toa, trps = self._validate(X, toa)
        self.bias_ = estimate_bias(self.transform(X), toa, trps, self.ue_height, bounds, cfg)
        return self.bias_

    def predict(self, X):
        """Offset-corrected 3D positions ``lift(f(Y)) - b``."""
        return lift3d(self.transform(X), self.ue_height) - self.bias_
