"""Reference localizers: RADAR KNN, SRL-KNN, Gaussian-kernel posterior, Kalman tracking, MLP/MLNN.

All fingerprint distances are Euclidean over imputed dBm features.  RP
fingerprints for the KNN family are per-RP means over the stored scans.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import FingerprintDatabase, TestTrack, impute
from .nncore import FeedForward, OptimizerState, clip_global_norm, mean_distance, optimizer_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KnnConfig:
    k: int = 3
    srl_sigma: float = 2.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class KernelConfig:
    bandwidth: float = 4.0

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")


@dataclass(frozen=True)
class KalmanNoise:
    process: float = 0.5        # white-acceleration spectral density (m^2/s^3)
    measurement: float = 1.5    # measurement std (m)
    delta_t: float = 1.0
    initial_velocity_std: float = 1.0


def _fp_distances(means, fingerprint):
    q = impute(fingerprint).reshape(-1)
    if q.shape[0] != means.shape[1]:
        raise ValueError(f"fingerprint has {q.shape[0]} features, database has {means.shape[1]}")
    return np.linalg.norm(means - q, axis=1)


def _top_k_mean(locations, scores, k):
    order = np.argsort(scores, kind="stable")  # ties resolved by RP index
    return locations[order[:min(k, len(order))]].mean(axis=0)


def radar_knn(db: FingerprintDatabase, fingerprint, k: int = 3, means=None) -> np.ndarray:
    """Mean location of the ``k`` RPs closest in fingerprint space."""
    means = db.mean_fingerprints() if means is None else means
    return _top_k_mean(db.locations, _fp_distances(means, fingerprint), k)


def srl_knn(db: FingerprintDatabase, fingerprint, prev_estimate, k: int = 3, srl_sigma: float = 2.0,
            means=None) -> np.ndarray:
    """KNN with feature distances inflated by ``exp(d^2 / 2 sigma^2)`` of each RP's
    distance ``d`` from the previous estimate."""
    means = db.mean_fingerprints() if means is None else means
    dist = _fp_distances(means, fingerprint)
    if np.isfinite(srl_sigma):
        d2 = np.sum((db.locations - np.asarray(prev_estimate, float)) ** 2, axis=1)
        # log domain keeps far RPs finite and ordered
        with np.errstate(divide="ignore"):
            score = np.log(dist) + d2 / (2.0 * srl_sigma ** 2)
    else:
        score = dist
    return _top_k_mean(db.locations, score, k)


def radar_track(db, track: TestTrack, k=3) -> np.ndarray:
    means = db.mean_fingerprints()
    return np.array([radar_knn(db, f, k, means) for f in track.fingerprints()]).reshape(-1, 2)


def srl_knn_track(db, track: TestTrack, k=3, srl_sigma=2.0) -> np.ndarray:
    """Sequential SRL-KNN from the known initial position."""
    means = db.mean_fingerprints()
    prev = track.locations[0]
    out = []
    for f in track.fingerprints():
        prev = srl_knn(db, f, prev, k, srl_sigma, means)
        out.append(prev)
    return np.array(out).reshape(-1, 2)


@dataclass
class KernelEstimate:
    location: np.ndarray
    fallback: bool


class KernelLocalizer:
    """Posterior over RPs from per-feature Gaussian kernels on the stored scans."""

    def __init__(self, db: FingerprintDatabase, config: KernelConfig = KernelConfig()):
        self.db = db
        self.config = config
        self._scans = [impute(s) for s in db.scans]
        self._means = db.mean_fingerprints()

    def log_weights(self, fingerprint) -> np.ndarray:
        q = impute(fingerprint).reshape(-1)
        h = self.config.bandwidth
        out = np.empty(self.db.size)
        for i, s in enumerate(self._scans):
            z = -0.5 * ((s - q) / h) ** 2                  # (S1, N)
            zmax = z.max(axis=0)
            per_feature = zmax + np.log(np.exp(z - zmax).mean(axis=0))
            out[i] = per_feature.sum()
        return out

    def localize(self, fingerprint) -> KernelEstimate:
        lw = self.log_weights(fingerprint)
        top = lw.max()
        if not np.isfinite(top):
            loc = radar_knn(self.db, fingerprint, 1, self._means)
            return KernelEstimate(loc, True)
        w = np.exp(lw - top)
        total = w.sum()
        if total <= 0 or not np.isfinite(total):
            return KernelEstimate(radar_knn(self.db, fingerprint, 1, self._means), True)
        return KernelEstimate((w / total) @ self.db.locations, False)


def kernel_localize(db, fingerprint, bandwidth=4.0) -> KernelEstimate:
    return KernelLocalizer(db, KernelConfig(bandwidth)).localize(fingerprint)


def kernel_track(db, track: TestTrack, bandwidth=4.0) -> np.ndarray:
    loc = KernelLocalizer(db, KernelConfig(bandwidth))
    return np.array([loc.localize(f).location for f in track.fingerprints()]).reshape(-1, 2)


@dataclass
class KalmanState:
    x: np.ndarray      # (4,) x, y, vx, vy
    P: np.ndarray      # (4, 4)
    clamped: int = 0   # updates whose covariance needed repair


def _cv_matrices(noise: KalmanNoise):
    dt = noise.delta_t
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    q = noise.process
    Q1 = q * np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]])
    Q = np.zeros((4, 4))
    Q[np.ix_([0, 2], [0, 2])] = Q1
    Q[np.ix_([1, 3], [1, 3])] = Q1
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    return F, Q, H


def kalman_update(state: KalmanState, z, noise: KalmanNoise) -> KalmanState:
    """Constant-velocity predict then position update (Joseph form)."""
    F, Q, H = _cv_matrices(noise)
    x = F @ state.x
    P = F @ state.P @ F.T + Q
    if np.isfinite(noise.measurement):
        R = np.eye(2) * noise.measurement ** 2
        S = H @ P @ H.T + R
        K = np.linalg.solve(S.T, (P @ H.T).T).T if np.linalg.det(S) > 0 else np.linalg.pinv(S) @ H @ P
        x = x + K @ (np.asarray(z, float) - H @ x)
        A = np.eye(4) - K @ H
        P = A @ P @ A.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    clamped = state.clamped
    vals, vecs = np.linalg.eigh(P)
    if vals.min() < 0:
        P = (vecs * np.maximum(vals, 0.0)) @ vecs.T
        clamped += 1
    return KalmanState(x, P, clamped)


def kalman_track(db, track: TestTrack, knn: KnnConfig = KnnConfig(), noise: KalmanNoise = KalmanNoise(),
                 measurements=None) -> np.ndarray:
    """Filter RADAR fixes with a constant-velocity model starting at the known position."""
    if len(track) < 1:
        return np.zeros((0, 2))
    z = radar_track(db, track, knn.k) if measurements is None else np.asarray(measurements, float)
    P0 = np.diag([0.0, 0.0, noise.initial_velocity_std ** 2, noise.initial_velocity_std ** 2])
    state = KalmanState(np.array([*track.locations[0], 0.0, 0.0]), P0)
    out = []
    for zk in z:
        state = kalman_update(state, zk, noise)
        out.append(state.x[:2].copy())
    if state.clamped:
        log.warning("Kalman covariance repaired on %d updates", state.clamped)
    return np.array(out)


# -- memoryless neural regressors -------------------------------------------

MLP_LAYERS = (500,)
MLNN_LAYERS = (200, 200, 100)


@dataclass
class DenseLocalizer:
    net: FeedForward
    low: np.ndarray
    high: np.ndarray
    center: np.ndarray
    scale: float

    def features(self, fps):
        x = impute(fps)
        span = np.where(self.high > self.low, self.high - self.low, 1.0)
        return (x - self.low) / span

    def predict(self, fingerprints) -> np.ndarray:
        X = self.features(np.atleast_2d(fingerprints))
        return self.center + self.scale * self.net.forward(X)


def train_dense(db: FingerprintDatabase, hidden=MLP_LAYERS, epochs=200, lr=1e-3, batch_size=64,
                dropout=0.0, seed=0, activation="relu") -> DenseLocalizer:
    """Fit a memoryless scan -> location regressor on every stored scan."""
    rng = np.random.default_rng(seed)
    X = impute(np.concatenate(db.scans))
    Y = np.repeat(db.locations, [s.shape[0] for s in db.scans], axis=0)
    low, high = X.min(axis=0), X.max(axis=0)
    lo, hi = db.locations.min(axis=0), db.locations.max(axis=0)
    scale = float(max(hi - lo)) / 2.0 or 1.0
    model = DenseLocalizer(FeedForward(X.shape[1], hidden, 2, activation, dropout, seed), low, high,
                           (lo + hi) / 2.0, scale)
    Xn = model.features(X)
    opt = OptimizerState("adam", lr)
    n = len(Xn)
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            out = model.center + scale * model.net.forward(Xn[idx], True, rng)
            _, d = mean_distance(out, Y[idx])
            model.net.zero_grad()
            model.net.backward(d * scale)
            grads = model.net.named_grads()
            clip_global_norm(grads, 5.0)
            optimizer_step(opt, model.net.named_params(), grads)
    return model


def mlp_localize(model: DenseLocalizer, fingerprint) -> np.ndarray:
    return model.predict(fingerprint)[0]


mlnn_localize = mlp_localize


def dense_track(model: DenseLocalizer, track: TestTrack) -> np.ndarray:
    return model.predict(track.fingerprints())
