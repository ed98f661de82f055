"""Random training walks over the RP grid via a Gaussian transition map and inverse-CDF sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ConfigError, FingerprintDatabase


@dataclass(frozen=True)
class MotionModel:
    """User motion per sampling interval. ``sigma`` is derived as ``v_max * delta_t``."""

    v_max: float = 2.0
    delta_t: float = 1.0
    d_max: float = 2.0
    truncate: float | None = None   # optional hard radius (m); off by default

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError("sigma = v_max * delta_t must be > 0")

    @property
    def sigma(self) -> float:
        return self.v_max * self.delta_t

    @classmethod
    def from_sigma(cls, sigma, delta_t=1.0, **kw):
        return cls(v_max=sigma / delta_t, delta_t=delta_t, **kw)


def transition_probability(l_i, l_prev, model: MotionModel) -> float:
    """Unnormalized Gaussian weight of moving from ``l_prev`` to ``l_i``."""
    if model.sigma <= 0:
        raise ConfigError("sigma must be > 0")
    d2 = float(np.sum((np.asarray(l_i, float) - np.asarray(l_prev, float)) ** 2))
    if model.truncate is not None and d2 > model.truncate ** 2:
        return 0.0
    return float(np.exp(-d2 / (2.0 * model.sigma ** 2)))


@dataclass(frozen=True, eq=False)
class TransitionTable:
    probs: np.ndarray   # (M, M) row-stochastic
    cdf: np.ndarray     # (M, M) row-wise cumulative, last column exactly 1

    @property
    def size(self) -> int:
        return self.probs.shape[0]


def build_transition_table(db_or_locations, model: MotionModel) -> TransitionTable:
    """Distance matrix -> Gaussian weights -> row normalization -> cumulative map."""
    locs = (db_or_locations.locations if isinstance(db_or_locations, FingerprintDatabase)
            else np.asarray(db_or_locations, dtype=float))
    diff = locs[:, None, :] - locs[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    w = np.exp(-d2 / (2.0 * model.sigma ** 2))
    if model.truncate is not None:
        w[d2 > model.truncate ** 2] = 0.0
    probs = w / w.sum(axis=1, keepdims=True)
    cdf = np.minimum(np.cumsum(probs, axis=1), 1.0)   # rounding must not overshoot the final 1
    cdf[:, -1] = 1.0
    for a in (probs, cdf):
        a.setflags(write=False)
    return TransitionTable(probs, cdf)


def sample_next(table: TransitionTable, current_rp, rng):
    """Inverse-CDF draw of the next RP; vectorized over an array of current RPs."""
    cur = np.asarray(current_rp)
    r = rng.random(cur.shape)
    r = np.where(r > 0.0, r, np.nextafter(0.0, 1.0))       # R is drawn from the open interval (0, 1)
    rows = table.cdf[cur]
    # smallest cumulative value >= R
    nxt = (rows < r[..., None]).sum(axis=-1)
    nxt = np.minimum(nxt, table.size - 1)
    return int(nxt) if nxt.ndim == 0 else nxt


def sample_walks(table: TransitionTable, T: int, count: int, rng, start=None) -> np.ndarray:
    """(count, T) RP index chains; starts uniform unless given."""
    if T < 1 or count < 1:
        raise ConfigError("T and count must be >= 1")
    idx = np.empty((count, T), dtype=np.int64)
    idx[:, 0] = rng.integers(table.size, size=count) if start is None else start
    for t in range(1, T):
        idx[:, t] = sample_next(table, idx[:, t - 1], rng)
    return idx


@dataclass(frozen=True, eq=False)
class TrainingTrajectories:
    """A batch of walks: RP indices, their locations, and one chosen scan per step."""

    rp_index: np.ndarray     # (count, T)
    locations: np.ndarray    # (count, T, 2)
    scans: np.ndarray        # (count, T, N) raw dBm, NaN = not detected

    def __len__(self):
        return len(self.rp_index)

    def subset(self, idx):
        return TrainingTrajectories(self.rp_index[idx], self.locations[idx], self.scans[idx])


def draw_scans(db: FingerprintDatabase, rp_index, rng) -> np.ndarray:
    """One uniformly chosen stored scan per visited RP (vectorized pick_random_scan)."""
    counts = np.array([s.shape[0] for s in db.scans])
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    flat = np.concatenate(db.scans, axis=0)
    rp = np.asarray(rp_index)
    pick = np.floor(rng.random(rp.shape) * counts[rp]).astype(np.int64)
    return flat[offsets[rp] + pick]


def generate_trajectories(db: FingerprintDatabase, model: MotionModel, T: int, count: int, rng,
                          table: TransitionTable | None = None) -> TrainingTrajectories:
    table = table if table is not None else build_transition_table(db, model)
    idx = sample_walks(table, T, count, rng)
    return TrainingTrajectories(idx, db.locations[idx], draw_scans(db, idx, rng))
