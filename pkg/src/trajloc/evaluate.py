"""Error reports, correlation-based ambiguity analysis, and robustness sweeps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import FingerprintDatabase, SyntheticEnvironment, TestTrack, impute_and_normalize, track_from_locations
from .nncore import ShapeError
from .trajgen import TransitionTable, sample_walks

CDF_STEP = 0.05


class UndefinedCorrelationError(ValueError):
    pass


# -- error statistics -------------------------------------------------------

@dataclass
class ErrorReport:
    errors: np.ndarray
    mean: float
    std: float
    max: float
    cdf_x: np.ndarray
    cdf_y: np.ndarray

    def cdf(self, x) -> float:
        return float(np.mean(self.errors <= x)) if self.errors.size else 1.0

    def percentile(self, q) -> float:
        return float(np.percentile(self.errors, q)) if self.errors.size else 0.0

    def summary(self) -> dict:
        return {"count": int(self.errors.size), "mean": self.mean, "std": self.std, "max": self.max,
                **{f"p{q}": self.percentile(q) for q in (50, 80, 90, 95)}}


def error_report(true_locs, estimates) -> ErrorReport:
    t = np.asarray(true_locs, float).reshape(-1, 2)
    e = np.asarray(estimates, float).reshape(-1, 2)
    if t.shape != e.shape:
        raise ShapeError(f"{len(t)} true locations vs {len(e)} estimates")
    err = np.linalg.norm(t - e, axis=1)
    top = float(err.max()) if err.size else 0.0
    xs = np.arange(0.0, top + CDF_STEP, CDF_STEP)
    if xs[-1] < top:
        xs = np.append(xs, top)
    ys = np.searchsorted(np.sort(err), xs, side="right") / max(err.size, 1)
    return ErrorReport(err, float(err.mean()) if err.size else 0.0, float(err.std()) if err.size else 0.0,
                       top, xs, ys)


def write_report(report: ErrorReport, true_locs, estimates, out_dir, prefix=""):
    """Per-point CSV, CDF CSV and summary JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{prefix}points.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_id", "true_x", "true_y", "est_x", "est_y", "error_m"])
        for i, (t, e, d) in enumerate(zip(true_locs, estimates, report.errors)):
            w.writerow([i, f"{t[0]:.6f}", f"{t[1]:.6f}", f"{e[0]:.6f}", f"{e[1]:.6f}", f"{d:.6f}"])
    with open(out / f"{prefix}cdf.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["error_m", "cdf"])
        for x, y in zip(report.cdf_x, report.cdf_y):
            w.writerow([f"{x:.4f}", f"{y:.6f}"])
    with open(out / f"{prefix}summary.json", "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- correlation and ambiguity ---------------------------------------------

def pearson(f_i, f_j) -> float:
    """Sample Pearson correlation, ``sum(z_i * z_j) / (N - 1)`` with sample std."""
    a, b = np.asarray(f_i, float).ravel(), np.asarray(f_j, float).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two vectors of equal length >= 2")
    sa, sb = a.std(ddof=1), b.std(ddof=1)
    if sa == 0 or sb == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    n = a.size
    return float(np.sum((a - a.mean()) / sa * ((b - b.mean()) / sb)) / (n - 1))


def _standardize(v):
    """Row-wise z-scores scaled so that a dot product is the Pearson coefficient."""
    v = np.asarray(v, float)
    c = v - v.mean(axis=-1, keepdims=True)
    s = c.std(axis=-1, ddof=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = c / s / np.sqrt(v.shape[-1] - 1)
    return np.where(s > 0, z, np.nan)


def correlation_matrix(F) -> np.ndarray:
    z = _standardize(F)
    return np.clip(z @ z.T, -1.0, 1.0)


@dataclass(frozen=True)
class AmbiguityConfig:
    correlation_threshold: float | None = 0.9   # None: derive from physical neighbours
    grid_size: float | None = None               # None: the database's grid size

    def __post_init__(self):
        t = self.correlation_threshold
        if t is not None and not -1.0 < t < 1.0:
            raise ValueError("threshold must lie in (-1, 1)")


def rp_fingerprints(db: FingerprintDatabase) -> np.ndarray:
    """Per-RP mean of the normalized scans."""
    _, norm = impute_and_normalize(db, "data")
    return np.stack([s.mean(axis=0) for s in norm])


def neighbour_threshold(db: FingerprintDatabase, grid_size=None, F=None) -> float:
    """Mean correlation between each RP and its physical neighbours (distance <= grid)."""
    g = db.grid_size if grid_size is None else grid_size
    F = rp_fingerprints(db) if F is None else F
    C = correlation_matrix(F)
    D = np.linalg.norm(db.locations[:, None] - db.locations[None], axis=2)
    nb = (D <= g + 1e-9) & ~np.eye(db.size, dtype=bool)
    vals = C[nb]
    vals = vals[np.isfinite(vals)]
    return float(vals.mean()) if vals.size else 0.9


@dataclass
class AmbiguityResult:
    counts: np.ndarray
    threshold: float

    @property
    def average(self) -> float:
        return float(self.counts.mean())


def count_ambiguous_points(db: FingerprintDatabase, config: AmbiguityConfig = AmbiguityConfig(),
                           F=None) -> AmbiguityResult:
    """Per RP, the number of non-neighbouring RPs whose fingerprint correlates above threshold."""
    g = db.grid_size if config.grid_size is None else config.grid_size
    F = rp_fingerprints(db) if F is None else F
    thr = config.correlation_threshold
    if thr is None:
        thr = neighbour_threshold(db, g, F)
    C = correlation_matrix(F)
    D = np.linalg.norm(db.locations[:, None] - db.locations[None], axis=2)
    amb = (D > g + 1e-9) & (C > thr)
    return AmbiguityResult(amb.sum(axis=1), float(thr))


def count_ambiguous_trajectories(db: FingerprintDatabase, table: TransitionTable, T: int, sample_count: int,
                                 config: AmbiguityConfig = AmbiguityConfig(), rng=None, F=None,
                                 chunk: int = 50) -> float:
    """Monte-Carlo average number of trajectories ambiguous with a random walk of length ``T``.

    Each sampled reference walk is compared with a candidate set of ``M``
    walks, one starting at every RP.  A pair counts when no aligned step pair
    is within ``grid_size`` (different locations) and the correlation of the
    concatenated per-step fingerprints exceeds the threshold.  With ``T=1``
    the candidates are exactly the RPs, so this is the ambiguous-point count.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    g = db.grid_size if config.grid_size is None else config.grid_size
    F = rp_fingerprints(db) if F is None else F
    thr = config.correlation_threshold
    if thr is None:
        thr = neighbour_threshold(db, g, F)
    if T == 1:
        return count_ambiguous_points(db, AmbiguityConfig(thr, g), F).average
    M = db.size
    locs = db.locations
    total = 0
    done = 0
    while done < sample_count:
        n = min(chunk, sample_count - done)
        refs = sample_walks(table, T, n, rng)
        cands = sample_walks(table, T, M, rng, start=np.arange(M))
        zr = _standardize(F[refs].reshape(n, -1))
        zc = _standardize(F[cands].reshape(M, -1))
        corr = zr @ zc.T
        far = np.ones((n, M), dtype=bool)
        for t in range(T):
            d = np.linalg.norm(locs[refs[:, t]][:, None] - locs[cands[:, t]][None], axis=2)
            far &= d > g + 1e-9
        total += int(np.sum(far & (corr > thr)))
        done += n
    return total / sample_count


# -- robustness sweeps --------------------------------------------------------

def speed_walk(waypoints, v_max, n_points, rng, delta_t=1.0, fraction_at_max=0.5) -> np.ndarray:
    """Back-and-forth walk along a polyline.

    ``fraction_at_max`` of the steps move exactly ``v_max * delta_t``; the
    rest move a uniform random shorter distance.  The walker reverses at the
    route ends.
    """
    wp = np.asarray(waypoints, float)
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    length = cum[-1]
    steps = np.full(n_points - 1, v_max * delta_t)
    slow = rng.permutation(n_points - 1)[: (n_points - 1) - int(round(fraction_at_max * (n_points - 1)))]
    steps[slow] = rng.uniform(0.0, v_max * delta_t, size=slow.size)
    s = np.concatenate([[0.0], np.cumsum(steps)])
    if length > 0:
        s = np.mod(s, 2 * length)
        s = np.where(s > length, 2 * length - s, s)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0)
    return wp[idx] + frac[:, None] * (wp[idx + 1] - wp[idx])


@dataclass
class SweepResult:
    values: list
    reports: dict = field(default_factory=dict)   # name -> list[ErrorReport]

    def means(self, name) -> list:
        return [r.mean for r in self.reports[name]]


def speed_sweep(env: SyntheticEnvironment, localizers: dict, v_max_list, rng, n_points=344,
                fraction_at_max=0.5, scans_per_point=1, walks=1) -> SweepResult:
    """Evaluate each ``name -> f(track) -> estimates`` localizer per max speed.

    Each speed gets ``walks`` independent walks along the route with fresh scans
    (``scans_per_point`` of them at every point); their errors are pooled.
    """
    if scans_per_point not in (1, 2):
        raise ValueError("scans_per_point must be 1 or 2")
    if walks < 1:
        raise ValueError("walks must be >= 1")
    result = SweepResult(list(v_max_list), {name: [] for name in localizers})
    for v in v_max_list:
        truth, est = [], {name: [] for name in localizers}
        for _ in range(walks):
            locs = speed_walk(env.route(), v, n_points, rng, env.delta_t, fraction_at_max)
            track = track_from_locations(env, locs, rng, scans_per_point)
            truth.append(track.locations)
            for name, fn in localizers.items():
                est[name].append(fn(track))
        for name in localizers:
            result.reports[name].append(error_report(np.concatenate(truth), np.concatenate(est[name])))
    return result


def noisy_history(locations, gamma, rng) -> np.ndarray:
    """True coordinates plus isotropic Gaussian error of total std ``gamma``."""
    locs = np.asarray(locations, float)
    if gamma == 0:
        return locs.copy()
    return locs + rng.normal(0.0, gamma / math.sqrt(2.0), size=locs.shape)


def history_noise_sweep(model, track: TestTrack, gammas, rng) -> dict:
    """Error reports per history-noise level, history taken from the true path."""
    from .seqmodels import predict_track

    if not model.spec.location_channel:
        raise ValueError("model has no location channel")
    out = {}
    for g in gammas:
        hist = noisy_history(track.locations, g, rng)
        out[g] = error_report(track.locations, predict_track(model, track, history=hist))
    return out


def time_slot_correlation(env: SyntheticEnvironment, db: FingerprintDatabase, track: TestTrack, slots, rng):
    """Mean correlation between freshly drawn test scans and the nearest RP's stored mean, per slot.

    A stand-in for repeated collection at different hours; diagnostic only.
    """
    F = db.mean_fingerprints()
    nearest = np.argmin(np.linalg.norm(track.locations[:, None] - db.locations[None], axis=2), axis=1)
    out = []
    for _ in range(slots):
        fresh = track_from_locations(env, track.locations, rng).fingerprints()
        vals = [pearson(f, F[j]) for f, j in zip(fresh, nearest)]
        out.append(float(np.mean(vals)))
    return out
