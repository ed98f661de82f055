"""Fingerprint databases, test tracks, the synthetic site generator and file I/O.

RSSI values are dBm floats; "not detected" is stored as NaN.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

RSSI_FLOOR = -110.0
RSSI_CEIL = 0.0
UJI_WAPS = 520
UJI_NOT_DETECTED = 100
UJI_META = ["LONGITUDE", "LATITUDE", "FLOOR", "BUILDINGID", "SPACEID",
            "RELATIVEPOSITION", "USERID", "PHONEID", "TIMESTAMP"]


class DatasetError(ValueError):
    """Malformed input file or invalid database contents."""


class EmptySelectionError(DatasetError):
    """Filters selected no rows."""


class ConfigError(ValueError):
    """Invalid generator or model configuration."""


def _check_scans(scans: np.ndarray):
    detected = scans[~np.isnan(scans)]
    if detected.size and (detected.min() < RSSI_FLOOR or detected.max() > RSSI_CEIL):
        raise DatasetError(f"detected RSSI outside [{RSSI_FLOOR}, {RSSI_CEIL}] dBm")


@dataclass(frozen=True)
class ReferencePoint:
    location: np.ndarray  # (2,) metres
    scans: np.ndarray     # (S1, N), NaN = not detected

    @property
    def s1(self) -> int:
        return self.scans.shape[0]


@dataclass(frozen=True, eq=False)
class FingerprintDatabase:
    """Surveyed reference points, each with one or more RSSI scans.

    A single RP is accepted (degenerate sites and minimal files); trajectory
    generation simply stays in place there.
    """

    locations: np.ndarray          # (M, 2)
    scans: tuple                   # M arrays of shape (S1_i, N)
    ap_count: int
    grid_size: float

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        scans = tuple(np.asarray(s, dtype=float) for s in self.scans)
        if len(scans) != len(locs) or not scans:
            raise DatasetError("need one scan block per RP and at least one RP")
        n = scans[0].shape[1]
        for s in scans:
            if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] != n:
                raise DatasetError("every RP needs >= 1 scan with the same feature count")
            _check_scans(s)
        if len({tuple(p) for p in locs}) != len(locs):
            raise DatasetError("RP locations must be distinct")
        if n < self.ap_count:
            raise DatasetError(f"feature count {n} < AP count {self.ap_count}")
        for a in (locs, *scans):
            a.setflags(write=False)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "scans", scans)

    @property
    def size(self) -> int:
        return len(self.locations)

    @property
    def feature_count(self) -> int:
        return self.scans[0].shape[1]

    @property
    def rps(self) -> list[ReferencePoint]:
        return [ReferencePoint(l, s) for l, s in zip(self.locations, self.scans)]

    def mean_fingerprints(self) -> np.ndarray:
        """Per-RP mean over scans after imputing "not detected" at the floor value."""
        return np.stack([impute(s).mean(axis=0) for s in self.scans])

    def equals(self, other: "FingerprintDatabase") -> bool:
        return (self.ap_count == other.ap_count and self.grid_size == other.grid_size
                and np.array_equal(self.locations, other.locations)
                and len(self.scans) == len(other.scans)
                and all(np.array_equal(a, b, equal_nan=True) for a, b in zip(self.scans, other.scans)))


@dataclass(frozen=True, eq=False)
class TestTrack:
    """Ordered test walk: true locations and the 1 or 2 scans taken at each."""

    __test__ = False  # not a pytest class

    locations: np.ndarray          # (K, 2)
    scans: tuple                   # K arrays of shape (S2, N)
    initial_known: bool = True

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        scans = tuple(np.atleast_2d(np.asarray(s, dtype=float)) for s in self.scans)
        if len(scans) != len(locs):
            raise DatasetError("need one scan block per track point")
        for s in scans:
            if s.shape[0] not in (1, 2):
                raise DatasetError("test points carry 1 or 2 scans")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "scans", scans)

    def __len__(self):
        return len(self.locations)

    def fingerprints(self) -> np.ndarray:
        """(K, N) imputed fingerprints, averaging when two scans were taken."""
        if not self.scans:
            return np.zeros((0, 0))
        return np.stack([impute(s).mean(axis=0) for s in self.scans])

    def max_step(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.linalg.norm(np.diff(self.locations, axis=0), axis=1).max())

    def equals(self, other: "TestTrack") -> bool:
        return (self.initial_known == other.initial_known
                and np.array_equal(self.locations, other.locations)
                and len(self.scans) == len(other.scans)
                and all(np.array_equal(a, b, equal_nan=True) for a, b in zip(self.scans, other.scans)))


# -- imputation and normalization -------------------------------------------

def impute(values, floor=RSSI_FLOOR) -> np.ndarray:
    """Replace "not detected" (NaN) by ``floor`` dBm."""
    values = np.asarray(values, dtype=float)
    return np.where(np.isnan(values), floor, values)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature affine map of imputed dBm onto [0, 1].

    Fitted once on the training database and reused for test data.
    """

    low: np.ndarray
    high: np.ndarray

    def __call__(self, values) -> np.ndarray:
        x = impute(values)
        span = self.high - self.low
        const = span <= 0
        out = (x - self.low) / np.where(const, 1.0, span)
        return np.where(const, 0.5, out)

    def to_dict(self):
        return {"low": self.low.tolist(), "high": self.high.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["low"], float), np.asarray(d["high"], float))


def impute_and_normalize(db: FingerprintDatabase, mode="data") -> tuple[Normalizer, list[np.ndarray]]:
    """Fit a :class:`Normalizer` and return it with the normalized scans per RP.

    ``mode="data"`` takes per-feature min/max from the imputed database;
    ``mode="fixed"`` uses the full [-110, 0] dBm range for every feature.
    """
    n = db.feature_count
    if mode == "fixed":
        norm = Normalizer(np.full(n, RSSI_FLOOR), np.full(n, RSSI_CEIL))
    elif mode == "data":
        allv = impute(np.concatenate(db.scans, axis=0))
        low, high = allv.min(axis=0), allv.max(axis=0)
        const = np.flatnonzero(high <= low)
        if const.size:
            warnings.warn(f"constant features {const.tolist()} map to 0.5", RuntimeWarning, stacklevel=2)
        norm = Normalizer(low, high)
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    return norm, [norm(s) for s in db.scans]


def pick_random_scan(rp, rng) -> np.ndarray:
    """Uniformly choose one of an RP's stored scans."""
    scans = rp.scans if isinstance(rp, ReferencePoint) else np.asarray(rp)
    return scans[rng.integers(scans.shape[0])]


# -- synthetic site ------------------------------------------------------------

DEFAULT_APS = ((2.0, 2.5), (10.5, 1.0), (19.0, 3.0), (1.5, 13.5), (11.0, 15.0), (19.5, 12.0))


@dataclass(frozen=True)
class SyntheticEnvironment:
    """Log-distance path-loss site standing in for a surveyed floor."""

    width: float = 21.0
    height: float = 16.0
    ap_positions: tuple = DEFAULT_APS
    path_loss_exponent: float = 3.0
    ref_power: float = -40.0       # dBm at 1 m
    shadowing_std: float = 3.0     # dB, i.i.d. per scan and feature
    grid_size: float = 1.0
    sensitivity: float = -100.0    # weaker readings are "not detected"
    static_shadowing_std: float = 0.0          # dB, spatially correlated, fixed in time
    static_correlation_length: float = 1.5     # m
    track_speed: float = 0.6       # m/s along the test route
    delta_t: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.grid_size <= 0:
            raise ConfigError("grid_size must be > 0")
        if self.shadowing_std < 0:
            raise ConfigError("shadowing std must be >= 0")
        for x, y in self.ap_positions:
            if not (0 <= x <= self.width and 0 <= y <= self.height):
                raise ConfigError(f"AP ({x}, {y}) outside the {self.width} x {self.height} m area")

    def grid(self) -> np.ndarray:
        """RP lattice: cell centres of a ``grid_size`` mesh over the area."""
        g = self.grid_size
        xs = np.arange(g / 2, self.width, g)
        ys = np.arange(g / 2, self.height, g)
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def mean_rssi(self, locations) -> np.ndarray:
        """Time-averaged RSSI (K, P): path loss plus the static shadowing field."""
        locs = np.atleast_2d(np.asarray(locations, dtype=float))
        aps = np.asarray(self.ap_positions, dtype=float)
        d = np.linalg.norm(locs[:, None, :] - aps[None], axis=2)
        mean = self.ref_power - 10.0 * self.path_loss_exponent * np.log10(np.maximum(d, 1.0))
        if self.static_shadowing_std > 0:
            mean = mean + self._static_field(locs)
        return mean

    def _static_field(self, locs, features=256):
        """Squared-exponential Gaussian field per AP via random Fourier features."""
        rng = np.random.default_rng([self.seed, 7919])
        P = len(self.ap_positions)
        omega = rng.normal(0.0, 1.0 / self.static_correlation_length, size=(P, features, 2))
        phase = rng.uniform(0.0, 2 * np.pi, size=(P, features))
        proj = np.einsum("kd,pfd->kpf", locs, omega) + phase
        return self.static_shadowing_std * np.sqrt(2.0 / features) * np.cos(proj).sum(axis=2)

    def sample_scans(self, locations, count, rng) -> np.ndarray:
        """(K, count, P) noisy scans with sensitivity cut-off applied."""
        mean = self.mean_rssi(locations)
        noise = rng.normal(0.0, self.shadowing_std, size=(mean.shape[0], count, mean.shape[1]))
        scans = np.clip(mean[:, None, :] + noise, RSSI_FLOOR, RSSI_CEIL)
        return np.where(scans < self.sensitivity, np.nan, scans)

    def route(self) -> np.ndarray:
        """Test walk waypoints: four corridors in a serpentine, then back down a central spine."""
        w, h = self.width, self.height
        ys = (0.1 * h, 0.37 * h, 0.63 * h, 0.9 * h)
        xl, xr = 0.1 * w, 0.9 * w
        return np.array([(xl, ys[0]), (xr, ys[0]), (xr, ys[1]), (xl, ys[1]), (xl, ys[2]), (xr, ys[2]),
                         (xr, ys[3]), (xl, ys[3]), (0.5 * w, ys[3]), (0.5 * w, ys[0])])


def sample_polyline(waypoints, step) -> np.ndarray:
    """Points every ``step`` metres of arc length along a polyline, endpoints kept."""
    wp = np.asarray(waypoints, dtype=float)
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    n = int(math.floor(cum[-1] / step + 1e-9))
    s = np.append(np.arange(n + 1) * step, cum[-1]) if cum[-1] - n * step > 1e-9 else np.arange(n + 1) * step
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    frac = (s - cum[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0)
    return wp[idx] + frac[:, None] * (wp[idx + 1] - wp[idx])


def generate_synthetic(env: SyntheticEnvironment, s1: int = 100, s2: int = 1):
    """Build the RP database and a corridor test track for ``env``.

    The test track walks the corridor route at ``env.track_speed`` m/s sampled
    every ``env.delta_t`` s.  Deterministic for a fixed ``env.seed``.
    """
    if s1 < 1:
        raise ConfigError("s1 must be >= 1")
    rng = np.random.default_rng(env.seed)
    locs = env.grid()
    scans = env.sample_scans(locs, s1, rng)
    db = FingerprintDatabase(locs, tuple(scans), ap_count=len(env.ap_positions), grid_size=env.grid_size)
    points = sample_polyline(env.route(), env.track_speed * env.delta_t)
    track = TestTrack(points, tuple(env.sample_scans(points, s2, rng)), initial_known=True)
    return db, track


def track_from_locations(env: SyntheticEnvironment, locations, rng, s2: int = 1) -> TestTrack:
    """Fresh scans at arbitrary locations of a synthetic site."""
    locs = np.asarray(locations, dtype=float)
    return TestTrack(locs, tuple(env.sample_scans(locs, s2, rng)), initial_known=True)


# -- native CSV format ---------------------------------------------------------

def _fmt(v: float) -> str:
    return "NA" if math.isnan(v) else repr(float(v))


def _parse(v: str, row: int) -> float:
    if v == "NA":
        return math.nan
    try:
        return float(v)
    except ValueError:
        raise DatasetError(f"row {row}: cannot parse {v!r}") from None


def save_database(db: FingerprintDatabase, path):
    """CSV ``x,y,scan_id,f1..fN`` preceded by one ``#`` metadata line."""
    n = db.feature_count
    with open(path, "w", newline="") as fh:
        fh.write(f"# trajloc-db ap_count={db.ap_count} grid_size={db.grid_size!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "scan_id"] + [f"f{j + 1}" for j in range(n)])
        for loc, scans in zip(db.locations, db.scans):
            for k, scan in enumerate(scans):
                w.writerow([_fmt(loc[0]), _fmt(loc[1]), k] + [_fmt(v) for v in scan])


def _read_meta(fh) -> dict:
    first = fh.readline()
    meta = {}
    if first.startswith("#"):
        for tok in first[1:].split()[1:]:
            k, _, v = tok.partition("=")
            meta[k] = v
        return meta
    fh.seek(0)
    return meta


def load_database(path) -> FingerprintDatabase:
    with open(path, newline="") as fh:
        meta = _read_meta(fh)
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["x", "y", "scan_id"]:
            raise DatasetError(f"{path}: header must start with x,y,scan_id")
        n = len(header) - 3
        groups: dict[tuple, list] = {}
        for i, row in enumerate(reader, start=1):
            if len(row) != n + 3:
                raise DatasetError(f"row {i}: expected {n + 3} fields, got {len(row)}")
            key = (_parse(row[0], i), _parse(row[1], i))
            groups.setdefault(key, []).append([_parse(v, i) for v in row[3:]])
    if not groups:
        raise EmptySelectionError(f"{path}: no rows")
    locs = np.array(list(groups), dtype=float)
    scans = tuple(np.array(v, dtype=float) for v in groups.values())
    return FingerprintDatabase(locs, scans, ap_count=int(meta.get("ap_count", n)),
                               grid_size=float(meta.get("grid_size", "1.0")))


def save_track(track: TestTrack, path):
    n = track.scans[0].shape[1] if track.scans else 0
    with open(path, "w", newline="") as fh:
        fh.write(f"# trajloc-track initial_known={int(track.initial_known)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_id", "x", "y", "scan_id"] + [f"f{j + 1}" for j in range(n)])
        for p, (loc, scans) in enumerate(zip(track.locations, track.scans)):
            for k, scan in enumerate(scans):
                w.writerow([p, _fmt(loc[0]), _fmt(loc[1]), k] + [_fmt(v) for v in scan])


def load_track(path) -> TestTrack:
    with open(path, newline="") as fh:
        meta = _read_meta(fh)
        reader = csv.reader(fh)
        header = next(reader)
        n = len(header) - 4
        points: dict[int, tuple] = {}
        for i, row in enumerate(reader, start=1):
            if len(row) != n + 4:
                raise DatasetError(f"row {i}: expected {n + 4} fields, got {len(row)}")
            pid = int(row[0])
            loc = (_parse(row[1], i), _parse(row[2], i))
            points.setdefault(pid, (loc, []))[1].append([_parse(v, i) for v in row[4:]])
    order = sorted(points)
    return TestTrack(np.array([points[p][0] for p in order], dtype=float).reshape(-1, 2),
                     tuple(np.array(points[p][1]) for p in order),
                     initial_known=bool(int(meta.get("initial_known", "1"))))


# -- UJIIndoorLoc ------------------------------------------------------------

@dataclass
class UjiSelection:
    """A filtered UJIIndoorLoc slice: the database plus per-row provenance."""

    db: FingerprintDatabase
    origin: tuple                      # (longitude, latitude) subtracted
    rows: int
    phone_ids: list = field(default_factory=list)
    wap_columns: list = field(default_factory=list)


def _uji_filter_ok(value, wanted):
    return wanted is None or value in set(np.atleast_1d(wanted).tolist())


def load_ujiindoorloc(path, building_filter=None, floor_filter=None, phone_filter=None,
                      drop_undetected=False, grid_size=None) -> UjiSelection:
    """Read a UJIIndoorLoc CSV and group rows by exact coordinates into RPs.

    Coordinates are shifted so the minimum corner of the selection is the
    origin.  WAP value 100 becomes "not detected".  ``drop_undetected`` removes
    WAP columns never seen in the selection.
    """
    groups: dict[tuple, list] = {}
    phones = set()
    nrows = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != UJI_WAPS + len(UJI_META):
            raise DatasetError(f"header has {len(header)} columns, expected {UJI_WAPS + len(UJI_META)}")
        for i, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DatasetError(f"row {i}: expected {len(header)} fields, got {len(row)}")
            try:
                waps = np.array(row[:UJI_WAPS], dtype=float)
                lon, lat = float(row[UJI_WAPS]), float(row[UJI_WAPS + 1])
                floor, building = int(row[UJI_WAPS + 2]), int(row[UJI_WAPS + 3])
                phone = int(row[UJI_WAPS + 7])
            except ValueError as exc:
                raise DatasetError(f"row {i}: {exc}") from None
            if not (_uji_filter_ok(building, building_filter) and _uji_filter_ok(floor, floor_filter)
                    and _uji_filter_ok(phone, phone_filter)):
                continue
            waps[waps == UJI_NOT_DETECTED] = np.nan
            groups.setdefault((lon, lat), []).append(waps)
            phones.add(phone)
            nrows += 1
    if not groups:
        raise EmptySelectionError("no UJIIndoorLoc rows match the filters")
    coords = np.array(list(groups), dtype=float)
    origin = coords.min(axis=0)
    scans = [np.array(v) for v in groups.values()]
    cols = list(range(UJI_WAPS))
    if drop_undetected:
        seen = ~np.all(np.isnan(np.concatenate(scans)), axis=0)
        cols = np.flatnonzero(seen).tolist()
        scans = [s[:, cols] for s in scans]
    locs = coords - origin
    if grid_size is None:
        grid_size = _median_spacing(locs)
    db = FingerprintDatabase(locs, tuple(scans), ap_count=len(cols), grid_size=grid_size)
    log.info("UJIIndoorLoc: %d rows -> %d RPs, %d features", nrows, db.size, db.feature_count)
    return UjiSelection(db, (float(origin[0]), float(origin[1])), nrows, sorted(phones),
                        [f"WAP{c + 1:03d}" for c in cols])


def _median_spacing(locs) -> float:
    if len(locs) < 2:
        return 1.0
    d = np.linalg.norm(locs[:, None] - locs[None], axis=2)
    np.fill_diagonal(d, np.inf)
    return float(np.median(d.min(axis=1)))


def holdout_split(db: FingerprintDatabase, rng, min_scans=2):
    """Hold one scan out of every RP with at least ``min_scans`` scans.

    Returns ``(train_db, held)`` where ``held`` maps RP index to the held-out
    scan.  Used to build test walks on sites without a separate test route.
    """
    train, held = [], {}
    for i, s in enumerate(db.scans):
        if s.shape[0] >= min_scans:
            k = int(rng.integers(s.shape[0]))
            held[i] = s[k]
            s = np.delete(s, k, axis=0)
        train.append(s)
    return FingerprintDatabase(db.locations, tuple(train), db.ap_count, db.grid_size), held


def alias_region(db: FingerprintDatabase, source_box, offset) -> FingerprintDatabase:
    """Copy the scans of RPs inside ``source_box`` onto the RPs displaced by ``offset``.

    ``source_box`` is ``(x0, y0, x1, y1)``.  The result has two regions whose
    fingerprints are indistinguishable, a controlled form of spatial ambiguity.
    """
    x0, y0, x1, y1 = source_box
    off = np.asarray(offset, float)
    index = {tuple(np.round(l, 9)): i for i, l in enumerate(db.locations)}
    scans = list(db.scans)
    for i, (x, y) in enumerate(db.locations):
        if x0 <= x <= x1 and y0 <= y <= y1:
            j = index.get(tuple(np.round(np.array([x, y]) + off, 9)))
            if j is not None:
                scans[j] = db.scans[i].copy()
    return FingerprintDatabase(db.locations, tuple(scans), db.ap_count, db.grid_size)
