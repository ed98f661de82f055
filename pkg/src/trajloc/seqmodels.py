"""The five recurrent wirings, their training loop, and causal track inference.

Wirings over a window of ``T`` fingerprints:

* ``MISO``   -- fingerprints in, location of the last step out.
* ``A-MISO`` -- as MISO plus a location channel holding the previous true
  location during training.
* ``MIMO``   -- fingerprints in, a location per step out.
* ``A-MIMO`` -- MIMO with the teacher-forced location channel.
* ``P-MIMO`` -- MIMO whose location channel carries the model's own
  prediction from the previous step, in training as well as at test time.

At test time every location channel carries earlier estimates, starting from
the known initial position.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import FingerprintDatabase, Normalizer, TestTrack, impute, impute_and_normalize
from .filter import FilterConfig, filter_batch, filter_sequence
from .nncore import (OptimizerState, SequenceNetwork, ShapeError, clip_global_norm, load_checkpoint,
                     mean_distance, optimizer_step, save_checkpoint)
from .trajgen import MotionModel, TrainingTrajectories, build_transition_table, generate_trajectories

log = logging.getLogger(__name__)

WIRINGS = ("MISO", "A-MISO", "MIMO", "A-MIMO", "P-MIMO")
CELLS = {"rnn": ("vanilla", False), "vanilla": ("vanilla", False), "lstm": ("lstm", False),
         "gru": ("gru", False), "birnn": ("vanilla", True), "bilstm": ("lstm", True),
         "bigru": ("gru", True)}


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class WiringSpec:
    variant: str = "P-MIMO"
    cell: str = "lstm"
    T: int = 10
    layers: int = 2
    hidden: int = 100
    dropout: float = 0.2
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 32
    grad_clip: float = 5.0
    anchor_noise: float = 0.0   # std (m) added to the step-0 location channel in training

    def __post_init__(self):
        if self.variant not in WIRINGS:
            raise ValueError(f"unknown wiring {self.variant!r}; choose from {WIRINGS}")
        if self.cell not in CELLS:
            raise ValueError(f"unknown cell {self.cell!r}; choose from {sorted(CELLS)}")
        if self.T < 1:
            raise ValueError("T must be >= 1")

    @property
    def location_channel(self) -> bool:
        return self.variant in ("A-MISO", "A-MIMO", "P-MIMO")

    @property
    def multi_output(self) -> bool:
        return self.variant.endswith("MIMO")

    @property
    def cell_variant(self) -> str:
        return CELLS[self.cell][0]

    @property
    def bidirectional(self) -> bool:
        return CELLS[self.cell][1]


def sliding_window_average(window) -> np.ndarray:
    """Component-wise mean of the predictions collected for one target step."""
    w = np.asarray(window, dtype=float).reshape(-1, 2)
    if len(w) == 0:
        raise ValueError("empty window")
    return w.mean(axis=0)


@dataclass
class SequenceModel:
    spec: WiringSpec
    net: SequenceNetwork
    normalizer: Normalizer
    center: np.ndarray
    scale: float
    filter: FilterConfig = field(default_factory=FilterConfig)
    opt: OptimizerState = field(default_factory=OptimizerState)
    epochs_done: int = 0
    seed: int = 0

    @property
    def feature_count(self) -> int:
        return len(self.normalizer.low)

    # coordinate frame
    def encode_loc(self, loc):
        return (np.asarray(loc, float) - self.center) / self.scale

    def decode(self, out):
        return self.center + self.scale * out

    def features(self, scans_dbm) -> np.ndarray:
        """Imputed, filtered (along axis -2 = time) and normalized features."""
        x = impute(scans_dbm)
        if x.ndim == 2:
            x = filter_sequence(x, self.filter)
        else:
            x = filter_batch(x, self.filter)
        return self.normalizer(x)

    def assemble(self, feats, channel=None):
        if not self.spec.location_channel:
            return feats
        return np.concatenate([feats, self.encode_loc(channel)], axis=-1)

    def rollout_channel(self, feats, anchor):
        """Location channel for P-MIMO: the anchor, then each step's own prediction.

        ``feats`` (B, T, N), ``anchor`` (B, 2) metres.  Unidirectional nets feed
        predictions back step by step; bidirectional nets cannot, so they use a
        first pass with the anchor held constant and feed its shifted outputs.
        """
        B, T, _ = feats.shape
        channel = np.empty((B, T, 2))
        channel[:, 0] = anchor
        if T == 1:
            return channel
        if self.spec.bidirectional:
            first = self.decode(self.net.forward(self.assemble(feats, np.repeat(anchor[:, None], T, 1))))
            channel[:, 1:] = first[:, :-1]
            return channel
        states = self.net.initial_state(B)
        prev = anchor
        for t in range(T - 1):
            x = np.concatenate([feats[:, t], self.encode_loc(prev)], axis=1)
            y, states = self.net.step(x, states)
            prev = self.decode(y)
            channel[:, t + 1] = prev
        return channel

    def window_outputs(self, feats, channel=None, training=False, rng=None):
        """Run the net on assembled windows; returns locations (B, T, 2) in metres."""
        return self.decode(self.net.forward(self.assemble(feats, channel), training, rng))


# -- training ------------------------------------------------------------

@dataclass
class PreparedBatch:
    feats: np.ndarray     # (B, T, N) normalized
    anchor: np.ndarray    # (B, 2) location preceding the window
    prev: np.ndarray      # (B, T, 2) true previous location per step
    target: np.ndarray    # (B, T, 2)

    def subset(self, idx):
        return PreparedBatch(self.feats[idx], self.anchor[idx], self.prev[idx], self.target[idx])

    def __len__(self):
        return len(self.target)


def prepare(model: SequenceModel, trajs: TrainingTrajectories) -> PreparedBatch:
    """Chains of length T+1: step 0 is the anchor, steps 1..T the window."""
    feats = model.features(trajs.scans)[:, 1:]
    locs = trajs.locations
    return PreparedBatch(feats, locs[:, 0], locs[:, :-1], locs[:, 1:])


def _channel(model, batch: PreparedBatch, rng=None, noise=0.0):
    spec = model.spec
    if not spec.location_channel:
        return None
    anchor = batch.anchor
    if noise > 0 and rng is not None:
        anchor = anchor + rng.normal(0.0, noise, anchor.shape)
    if spec.variant == "P-MIMO":
        return model.rollout_channel(batch.feats, anchor)
    channel = batch.prev.copy()
    channel[:, 0] = anchor
    return channel


def batch_loss(model: SequenceModel, batch: PreparedBatch, channel, training=False, rng=None):
    """Objective on one batch and its gradient w.r.t. the network's raw outputs."""
    out = model.window_outputs(batch.feats, channel, training, rng)
    if model.spec.multi_output:
        loss, dloc = mean_distance(out, batch.target)
    else:
        loss, dlast = mean_distance(out[:, -1], batch.target[:, -1])
        dloc = np.zeros_like(out)
        dloc[:, -1] = dlast
    return loss, dloc * model.scale


def compute_gradients(model: SequenceModel, batch: PreparedBatch, channel, rng=None, training=True):
    """Loss and parameter gradients for fixed inputs (the location channel is data)."""
    loss, dout = batch_loss(model, batch, channel, training, rng)
    model.net.zero_grad()
    model.net.backward(dout)
    return loss, model.net.named_grads()


def evaluate_batch(model: SequenceModel, batch: PreparedBatch) -> float:
    if len(batch) == 0:
        return math.nan
    return batch_loss(model, batch, _channel(model, batch))[0]


def _frame(db: FingerprintDatabase):
    lo, hi = db.locations.min(axis=0), db.locations.max(axis=0)
    scale = float(max(hi - lo)) / 2.0
    return (lo + hi) / 2.0, (scale if scale > 0 else 1.0)


def new_model(db: FingerprintDatabase, spec: WiringSpec, seed=0, filter_config=FilterConfig(),
              normalization="data") -> SequenceModel:
    normalizer, _ = impute_and_normalize(db, normalization)
    center, scale = _frame(db)
    n_in = db.feature_count + (2 if spec.location_channel else 0)
    net = SequenceNetwork(spec.cell_variant, n_in, spec.hidden, spec.layers, spec.bidirectional,
                          spec.dropout, 2, seed=seed)
    return SequenceModel(spec, net, normalizer, center, scale, filter_config,
                         OptimizerState(spec.optimizer, spec.lr), 0, seed)


STREAMS = {"train": 1, "val": 2, "shuffle": 3, "dropout": 4, "anchor": 5}


def _rng(seed, stream, *extra):
    return np.random.default_rng([seed, STREAMS[stream], *extra])


def make_walks(db, model: SequenceModel, motion: MotionModel, n_traj: int, val_fraction=0.1):
    """Raw training and validation walks (chains of T+1 RPs) from disjoint seed streams."""
    table = build_transition_table(db, motion)
    T = model.spec.T + 1
    train = generate_trajectories(db, motion, T, n_traj, _rng(model.seed, "train"), table)
    n_val = max(1, int(round(n_traj * val_fraction))) if val_fraction > 0 else 0
    val = generate_trajectories(db, motion, T, n_val, _rng(model.seed, "val"), table) if n_val else None
    return train, val


def make_training_data(db, model: SequenceModel, motion: MotionModel, n_traj: int, val_fraction=0.1):
    """Prepared training and validation batches (see :func:`make_walks`)."""
    train, val = make_walks(db, model, motion, n_traj, val_fraction)
    return prepare(model, train), (prepare(model, val) if val is not None else None)


@dataclass
class TrainResult:
    model: SequenceModel
    curve: list  # (epoch, train_err, val_err)
    seconds_per_epoch: list


def train(db: FingerprintDatabase, spec: WiringSpec = WiringSpec(), motion: MotionModel = MotionModel(),
          n_traj: int = 10_000, epochs: int = 1000, seed: int = 0, filter_config=FilterConfig(),
          model: SequenceModel | None = None, val_fraction=0.1, normalization="data",
          data=None, on_epoch=None) -> TrainResult:
    """Train (or resume) a wiring on random walks over ``db``.

    Per-epoch randomness is keyed by ``(seed, epoch)``, so a resumed run
    reproduces an uninterrupted one exactly.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if model is None:
        model = new_model(db, spec, seed, filter_config, normalization)
    spec = model.spec
    train_set, val_set = data if data is not None else make_training_data(db, model, motion, n_traj, val_fraction)
    curve, timings = [], []
    n = len(train_set)
    bs = max(1, min(spec.batch_size, n))
    for epoch in range(model.epochs_done, model.epochs_done + epochs):
        t0 = time.perf_counter()
        order = _rng(model.seed, "shuffle", epoch).permutation(n)
        drop_rng = _rng(model.seed, "dropout", epoch)
        anchor_rng = _rng(model.seed, "anchor", epoch)
        losses = []
        for start in range(0, n, bs):
            batch = train_set.subset(order[start:start + bs])
            channel = _channel(model, batch, anchor_rng, spec.anchor_noise)
            loss, grads = compute_gradients(model, batch, channel, drop_rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {model.opt.step_count}")
            clip_global_norm(grads, spec.grad_clip)
            optimizer_step(model.opt, model.net.named_params(), grads)
            losses.append(loss * len(batch))
        model.epochs_done = epoch + 1
        train_err = float(np.sum(losses) / n)
        val_err = evaluate_batch(model, val_set) if val_set is not None else math.nan
        if not np.isfinite(train_err):
            raise TrainingDivergedError(f"non-finite training error at epoch {epoch}")
        curve.append((epoch + 1, train_err, val_err))
        timings.append(time.perf_counter() - t0)
        log.debug("epoch %d train %.4f val %.4f (%.2fs)", epoch + 1, train_err, val_err, timings[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, train_err, val_err, timings[-1])
    return TrainResult(model, curve, timings)


# -- inference -------------------------------------------------------------

def predict_track(model: SequenceModel, track: TestTrack, history=None) -> np.ndarray:
    """Causal per-point estimates (K, 2) over a test track.

    The window for point ``k`` holds the last ``T`` fingerprints; track starts
    are left-padded with the first fingerprint and the known initial
    position.  Multi-output wirings average the ``T-1`` predictions of point
    ``k`` made with 0..T-2 extra steps of context (window lengths T..2 ending
    at ``k``).  Because a unidirectional network's output at a step ignores
    later inputs, these equal the outputs of the successive sliding windows
    that contain ``k``.

    ``history`` (K, 2), when given, replaces every location-channel value by
    the supplied previous locations (``history[k-1]`` for point ``k``).
    """
    K = len(track)
    if K < 1:
        return np.zeros((0, 2))
    spec = model.spec
    if track.scans[0].shape[1] != model.feature_count:
        raise ShapeError(f"track has {track.scans[0].shape[1]} features, model expects {model.feature_count}")
    if spec.location_channel and not track.initial_known:
        raise ValueError("location-channel wirings need a known initial position")
    T = spec.T
    pad = T - 1
    feats = model.features(track.fingerprints())
    feats = np.concatenate([np.repeat(feats[:1], pad, axis=0), feats], axis=0)
    init = track.locations[0]
    est = np.empty((K, 2))
    hist = None
    if history is not None:
        hist = np.asarray(history, float)
        if hist.shape != (K, 2):
            raise ShapeError(f"history must be ({K}, 2)")

    def prev_loc(j):
        """Location preceding padded index ``j``."""
        k = j - pad - 1
        if k < 0:
            return init
        return hist[k] if hist is not None else est[k]

    lengths = range(T, 1, -1) if (spec.multi_output and T > 1) else (T,)
    for k in range(K):
        p = k + pad
        preds = []
        for L in lengths:
            s = p - L + 1
            window = feats[s:p + 1][None]
            if not spec.location_channel:
                out = model.window_outputs(window)
            else:
                if spec.variant == "P-MIMO" and hist is None:
                    channel = model.rollout_channel(window, prev_loc(s)[None])
                else:
                    channel = np.stack([prev_loc(j) for j in range(s, p + 1)])[None]
                out = model.window_outputs(window, channel)
            preds.append(out[0, -1])
        est[k] = sliding_window_average(preds)
    return est


# -- checkpoints -------------------------------------------------------------

def save_model(model: SequenceModel, path):
    arrays = {f"net.{k}": v for k, v in model.net.named_params().items()}
    arrays.update({f"opt.{k}": v for k, v in model.opt.to_arrays().items()})
    arrays["norm.low"] = model.normalizer.low
    arrays["norm.high"] = model.normalizer.high
    arrays["frame.center"] = np.asarray(model.center, float)
    meta = {
        "format": "trajloc-sequence-model",
        "spec": asdict(model.spec),
        "net": model.net.config,
        "filter": {"betas": list(model.filter.betas), "enabled": model.filter.enabled},
        "scale": model.scale,
        "epochs_done": model.epochs_done,
        "seed": model.seed,
        "optimizer": {"algorithm": model.opt.algorithm, "lr": model.opt.lr,
                      "step_count": model.opt.step_count},
    }
    save_checkpoint(path, arrays, meta)


def load_model(path) -> SequenceModel:
    arrays, meta = load_checkpoint(path)
    spec = WiringSpec(**meta["spec"])
    net = SequenceNetwork(**meta["net"])
    net.load_params({k[4:]: v for k, v in arrays.items() if k.startswith("net.")})
    opt = OptimizerState(meta["optimizer"]["algorithm"], meta["optimizer"]["lr"],
                         step_count=meta["optimizer"]["step_count"])
    opt.load_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("opt.")})
    return SequenceModel(spec, net, Normalizer(arrays["norm.low"], arrays["norm.high"]),
                         arrays["frame.center"], float(meta["scale"]),
                         FilterConfig(tuple(meta["filter"]["betas"]), enabled=meta["filter"]["enabled"]),
                         opt, int(meta["epochs_done"]), int(meta["seed"]))
