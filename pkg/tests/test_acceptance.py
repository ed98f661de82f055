"""Acceptance checks, one test per criterion.

Each test records a one-line outcome that is printed in the terminal summary.
Criteria 6-9 train full-size models and are marked ``slow``; deselect them
with ``-m "not slow"``.
"""

import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from conftest import record
from trajloc.baselines import kernel_track, radar_track, srl_knn_track
from trajloc.cli import EXIT_OK, main
from trajloc.dataset import SyntheticEnvironment, TestTrack, alias_region, generate_synthetic
from trajloc.evaluate import AmbiguityConfig, count_ambiguous_trajectories, history_noise_sweep, speed_sweep
from trajloc.filter import FilterConfig, filter_sequence, frequency_response
from trajloc.nncore import check_gradients
from trajloc.seqmodels import (WiringSpec, _channel, batch_loss, compute_gradients, make_training_data, new_model,
                               predict_track, sliding_window_average, train)
from trajloc.trajgen import MotionModel, build_transition_table, sample_next

CELLS = ["rnn", "lstm", "gru", "birnn", "bilstm", "bigru"]
VARIANTS = ["MISO", "A-MISO", "MIMO", "A-MIMO", "P-MIMO"]
SEEDS_6 = range(10)
UJI_CANDIDATES = ["data/UJIIndoorLoc/trainingData.csv", "data/trainingData.csv", "trainingData.csv"]


def mean_err(est, track):
    return float(np.linalg.norm(est - track.locations, axis=1).mean())


# -- 1 -------------------------------------------------------------------------

def test_criterion_1_gradients():
    t0 = time.perf_counter()
    db, _ = generate_synthetic(SyntheticEnvironment(), 2)
    rng = np.random.default_rng(0)
    worst, worst_case = 0.0, None
    for i in range(50):
        cell, variant = CELLS[i % 6], VARIANTS[i % 5]
        spec = WiringSpec(variant, cell, T=3, layers=int(rng.integers(1, 3)), hidden=4, dropout=0.0)
        model = new_model(db, spec, seed=i)
        batch, _ = make_training_data(db, model, MotionModel(), 3, val_fraction=0.0)
        channel = _channel(model, batch)
        _, grads = compute_gradients(model, batch, channel, training=False)
        analytic = {k: v.copy() for k, v in grads.items()}
        errs = check_gradients(lambda: batch_loss(model, batch, channel)[0], model.net.named_params(), analytic)
        e = max(errs.values())
        if e > worst:
            worst, worst_case = e, f"{variant}/{cell}"
    secs = time.perf_counter() - t0
    ok = worst < 1e-4 and secs < 60
    record(1, ok, f"max relative error {worst:.2e} ({worst_case}) over 50 configs, {secs:.1f} s "
                  f"(need < 1e-4, < 60 s)")
    assert ok


# -- 2 -------------------------------------------------------------------------

def test_criterion_2_filter():
    cfg = FilterConfig((0.8, 0.2, 0.8, 0.15, 0.05))
    const_dev = float(np.abs(filter_sequence(np.full(200, -67.25), cfg) + 67.25).max())
    rng = np.random.default_rng(0)
    x, z = rng.normal(-70, 8, 300), rng.normal(-60, 8, 300)
    a, b = 1.7, -0.6
    lin = float(np.abs(filter_sequence(a * x + b * z, cfg, init="zero")
                       - a * filter_sequence(x, cfg, init="zero") - b * filter_sequence(z, cfg, init="zero")).max())
    gain = np.abs(frequency_response(cfg, np.linspace(0, np.pi, 64)))
    rise = float(np.diff(gain).max())
    ok = const_dev <= 1e-12 and lin <= 1e-10 and rise <= 0.0
    record(2, ok, f"constant deviation {const_dev:.1e}, linearity {lin:.1e}, largest gain increase {rise:.1e}")
    assert ok


# -- 3 -------------------------------------------------------------------------

def test_criterion_3_transition_model():
    db, _ = generate_synthetic(SyntheticEnvironment(), 1)
    table = build_transition_table(db, MotionModel())
    row_dev = float(np.abs(table.probs.sum(axis=1) - 1.0).max())

    i, n = 170, 100_000
    counts = np.bincount(sample_next(table, np.full(n, i), np.random.default_rng(0)), minlength=db.size)
    p = table.probs[i]
    sd = np.sqrt(n * p * (1 - p))
    outside = int(np.sum(np.abs(counts - n * p) > 3 * sd + 1e-9))

    asym = 0
    for r in (0, 100, 170, 335):
        d2 = np.sum((db.locations - db.locations[r]) ** 2, axis=1)
        for v in np.unique(d2):
            grp = table.probs[r, d2 == v]
            asym += int(np.any(grp != grp[0]))
    ok = row_dev <= 1e-12 and outside == 0 and asym == 0
    record(3, ok, f"row-sum deviation {row_dev:.1e}; {outside} of {db.size} cells outside 3 sigma "
                  f"(need 0); {asym} asymmetric equidistance groups")
    assert ok


# -- 4 -------------------------------------------------------------------------

def aliased_database():
    env = SyntheticEnvironment(shadowing_std=0.0, static_shadowing_std=6.0, static_correlation_length=1.5)
    db, _ = generate_synthetic(env, 1)
    return alias_region(db, (0.0, 0.0, 5.0, 5.0), (15.0, 10.0))


def test_criterion_4_ambiguity():
    db = aliased_database()
    table = build_transition_table(db, MotionModel())
    counts = [count_ambiguous_trajectories(db, table, T, 10_000, AmbiguityConfig(0.9),
                                           np.random.default_rng([0, 31, T])) for T in range(1, 11)]
    decreasing = all(a > b for a, b in zip(counts[:8], counts[1:8]))
    ok = decreasing and counts[9] == 0.0
    record(4, ok, "T=1..10: " + ", ".join(f"{c:.4g}" for c in counts))
    assert ok


# -- 5 -------------------------------------------------------------------------

def test_criterion_5_sliding_window():
    rng = np.random.default_rng(0)
    worst_mean, hull_fail = 0.0, 0
    for _ in range(1000):
        w = rng.uniform(-30, 30, size=(int(rng.integers(3, 12)), 2))
        m = sliding_window_average(w)
        worst_mean = max(worst_mean, float(np.abs(m - w.sum(axis=0) / len(w)).max()))
        hull = ConvexHull(w)
        hull_fail += int(np.any(hull.equations[:, :2] @ m + hull.equations[:, 2] > 1e-9))
    # end-to-end: the model's estimate is the mean of its window predictions
    db, track = generate_synthetic(SyntheticEnvironment(), 5)
    track = TestTrack(track.locations[:20], track.scans[:20])
    model = new_model(db, WiringSpec("MIMO", "lstm", T=4, layers=1, hidden=6, dropout=0.0), seed=1)
    feats = model.features(track.fingerprints())
    k = 10
    window = [model.window_outputs(feats[k - L + 1:k + 1][None])[0, -1] for L in range(4, 1, -1)]
    e2e = float(np.abs(predict_track(model, track)[k] - np.sum(window, axis=0) / 3).max())
    ok = worst_mean <= 1e-12 and hull_fail == 0 and e2e <= 1e-12
    record(5, ok, f"mean deviation {worst_mean:.1e}, model-window deviation {e2e:.1e}, "
                  f"{hull_fail} of 1000 windows outside hull")
    assert ok


# -- 6, 8, 9: full-size synthetic experiments ------------------------------------

_TRAINED = {}


def trained(seed):
    """Default site for ``seed`` and a P-MIMO LSTM trained with 2000 walks x 200 epochs."""
    if seed not in _TRAINED:
        env = SyntheticEnvironment(seed=seed)
        db, track = generate_synthetic(env, 100)
        t0 = time.perf_counter()
        res = train(db, WiringSpec(), MotionModel(), n_traj=2000, epochs=200, seed=seed)
        _TRAINED[seed] = (env, db, track, res.model, time.perf_counter() - t0)
    return _TRAINED[seed]


@pytest.mark.slow
def test_criterion_6_relative_accuracy():
    ratios_r, ratios_k, lines, total = [], [], [], 0.0
    for seed in SEEDS_6:
        env, db, track, model, secs = trained(seed)
        total += secs
        p = mean_err(predict_track(model, track), track)
        r = mean_err(radar_track(db, track), track)
        k = mean_err(kernel_track(db, track), track)
        ratios_r.append(p / r)
        ratios_k.append(p / k)
        lines.append(f"{seed}:{p:.2f}/{r:.2f}/{k:.2f}")
    mr, mk = float(np.median(ratios_r)), float(np.median(ratios_k))
    ok = mr <= 0.85 and mk <= 0.85
    record(6, ok, f"median P-MIMO/RADAR {mr:.3f}, P-MIMO/kernel {mk:.3f} (need <= 0.85); "
                  f"seed:pmimo/radar/kernel m " + " ".join(lines))
    record("6-runtime", None, f"training wall-clock {total / 60:.1f} min for 10 seeds (target < 30 min)")
    assert ok


def find_uji():
    env = os.environ.get("TRAJLOC_UJI")
    candidates = [env] if env else []
    root = Path(__file__).resolve().parents[1]
    candidates += [str(root / c) for c in UJI_CANDIDATES]
    return next((c for c in candidates if c and Path(c).is_file()), None)


@pytest.mark.slow
def test_criterion_7_ujiindoorloc(tmp_path):
    path = find_uji()
    if path is None:
        record(7, False, "UJIIndoorLoc trainingData.csv not found (set TRAJLOC_UJI); criterion not evaluated")
        pytest.fail("UJIIndoorLoc data unavailable")
    common = ["--set", "dataset.source=ujiindoorloc", "--set", f"dataset.path={path}",
              "--set", "train.trajectories=2000", "--set", "train.epochs=200"]
    data, run, ev = tmp_path / "data", tmp_path / "run", tmp_path / "eval"
    assert main(["gen", "--out", str(data), *common]) == EXIT_OK
    assert main(["train", "--data", str(data), "--out", str(run), *common]) == EXIT_OK
    assert main(["eval", "--data", str(data), "--checkpoint", str(run / "model.ckpt"), "--out", str(ev),
                 "--baselines", "radar,mlp", "--folds", "1", *common]) == EXIT_OK
    rows = {r.split(",")[0]: float(r.split(",")[1]) for r in (ev / "comparison.csv").read_text().splitlines()[1:]}
    p, r, m = rows["P-MIMO"], rows["RADAR"], rows["MLP"]
    within = all(0.5 * ref <= v <= 1.5 * ref for v, ref in ((p, 4.5), (r, 7.9), (m, 9.2)))
    ok = p < r and p < m and within
    record(7, ok, f"P-MIMO {p:.2f} m, RADAR {r:.2f} m, MLP {m:.2f} m (reference 4.5 / 7.9 / 9.2, +-50%)")
    assert ok


@pytest.mark.slow
def test_criterion_8_speed_sweep():
    env, db, track, model, _ = trained(0)
    locs = {"lstm": lambda tr: predict_track(model, tr), "srlknn": lambda tr: srl_knn_track(db, tr)}
    res = speed_sweep(env, locs, [0.5, 1.0, 1.5, 2.0, 2.5], np.random.default_rng([0, 41]), 344,
                      scans_per_point=2, walks=5)
    lstm, srl = res.means("lstm"), res.means("srlknn")
    spread = max(lstm) - min(lstm)
    ok = spread < 0.5 and srl[-1] >= 2 * srl[0]
    record(8, ok, f"LSTM means {np.round(lstm, 2).tolist()} (spread {spread:.2f} m, need < 0.5); "
                  f"SRL-KNN {np.round(srl, 2).tolist()} (ratio {srl[-1] / srl[0]:.2f}, need >= 2)")
    assert ok


@pytest.mark.slow
def test_criterion_9_history_noise():
    _, _, track, model, _ = trained(0)
    reps = history_noise_sweep(model, track, [0, 2, 4, 6], np.random.default_rng([0, 42]))
    p80 = [reps[g].percentile(80) for g in (0, 2, 4, 6)]
    shift = p80[1] - p80[0]
    ok = abs(shift) < 0.5 and all(b >= a for a, b in zip(p80, p80[1:]))
    record(9, ok, f"80th percentile at gamma 0/2/4/6 m: {np.round(p80, 3).tolist()} "
                  f"(shift {shift:+.3f} m, need |shift| < 0.5 and non-decreasing)")
    assert ok


# -- 10 --------------------------------------------------------------------------

def test_criterion_10_determinism(tmp_path):
    tiny = ["--set", "model.hidden=8", "--set", "model.layers=1", "--set", "train.T=4",
            "--set", "train.trajectories=40", "--set", "train.epochs=3", "--set", "dataset.s1=10",
            "--set", "eval.folds=2"]
    root = tmp_path / "run"

    def pipeline():
        d, r, e = root / "data", root / "train", root / "eval"
        assert main(["gen", "--out", str(d), *tiny]) == EXIT_OK
        assert main(["train", "--data", str(d), "--out", str(r), *tiny]) == EXIT_OK
        assert main(["eval", "--data", str(d), "--checkpoint", str(r / "model.ckpt"), "--out", str(e),
                     "--baselines", "radar,kernel,kalman,srlknn", *tiny]) == EXIT_OK
        return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    first = pipeline()
    shutil.rmtree(root)
    second = pipeline()
    differing = sorted(k for k in first.keys() | second.keys() if first.get(k) != second.get(k))
    ok = not differing
    record(10, ok, f"{len(first)} files from gen/train/eval compared, {len(differing)} differ"
                   + (f": {differing[:5]}" if differing else ""))
    assert ok
