import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from trajloc.dataset import FingerprintDatabase, SyntheticEnvironment, TestTrack, generate_synthetic
from trajloc.evaluate import (AmbiguityConfig, UndefinedCorrelationError, correlation_matrix,
                              count_ambiguous_points, count_ambiguous_trajectories, error_report,
                              history_noise_sweep, neighbour_threshold, noisy_history, pearson, speed_sweep,
                              speed_walk, write_report)
from trajloc.nncore import ShapeError
from trajloc.seqmodels import WiringSpec, new_model, predict_track
from trajloc.trajgen import MotionModel, build_transition_table


class TestPearson:
    def test_example(self):
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.982, abs=1e-3)
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(stats.pearsonr([1, 2, 3], [1, 2, 4])[0], abs=1e-14)

    def test_constant_undefined(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pearson([1, 2], [1, 2, 3])

    @settings(max_examples=60, deadline=None)
    @given(arrays(float, 8, elements=st.floats(-100, 0)), arrays(float, 8, elements=st.floats(-100, 0)))
    def test_matches_scipy(self, a, b):
        if np.ptp(a) < 1e-3 or np.ptp(b) < 1e-3:
            return
        r = pearson(a, b)
        assert -1 - 1e-12 <= r <= 1 + 1e-12
        assert r == pytest.approx(stats.pearsonr(a, b)[0], abs=1e-9)
        assert r == pytest.approx(pearson(b, a), abs=1e-12)

    def test_matrix_matches_corrcoef(self):
        F = np.random.default_rng(0).normal(size=(12, 7))
        np.testing.assert_allclose(correlation_matrix(F), np.corrcoef(F), atol=1e-12)


class TestErrorReport:
    def test_three_four_five(self):
        r = error_report([[0, 0]], [[3, 4]])
        assert r.mean == 5.0 and r.max == 5.0 and r.std == 0.0

    def test_cdf_monotone_to_one(self):
        rng = np.random.default_rng(1)
        t = rng.uniform(0, 10, size=(50, 2))
        r = error_report(t, t + rng.normal(0, 1, size=t.shape))
        assert np.all(np.diff(r.cdf_y) >= 0) and r.cdf_y[-1] == 1.0
        assert r.cdf_x[1] - r.cdf_x[0] == pytest.approx(0.05)
        assert r.cdf(r.max) == 1.0
        assert r.percentile(50) == pytest.approx(np.median(r.errors))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            error_report([[0, 0], [1, 1]], [[0, 0]])

    def test_empty(self):
        r = error_report(np.zeros((0, 2)), np.zeros((0, 2)))
        assert r.mean == 0.0 and r.summary()["count"] == 0

    def test_write_report(self, tmp_path):
        t = np.array([[0.0, 0.0], [1.0, 1.0]])
        e = np.array([[3.0, 4.0], [1.0, 1.0]])
        write_report(error_report(t, e), t, e, tmp_path, "x_")
        lines = (tmp_path / "x_points.csv").read_text().splitlines()
        assert lines[0] == "point_id,true_x,true_y,est_x,est_y,error_m"
        assert lines[1].endswith("5.000000")
        assert json.loads((tmp_path / "x_summary.json").read_text())["mean"] == 2.5
        assert (tmp_path / "x_cdf.csv").read_text().splitlines()[-1].endswith("1.000000")


def aliased_db():
    """Three RPs on a line; RPs 0 and 2 are far apart yet share a fingerprint."""
    locs = np.array([[0.0, 0.0], [1.0, 0.0], [9.0, 0.0]])
    a = np.array([[-40.0, -60.0, -80.0, -55.0]])
    b = np.array([[-80.0, -45.0, -50.0, -70.0]])
    return FingerprintDatabase(locs, (a, b, a.copy()), 4, 1.0)


class TestAmbiguity:
    def test_aliased_pair(self):
        res = count_ambiguous_points(aliased_db())
        np.testing.assert_array_equal(res.counts, [1, 0, 1])

    def test_neighbours_excluded(self):
        db = aliased_db()
        db2 = FingerprintDatabase(np.array([[0.0, 0.0], [3.0, 0.0], [0.9, 0.0]]), db.scans, 4, 1.0)
        np.testing.assert_array_equal(count_ambiguous_points(db2).counts, [0, 0, 0])

    def test_T1_equals_point_count(self):
        db, _ = generate_synthetic(SyntheticEnvironment(), 5)
        table = build_transition_table(db, MotionModel())
        cfg = AmbiguityConfig(0.9)
        assert count_ambiguous_trajectories(db, table, 1, 100, cfg) == count_ambiguous_points(db, cfg).average

    def test_matches_bruteforce_loop(self):
        db, _ = generate_synthetic(SyntheticEnvironment(), 5)
        table = build_transition_table(db, MotionModel())
        cfg = AmbiguityConfig(0.9)
        got = count_ambiguous_trajectories(db, table, 3, 20, cfg, np.random.default_rng(4), chunk=20)
        # replay the same draws and count pair by pair
        from trajloc.evaluate import rp_fingerprints
        from trajloc.trajgen import sample_walks
        rng = np.random.default_rng(4)
        F = rp_fingerprints(db)
        refs = sample_walks(table, 3, 20, rng)
        cands = sample_walks(table, 3, db.size, rng, start=np.arange(db.size))
        n = 0
        for r in refs:
            for c in cands:
                if all(np.linalg.norm(db.locations[r[t]] - db.locations[c[t]]) > db.grid_size for t in range(3)):
                    n += pearson(F[r].ravel(), F[c].ravel()) > 0.9
        assert got == n / 20

    def test_derived_threshold(self):
        db, _ = generate_synthetic(SyntheticEnvironment(), 5)
        thr = neighbour_threshold(db)
        assert -1 < thr < 1
        assert count_ambiguous_points(db, AmbiguityConfig(None)).threshold == thr

    def test_invalid(self):
        with pytest.raises(ValueError):
            AmbiguityConfig(1.0)
        db, _ = generate_synthetic(SyntheticEnvironment(), 1)
        with pytest.raises(ValueError):
            count_ambiguous_trajectories(db, build_transition_table(db, MotionModel()), 0, 10)


class TestSweeps:
    def test_speed_walk_steps(self):
        wp = np.array([[0.0, 0.0], [20.0, 0.0], [20.0, 10.0]])
        locs = speed_walk(wp, 1.5, 101, np.random.default_rng(0))
        assert locs.shape == (101, 2)
        # points stay on the polyline
        on_first = np.isclose(locs[:, 1], 0.0) & (locs[:, 0] <= 20 + 1e-9)
        on_second = np.isclose(locs[:, 0], 20.0)
        assert np.all(on_first | on_second)

    def test_speed_walk_straight_line_step_lengths(self):
        wp = np.array([[0.0, 0.0], [1000.0, 0.0]])
        locs = speed_walk(wp, 2.0, 201, np.random.default_rng(1))
        steps = np.diff(locs[:, 0])
        assert np.all(steps <= 2.0 + 1e-9) and np.all(steps >= 0)
        assert np.sum(np.isclose(steps, 2.0)) == 100

    def test_speed_sweep_reports(self):
        env = SyntheticEnvironment()
        res = speed_sweep(env, {"origin": lambda tr: np.zeros_like(tr.locations)}, [0.5, 1.0],
                          np.random.default_rng(0), n_points=20)
        assert res.values == [0.5, 1.0] and len(res.means("origin")) == 2

    def test_speed_sweep_pools_walks(self):
        env = SyntheticEnvironment()
        seen = []

        def spy(tr):
            seen.append((len(tr), tr.scans[0].shape[0]))
            return tr.locations.copy()

        res = speed_sweep(env, {"exact": spy}, [1.0], np.random.default_rng(0), n_points=30,
                          scans_per_point=2, walks=3)
        assert seen == [(30, 2)] * 3
        assert res.reports["exact"][0].mean == 0.0 and len(res.reports["exact"][0].errors) == 90

    def test_zero_speed_is_stationary(self):
        env = SyntheticEnvironment()
        locs = speed_walk(env.route(), 0.0, 25, np.random.default_rng(2))
        np.testing.assert_array_equal(locs, np.repeat(locs[:1], 25, axis=0))

    def test_speed_sweep_rejects_bad_s2(self):
        with pytest.raises(ValueError):
            speed_sweep(SyntheticEnvironment(), {}, [1.0], np.random.default_rng(0), scans_per_point=3)

    def test_noisy_history(self):
        locs = np.random.default_rng(0).uniform(0, 10, size=(20000, 2))
        np.testing.assert_array_equal(noisy_history(locs, 0, np.random.default_rng(1)), locs)
        d = np.linalg.norm(noisy_history(locs, 4.0, np.random.default_rng(1)) - locs, axis=1)
        assert np.sqrt(np.mean(d ** 2)) == pytest.approx(4.0, rel=0.02)

    def test_history_gamma_zero_bit_identical(self):
        db, track = generate_synthetic(SyntheticEnvironment(), 5)
        track = TestTrack(track.locations[:20], track.scans[:20])
        model = new_model(db, WiringSpec(T=4, layers=1, hidden=8, dropout=0.0), seed=2)
        out = history_noise_sweep(model, track, [0, 2], np.random.default_rng(0))
        direct = predict_track(model, track, history=track.locations)
        np.testing.assert_array_equal(out[0].errors, np.linalg.norm(direct - track.locations, axis=1))

    def test_history_requires_channel(self):
        db, track = generate_synthetic(SyntheticEnvironment(), 1)
        model = new_model(db, WiringSpec("MIMO", T=3, layers=1, hidden=4))
        with pytest.raises(ValueError):
            history_noise_sweep(model, track, [0], np.random.default_rng(0))
