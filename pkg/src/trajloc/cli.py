"""Command-line pipeline: ``gen``, ``train``, ``eval``, ``ambiguity``, ``sweep``.

Every command writes the resolved config and a manifest (config digest,
seed, content hashes of inputs and outputs) next to its data outputs.
Data files carry no timestamps, so reruns with the same config are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines as bl
from .config import ConfigError, ExperimentConfig, apply_override, load_config, save_config
from .dataset import (DatasetError, FingerprintDatabase, TestTrack, generate_synthetic, holdout_split,
                      load_database, load_track, load_ujiindoorloc, save_database, save_track,
                      track_from_locations)
from .evaluate import (AmbiguityConfig, count_ambiguous_trajectories, error_report, history_noise_sweep,
                       speed_sweep, write_report)
from .nncore import CheckpointError, ShapeError
from .seqmodels import TrainingDivergedError, load_model, predict_track, save_model, train
from .trajgen import build_transition_table, sample_walks

log = logging.getLogger("trajloc")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_STRUCTURE = 5

DB_FILE = "database.csv"
TRACK_FILE = "track.csv"
CKPT_FILE = "model.ckpt"
UJI_TRACK_LENGTH = 200

METHOD_LABELS = {"pmimo": "P-MIMO", "radar": "RADAR", "kernel": "Kernel", "kalman": "Kalman",
                 "srlknn": "SRL-KNN", "mlp": "MLP", "mlnn": "MLNN"}


# -- helpers -------------------------------------------------------------------

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _prepare_out(out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    return out


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, inputs=(), outputs=(), extra=None):
    save_config(cfg, out / "config.yaml")
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config_sha256": cfg.digest(),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {Path(p).name: _sha256(p) for p in [*outputs, out / "config.yaml"]},
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _load_data(data_dir) -> tuple[FingerprintDatabase, TestTrack]:
    d = Path(data_dir)
    return load_database(d / DB_FILE), load_track(d / TRACK_FILE)


def walk_track(db: FingerprintDatabase, held: dict, cfg: ExperimentConfig, length: int, rng) -> TestTrack:
    """Random walk over RPs that have a held-out scan, read with those scans."""
    idx = np.array(sorted(held))
    if idx.size == 0:
        raise DatasetError("no RP has a held-out scan")
    table = build_transition_table(db.locations[idx], cfg.motion_model())
    walk = sample_walks(table, length, 1, rng)[0]
    rps = idx[walk]
    return TestTrack(db.locations[rps], tuple(held[i][None] for i in rps), initial_known=True)


def _f(v) -> str:
    return f"{v:.6f}"


# -- commands -------------------------------------------------------------------

def cmd_gen(cfg: ExperimentConfig, out) -> int:
    out = _prepare_out(out)
    extra = {}
    inputs = []
    if cfg.dataset.source == "synthetic":
        db, track = generate_synthetic(cfg.environment(), cfg.dataset.s1, cfg.dataset.s2)
    else:
        d = cfg.dataset
        sel = load_ujiindoorloc(d.path, d.building, d.floor, d.phones, d.drop_undetected)
        db, held = holdout_split(sel.db, np.random.default_rng([cfg.seed, 11]))
        track = walk_track(db, held, cfg, UJI_TRACK_LENGTH, np.random.default_rng([cfg.seed, 12]))
        extra = {"coordinate_offset": list(sel.origin), "rows": sel.rows, "phones": sel.phone_ids,
                 "wap_columns": sel.wap_columns}
        inputs = [d.path]
    save_database(db, out / DB_FILE)
    save_track(track, out / TRACK_FILE)
    write_manifest(out, "gen", cfg, inputs, [out / DB_FILE, out / TRACK_FILE],
                   {**extra, "rp_count": db.size, "track_points": len(track)})
    print(f"wrote {db.size} RPs and a {len(track)}-point track to {out}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, data_dir, out, resume=None) -> int:
    out = _prepare_out(out)
    db, _ = _load_data(data_dir)
    model = load_model(resume) if resume else None

    def report(epoch, tr, va, secs):
        print(f"epoch {epoch}: train {tr:.4f} m  val {va:.4f} m  ({secs:.2f} s)", file=sys.stderr)

    res = train(db, cfg.wiring(), cfg.motion_model(), n_traj=cfg.train.trajectories,
                epochs=cfg.train.epochs, seed=cfg.seed, filter_config=cfg.filter_config(), model=model,
                val_fraction=cfg.train.val_fraction, normalization=cfg.train.normalization, on_epoch=report)
    save_model(res.model, out / CKPT_FILE)
    _write_csv(out / "curve.csv", ["epoch", "train_err", "val_err"],
               [(e, _f(a), _f(b)) for e, a, b in res.curve])
    inputs = [Path(data_dir) / DB_FILE] + ([resume] if resume else [])
    write_manifest(out, "train", cfg, inputs, [out / CKPT_FILE, out / "curve.csv"],
                   {"epochs_done": res.model.epochs_done})
    if res.seconds_per_epoch:
        print(f"mean wall-clock per epoch: {np.mean(res.seconds_per_epoch):.2f} s")
    if res.curve:
        print(f"final validation error: {res.curve[-1][2]:.4f} m")
    return EXIT_OK


def build_localizers(cfg: ExperimentConfig, db: FingerprintDatabase, names, model=None) -> dict:
    """name -> f(track) -> (K, 2) estimates."""
    b = cfg.baselines
    out = {}
    if model is not None:
        out["pmimo"] = lambda tr: predict_track(model, tr)
    for name in names:
        if name == "radar":
            out[name] = lambda tr: bl.radar_track(db, tr, b.k)
        elif name == "kernel":
            out[name] = lambda tr: bl.kernel_track(db, tr, b.kernel_bandwidth)
        elif name == "kalman":
            noise = bl.KalmanNoise(b.kalman_process, b.kalman_measurement, cfg.motion.delta_t)
            out[name] = lambda tr, noise=noise: bl.kalman_track(db, tr, bl.KnnConfig(b.k), noise)
        elif name == "srlknn":
            out[name] = lambda tr: bl.srl_knn_track(db, tr, b.k, b.srl_sigma)
        elif name in ("mlp", "mlnn"):
            layers = bl.MLP_LAYERS if name == "mlp" else bl.MLNN_LAYERS
            dense = bl.train_dense(db, layers, epochs=b.dense_epochs, seed=cfg.seed)
            out[name] = lambda tr, dense=dense: bl.dense_track(dense, tr)
        else:
            raise ConfigError(f"unknown baseline {name!r}; choose from {sorted(METHOD_LABELS)}")
    return out


PLOT_SCRIPT = """# gnuplot script: error CDFs of every method in this directory
set datafile separator ','
set key bottom right
set xlabel 'Localization error (m)'
set ylabel 'CDF'
set terminal pngcairo size 800,600
set output 'cdf.png'
plot {series}
"""


def cmd_eval(cfg: ExperimentConfig, data_dir, checkpoint, out, baselines=None, folds=None) -> int:
    out = _prepare_out(out)
    db, track = _load_data(data_dir)
    model = load_model(checkpoint) if checkpoint else None
    if model is not None and model.feature_count != db.feature_count:
        raise ShapeError(f"checkpoint expects {model.feature_count} features, database has {db.feature_count}")
    names = cfg.eval.baselines if baselines is None else baselines
    folds = cfg.eval.folds if folds is None else folds
    localizers = build_localizers(cfg, db, names, model)
    tracks = [track]
    if folds > 1:
        if cfg.dataset.source != "synthetic":
            raise ConfigError("k-fold evaluation needs a synthetic source to redraw test scans")
        env = cfg.environment()
        tracks = [track_from_locations(env, track.locations, np.random.default_rng([cfg.seed, 21, f]),
                                       cfg.dataset.s2) for f in range(folds)]
    outputs = []
    rows = []
    for name, fn in localizers.items():
        errs = []
        for f, tr in enumerate(tracks):
            est = fn(tr)
            rep = error_report(tr.locations, est)
            prefix = f"{name}_" if folds == 1 else f"{name}_fold{f}_"
            write_report(rep, tr.locations, est, out, prefix)
            outputs += [out / f"{prefix}{s}" for s in ("points.csv", "cdf.csv", "summary.json")]
            errs.append(rep.errors)
        pooled = error_report(np.zeros((sum(len(e) for e in errs), 2)),
                              np.column_stack([np.concatenate(errs), np.zeros(sum(len(e) for e in errs))]))
        if folds > 1:
            with open(out / f"{name}_pooled_summary.json", "w") as fh:
                json.dump(pooled.summary(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            outputs.append(out / f"{name}_pooled_summary.json")
        s = pooled.summary()
        rows.append((METHOD_LABELS[name], _f(s["mean"]), _f(s["std"]), _f(s["p80"]), _f(s["max"])))
    _write_csv(out / "comparison.csv", ["method", "mean_m", "std_m", "p80_m", "max_m"], rows)
    # Table-style layout: one column per method
    _write_csv(out / "comparison_wide.csv", ["metric", *[r[0] for r in rows]],
               [["mean_m", *[r[1] for r in rows]], ["std_m", *[r[2] for r in rows]]])
    cdf_prefix = (lambda n: f"{n}_") if folds == 1 else (lambda n: f"{n}_fold0_")
    series = ", \\\n     ".join(f"'{cdf_prefix(n)}cdf.csv' every ::1 using 1:2 with lines title '{METHOD_LABELS[n]}'"
                                for n in localizers)
    (out / "plot_cdf.gp").write_text(PLOT_SCRIPT.format(series=series))
    outputs += [out / "comparison.csv", out / "comparison_wide.csv", out / "plot_cdf.gp"]
    inputs = [Path(data_dir) / DB_FILE, Path(data_dir) / TRACK_FILE] + ([checkpoint] if checkpoint else [])
    write_manifest(out, "eval", cfg, inputs, outputs, {"folds": folds})
    for r in rows:
        print(f"{r[0]:8s} mean {r[1]} m  std {r[2]} m")
    return EXIT_OK


def cmd_ambiguity(cfg: ExperimentConfig, data_dir, out) -> int:
    out = _prepare_out(out)
    db = load_database(Path(data_dir) / DB_FILE)
    table = build_transition_table(db, cfg.motion_model())
    acfg = AmbiguityConfig(cfg.eval.correlation_threshold)
    rows = []
    for T in cfg.eval.ambiguity_T:
        avg = count_ambiguous_trajectories(db, table, int(T), cfg.eval.ambiguity_samples, acfg,
                                           np.random.default_rng([cfg.seed, 31, int(T)]))
        rows.append((int(T), _f(avg)))
        print(f"T={T}: {avg:.4f} ambiguous trajectories on average")
    _write_csv(out / "ambiguity.csv", ["T", "avg_ambiguous"], rows)
    write_manifest(out, "ambiguity", cfg, [Path(data_dir) / DB_FILE], [out / "ambiguity.csv"])
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, data_dir, checkpoint, out, kind="all") -> int:
    out = _prepare_out(out)
    db, track = _load_data(data_dir)
    model = load_model(checkpoint)
    outputs = []
    if kind in ("speed", "all"):
        if cfg.dataset.source != "synthetic":
            raise ConfigError("the speed sweep needs a synthetic source")
        locs = build_localizers(cfg, db, ["srlknn"], model)
        res = speed_sweep(cfg.environment(), locs, cfg.eval.speeds, np.random.default_rng([cfg.seed, 41]),
                          cfg.eval.speed_points, scans_per_point=cfg.eval.speed_scans_per_point,
                          walks=cfg.eval.speed_walks)
        rows = [(v, *[_f(res.reports[n][i].mean) for n in locs]) for i, v in enumerate(res.values)]
        _write_csv(out / "speed.csv", ["v_max", *[f"{n}_mean_m" for n in locs]], rows)
        outputs.append(out / "speed.csv")
    if kind in ("history", "all"):
        reps = history_noise_sweep(model, track, cfg.eval.history_gammas, np.random.default_rng([cfg.seed, 42]))
        rows, cdf_rows = [], []
        for g, rep in reps.items():
            rows.append((g, _f(rep.mean), _f(rep.percentile(80))))
            cdf_rows += [(g, f"{x:.4f}", f"{y:.6f}") for x, y in zip(rep.cdf_x, rep.cdf_y)]
        _write_csv(out / "history.csv", ["gamma_m", "mean_m", "p80_m"], rows)
        _write_csv(out / "history_cdf.csv", ["gamma_m", "error_m", "cdf"], cdf_rows)
        outputs += [out / "history.csv", out / "history_cdf.csv"]
    write_manifest(out, f"sweep-{kind}", cfg, [Path(data_dir) / DB_FILE, Path(data_dir) / TRACK_FILE,
                                                 checkpoint], outputs)
    print(f"wrote {', '.join(p.name for p in outputs)} to {out}")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trajloc", description="Trajectory-based WiFi fingerprint localization")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config (defaults if omitted)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. train.epochs=50")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (default: config output_dir)")

    sp = sub.add_parser("gen", help="generate or convert a database and test track")
    common(sp)
    sp = sub.add_parser("train", help="train a sequence model")
    common(sp)
    sp.add_argument("--data", required=True, help="directory written by gen")
    sp.add_argument("--resume", help="checkpoint to continue training from")
    sp = sub.add_parser("eval", help="evaluate a checkpoint and baselines on the test track")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--baselines", help="comma-separated: radar,kernel,kalman,srlknn,mlp,mlnn")
    sp.add_argument("--folds", type=int)
    sp = sub.add_parser("ambiguity", help="average ambiguous-trajectory count per memory length")
    common(sp)
    sp.add_argument("--data", required=True)
    sp = sub.add_parser("sweep", help="speed and history-noise robustness sweeps")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--kind", choices=["speed", "history", "all"], default="all")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for assignment in args.set:
        cfg = apply_override(cfg, assignment)
    if args.seed is not None:
        cfg = apply_override(cfg, f"seed={args.seed}")
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = args.out or cfg.output_dir
        if args.command == "gen":
            return cmd_gen(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, args.data, out, args.resume)
        if args.command == "eval":
            names = None if args.baselines is None else [n for n in args.baselines.split(",") if n]
            return cmd_eval(cfg, args.data, args.checkpoint, out, names, args.folds)
        if args.command == "ambiguity":
            return cmd_ambiguity(cfg, args.data, out)
        return cmd_sweep(cfg, args.data, args.checkpoint, out, args.kind)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ShapeError, DatasetError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
