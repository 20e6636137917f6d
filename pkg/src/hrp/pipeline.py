"""Offline training / online prediction commands behind the CLI.

Every command reads the run config, writes only inside ``cfg["out"]`` and
records config, seeds, timings and SHA-256 checksums of its inputs and
outputs in ``manifest.json``.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config as config_mod, dataio, gpr, importance, kernels, metrics, temporal
from .preprocess import ConfigError, NormalizationStats, PreprocessConfig, WindowSet, prepare

log = logging.getLogger(__name__)

EXTRACTOR_FILE = "extractor.ckpt.json"
GP_FILE = "gp.ckpt.json"
PREDICTIONS_FILE = "predictions.csv"
PRED_COLUMNS = ["unit_id", "end_cycle", "point", "lower", "upper", "variance", "truth", "truth_raw"]


class CompatibilityError(ValueError):
    """Checkpoint and data/config disagree (window length, sensors)."""


class OutputLockedError(RuntimeError):
    pass


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@contextlib.contextmanager
def locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLockedError(f"{out} is in use by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _update_manifest(out: Path, command: str, cfg, inputs, outputs, timings):
    path = out / "manifest.json"
    manifest = {}
    if path.exists():
        manifest = json.loads(path.read_text())
    manifest["package_version"] = __version__
    manifest["versions"] = {
        "hrp": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kernel_backend": kernels.BACKEND,
    }
    manifest.setdefault("commands", {})[command] = {
        "config": cfg,
        "seeds": config_mod.seeds(cfg),
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {Path(p).name: sha256(p) for p in outputs},
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Data loading
# ---------------------------------------------------------------------------

def data_files(cfg) -> list:
    name = cfg["data"]["dataset"]
    if name == "synthetic":
        return []
    d = Path(cfg["data"]["dir"])
    return [d / f"train_{name}.txt", d / f"test_{name}.txt", d / f"RUL_{name}.txt"]


def load_bundle(cfg) -> dataio.DatasetBundle:
    name = cfg["data"]["dataset"]
    if name == "synthetic":
        return dataio.generate_synthetic(config_mod.synthetic_spec(cfg))
    for p in data_files(cfg):
        if not p.exists():
            raise FileNotFoundError(f"missing input file: {p}")
    return dataio.load_cmapss_dir(cfg["data"]["dir"], name)


def _stats_from_meta(meta) -> NormalizationStats:
    return NormalizationStats.from_dict(meta["normalization"])


def _check_compat(meta, pcfg: PreprocessConfig):
    if meta["preprocess"]["window_length"] != pcfg.window_length:
        raise CompatibilityError(f"checkpoint window length {meta['preprocess']['window_length']} "
                                 f"!= configured {pcfg.window_length}")
    if tuple(meta["preprocess"]["selected_sensors"]) != pcfg.selected_sensors:
        raise CompatibilityError("checkpoint was trained on a different sensor selection")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg) -> list:
    """Write the configured synthetic bundle as C-MAPSS text under ``out/data``."""
    out = Path(cfg["out"])
    with locked(out):
        t0 = time.perf_counter()
        bundle = dataio.generate_synthetic(config_mod.synthetic_spec(cfg))
        paths = dataio.write_cmapss_dir(bundle, out / "data", "SYN")
        _update_manifest(out, "synth", cfg, [], paths, {"total": time.perf_counter() - t0})
    return paths


def cmd_preprocess(cfg) -> list:
    out = Path(cfg["out"])
    pcfg = config_mod.preprocess_config(cfg)
    bundle = load_bundle(cfg)
    with locked(out):
        t0 = time.perf_counter()
        prep = prepare(bundle, pcfg)
        paths = [out / "windows_train.csv", out / "windows_test.csv", out / "norm_stats.json"]
        prep.train.to_csv(paths[0])
        prep.test.to_csv(paths[1])
        paths[2].write_text(json.dumps(prep.stats.to_dict(), indent=2, sort_keys=True) + "\n")
        for w in prep.train.warnings:
            log.warning(w)
        _update_manifest(out, "preprocess", cfg, data_files(cfg), paths,
                         {"total": time.perf_counter() - t0})
    return paths


def _initial_hyperparams(cfg, y):
    g = cfg["gp"]
    amp = g["amplitude"] if g["amplitude"] > 0 else max(float(np.std(y)), 1e-6)
    noise = g["noise_std"] if g["noise_std"] > 0 else 0.1 * amp
    return amp, g["length_scale"], noise


def cmd_train(cfg, progress=None) -> list:
    out = Path(cfg["out"])
    pcfg = config_mod.preprocess_config(cfg)
    tcfg = config_mod.train_config(cfg)
    bundle = load_bundle(cfg)
    timings = {}
    with locked(out):
        ext_path, gp_path = out / EXTRACTOR_FILE, out / GP_FILE
        try:
            t0 = time.perf_counter()
            prep = prepare(bundle, pcfg)
            if len(prep.train) == 0:
                raise ValueError("no training windows; trajectories shorter than the window")
            timings["preprocess"] = time.perf_counter() - t0

            t0 = time.perf_counter()
            model = temporal.train_extractor(prep.train.windows, prep.train.labels, tcfg, progress)
            timings["extractor"] = time.perf_counter() - t0

            t0 = time.perf_counter()
            g = cfg["gp"]
            H = temporal.extract_batch(model, prep.train.windows)
            Hs, ys, _ = gpr.subsample_training(H, prep.train.labels, g["n_max"] or None,
                                               config_mod.sub_seed(cfg, "subsample"))
            init = _initial_hyperparams(cfg, ys)
            if g["optimize"]:
                kp, npar, _ = gpr.optimize_hyperparams(
                    Hs, ys, init, budget=g["restarts"] * g["evals_per_restart"],
                    restarts=g["restarts"], seed=config_mod.sub_seed(cfg, "gp_restarts"))
            else:
                kp, npar = gpr.KernelParams(init[0], init[1]), gpr.NoiseParam(init[2])
            jitter = g["jitter"] if g["jitter"] >= 0 else None
            gp_model = gpr.fit_gp(Hs, ys, kp, npar, jitter)
            timings["gp"] = time.perf_counter() - t0

            extra = {
                "normalization": prep.stats.to_dict(),
                "preprocess": {"window_length": pcfg.window_length,
                               "selected_sensors": list(pcfg.selected_sensors),
                               "rul_cap": pcfg.rul_cap, "smoothing_s": pcfg.smoothing_s},
            }
            _atomic_write(ext_path, temporal.extractor_to_text(model, tcfg, extra))
            _atomic_write(gp_path, gpr.gp_to_text(gp_model, {
                "log_marginal_likelihood": gpr.log_marginal_likelihood(gp_model),
                "optimized": bool(g["optimize"]),
            }))
        except BaseException:
            for p in (ext_path, gp_path):
                p.unlink(missing_ok=True)
                p.with_name(p.name + ".partial").unlink(missing_ok=True)
            raise
        _update_manifest(out, "train", cfg, data_files(cfg), [ext_path, gp_path], timings)
    return [ext_path, gp_path]


def load_models(out: Path):
    ext_path, gp_path = out / EXTRACTOR_FILE, out / GP_FILE
    for p in (ext_path, gp_path):
        if not p.exists():
            raise FileNotFoundError(f"missing model file: {p} (run 'train' first)")
    model, meta = temporal.load_extractor(ext_path)
    gp_model, gp_meta = gpr.load_gp(gp_path)
    if gp_model.dim != model.hidden_size:
        raise CompatibilityError("GP input dimension differs from the extractor hidden size")
    return model, meta, gp_model, gp_meta


def _test_windows(cfg, meta) -> WindowSet:
    pcfg = config_mod.preprocess_config(cfg)
    _check_compat(meta, pcfg)
    bundle = load_bundle(cfg)
    return prepare(bundle, pcfg, stats=_stats_from_meta(meta)).test


def predict_rows(model, gp_model, ws: WindowSet, alpha, include_noise, rul_cap):
    point, lo, hi, var = gpr.predict_interval_batch(
        gp_model, temporal.extract_batch(model, ws.windows), alpha, include_noise)
    rows = []
    for k in range(len(ws)):
        raw = ws.labels[k]
        rows.append([int(ws.unit_ids[k]), int(ws.end_cycles[k]), point[k], lo[k], hi[k], var[k],
                     min(raw, rul_cap), raw])
    return rows


def cmd_predict(cfg, stream_in=None, stream_out=None) -> list:
    """Score the last window of each test unit (or every window).

    With ``stream_in`` set, windows are read one per line (``L*F`` comma- or
    space-separated normalized values, row-major) and predictions are
    written to ``stream_out`` instead.
    """
    out = Path(cfg["out"])
    model, meta, gp_model, _ = load_models(out)
    alpha = cfg["predict"]["alpha"]
    include_noise = cfg["gp"]["interval_noise"]
    if stream_in is not None:
        return _predict_stream(model, gp_model, meta, alpha, include_noise, stream_in, stream_out)
    # test labels are min(total_life - cycle, cap) with cap >= any true RUL below
    pcfg = config_mod.preprocess_config(cfg)
    ws = _test_windows({**cfg, "preprocess": {**cfg["preprocess"], "rul_cap": 10 ** 9}}, meta)
    with locked(out):
        t0 = time.perf_counter()
        if cfg["predict"]["mode"] == "per-engine":
            ws = ws.last_per_unit()
        rows = predict_rows(model, gp_model, ws, alpha, include_noise, pcfg.rul_cap)
        path = out / PREDICTIONS_FILE
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PRED_COLUMNS)
            for r in rows:
                w.writerow(r[:2] + [repr(float(v)) for v in r[2:]])
        _update_manifest(out, "predict", cfg,
                         data_files(cfg) + [out / EXTRACTOR_FILE, out / GP_FILE], [path],
                         {"total": time.perf_counter() - t0})
    return [path]


def _predict_stream(model, gp_model, meta, alpha, include_noise, stream_in, stream_out):
    L = meta["preprocess"]["window_length"]
    F = model.n_features
    stream_out = stream_out or sys.stdout
    stream_out.write("point,lower,upper,variance\n")
    for lineno, line in enumerate(stream_in, start=1):
        line = line.strip()
        if not line:
            continue
        vals = np.array([float(v) for v in line.replace(",", " ").split()])
        if vals.size != L * F:
            raise CompatibilityError(f"stdin line {lineno}: expected {L * F} values, got {vals.size}")
        p, lo, hi, v = gpr.predict_interval_batch(
            gp_model, temporal.extract_batch(model, vals.reshape(1, L, F)), alpha, include_noise)
        stream_out.write(",".join(repr(float(a[0])) for a in (p, lo, hi, v)) + "\n")
        stream_out.flush()
    return []


def read_predictions(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path} holds no predictions")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def cmd_evaluate(cfg, predictions=None, truth=None) -> list:
    """Score a predictions file; ``truth`` optionally names a RUL label file."""
    out = Path(cfg["out"])
    pred_path = Path(predictions) if predictions else out / PREDICTIONS_FILE
    if not pred_path.exists():
        raise FileNotFoundError(f"missing predictions file: {pred_path}")
    cols = read_predictions(pred_path)
    inputs = [pred_path]
    cap = config_mod.preprocess_config(cfg).rul_cap
    if truth is not None:
        truth_path = Path(truth)
        if not truth_path.exists():
            raise FileNotFoundError(f"missing truth file: {truth_path}")
        with open(truth_path) as fh:
            y = np.array(dataio.parse_rul_labels(fh), dtype=float)
        if y.size != cols["point"].size:
            raise ValueError(f"{y.size} truth labels for {cols['point'].size} predictions")
        if cfg["evaluate"]["cap_truth"]:
            y = np.minimum(y, cap)
        inputs.append(truth_path)
    else:
        y = cols["truth"] if cfg["evaluate"]["cap_truth"] else cols["truth_raw"]
    report = metrics.evaluate(cols["point"], cols["lower"], cols["upper"], y,
                              cfg["predict"]["alpha"], cfg["predict"]["mode"])
    with locked(out):
        paths = [out / "metrics.json", out / "metrics.csv"]
        paths[0].write_text(report.to_json())
        paths[1].write_text(report.to_csv())
        _update_manifest(out, "evaluate", cfg, inputs, paths, {})
    return paths


def cmd_importance(cfg) -> list:
    out = Path(cfg["out"])
    model, meta, gp_model, _ = load_models(out)
    pcfg = config_mod.preprocess_config(cfg)
    _check_compat(meta, pcfg)
    bundle = load_bundle(cfg)
    prep = prepare(bundle, pcfg, stats=_stats_from_meta(meta))
    ws = prep.test
    imp = cfg["importance"]
    seed = config_mod.sub_seed(cfg, "importance")
    if imp["max_windows"] and len(ws) > imp["max_windows"]:
        rng = np.random.Generator(np.random.PCG64(seed))
        ws = ws.subset(np.sort(rng.choice(len(ws), imp["max_windows"], replace=False)))
    with locked(out):
        t0 = time.perf_counter()
        report = importance.feature_importance(model, gp_model, ws, imp["repeats"], seed, imp["mode"])
        paths = [out / "importance.csv", out / "importance_plot.json", out / "kde.csv"]
        report.to_csv(paths[0])
        report.write_plot_json(paths[1])
        curves = {}
        for k, sid in enumerate(pcfg.selected_sensors):
            for split, trajs in (("train", prep.train_processed), ("test", prep.test_processed)):
                vals = np.concatenate([t.sensors[:, k] for t in trajs])
                curves[(sid, split)] = metrics.kde(vals)
        metrics.write_kde_csv(paths[2], curves)
        _update_manifest(out, "importance", cfg,
                         data_files(cfg) + [out / EXTRACTOR_FILE, out / GP_FILE], paths,
                         {"total": time.perf_counter() - t0})
    return paths
