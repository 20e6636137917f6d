"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL/SKIP line with the measured quantity; the
lines are printed together at the end of the pytest run. Criteria 6 and 7
need the C-MAPSS text files; point ``HRP_CMAPSS_DIR`` at the directory
holding ``train_FD001.txt``, ``test_FD001.txt`` and ``RUL_FD001.txt``.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from hrp import cli, dataio, gpr, importance, metrics, pipeline, preprocess as pp, temporal as tm
from hrp.gpr import KernelParams, NoiseParam

from conftest import DRIVER, record, single_driver_pipeline

CMAPSS_DIR = Path(os.environ.get("HRP_CMAPSS_DIR", Path(__file__).resolve().parents[1] / "data" / "CMAPSSData"))
HAVE_FD001 = all((CMAPSS_DIR / f"{p}_FD001.txt").exists() for p in ("train", "test", "RUL"))


def _check(n, ok, detail):
    record(n, ok, detail)
    assert ok, detail


def _dense_posterior(H, y, Q, tau, eta, sn, jitter):
    def k(A, B):
        return tau ** 2 * np.exp(-((A[:, None, :] - B[None, :, :]) ** 2).sum(-1) / (2 * eta ** 2))
    Minv = np.linalg.inv(k(H, H) + (sn ** 2 + jitter) * np.eye(len(y)))
    Ks = k(H, Q)
    return Ks.T @ Minv @ y, tau ** 2 - np.einsum("ij,ik,kj->j", Ks, Minv, Ks)


def test_criterion_1_gp_oracle():
    t0 = time.perf_counter()
    worst_mean = worst_var = 0.0
    for s in range(100):
        rng = np.random.default_rng(s)
        n, m = int(rng.integers(1, 51)), int(rng.integers(1, 9))
        tau, eta, sn = rng.uniform(0.5, 2.0), rng.uniform(0.2, 2.0), rng.uniform(0.0, 0.5)
        H, y = rng.normal(size=(n, m)), rng.normal(scale=10.0, size=n)
        Q = rng.normal(size=(20, m))
        model = gpr.fit_gp(H, y, KernelParams(tau, eta), NoiseParam(sn))
        mean, var = gpr.posterior_batch(model, Q)
        om, ov = _dense_posterior(H, y, Q, tau, eta, sn, model.jitter)
        # relative to the natural scale of each quantity: largest mean magnitude, prior variance
        worst_mean = max(worst_mean, np.abs(mean - om).max() / max(np.abs(om).max(), 1e-300))
        worst_var = max(worst_var, np.abs(var - ov).max() / tau ** 2)
    dt = time.perf_counter() - t0
    ok = worst_mean < 1e-8 and worst_var < 1e-8 and dt < 10
    _check(1, ok, f"max rel. error mean {worst_mean:.2e}, variance {worst_var:.2e} (< 1e-8); {dt:.2f} s (< 10 s)")


def test_criterion_2_gradients():
    t0 = time.perf_counter()
    worst, weakest_bug = 0.0, np.inf
    for s in range(20):
        rng = np.random.default_rng(1000 + s)
        m, L, F = int(rng.integers(1, 9)), int(rng.integers(1, 11)), int(rng.integers(1, 6))
        cell = tm.CellParams.from_stacked(rng.normal(scale=0.5, size=(4 * m, m + F)),
                                          rng.normal(scale=0.5, size=4 * m))
        model = tm.ExtractorModel(cell, rng.normal(size=m), float(rng.normal()))
        window, label, delta = rng.normal(size=(L, F)), float(rng.normal(scale=3.0)), float(rng.uniform(0.5, 5))
        worst = max(worst, tm.gradient_check(model, window, label, delta))

        def broken(mdl, w, yy, d):
            loss, g = tm.loss_and_grads(mdl, w, yy, d)
            name = max((f"W_{k}" for k in tm.GATES), key=lambda k: np.abs(g[k]).max())
            g[name] = g[name].copy()
            g[name].flat[np.argmax(np.abs(g[name]))] *= 2.0
            return loss, g

        weakest_bug = min(weakest_bug, tm.gradient_check(model, window, label, delta, grad_fn=broken))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and weakest_bug > 1e-1 and dt < 30
    _check(2, ok, f"max rel. error {worst:.2e} (< 1e-4); injected bug min {weakest_bug:.3f} (> 0.1); "
                  f"{dt:.1f} s (< 30 s)")


def test_criterion_3_calibration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    kp, noise = KernelParams(1.0, 0.7), NoiseParam(0.1)
    n_train, n_test = 200, 500
    X = rng.uniform(-4, 4, size=(n_train + n_test, 2))
    K = gpr.kernel_matrix(X, X, kp) + 1e-8 * np.eye(len(X))
    f = np.linalg.cholesky(K) @ rng.normal(size=len(X))
    y = f + noise.noise_std * rng.normal(size=len(X))
    model = gpr.fit_gp(X[:n_train], y[:n_train], kp, noise)
    # noisy held-out targets against the predictive interval (latent + noise variance)
    _, lo, hi, _ = gpr.predict_interval_batch(model, X[n_train:], 0.05, include_noise=True)
    cov_y = metrics.coverage(np.column_stack([lo, hi]), y[n_train:])
    # latent values against the latent interval
    _, lo, hi, _ = gpr.predict_interval_batch(model, X[n_train:], 0.05)
    cov_f = metrics.coverage(np.column_stack([lo, hi]), f[n_train:])
    dt = time.perf_counter() - t0
    ok = 0.90 <= cov_y <= 0.99 and 0.90 <= cov_f <= 0.99 and dt < 60
    _check(3, ok, f"95% coverage {cov_y:.3f} on noisy targets, {cov_f:.3f} on latent values "
                  f"(both in [0.90, 0.99]); {dt:.2f} s")


def test_criterion_4_metric_fixtures():
    r = metrics.rmse([3.0, 4.0], [0.0, 0.0])
    w = metrics.naw(np.array([[-5.0, 5.0], [90.0, 110.0]]), [0.0, 100.0])
    c = metrics.cwc(0.2, 0.9, 0.05)
    edge = metrics.coverage(np.array([[0.0, 1.0]]), [1.0])
    ok = abs(r - 3.5355) <= 1e-4 and w == 0.15 and abs(c - 0.2 * np.e ** 2) <= 1e-6 and edge == 1.0
    _check(4, ok, f"rmse {r:.4f}, naw {w}, cwc {c:.6f}, boundary coverage {edge}")


def test_criterion_5_preprocessing():
    bundle = dataio.generate_synthetic(dataio.SyntheticSpec(n_engines=30, seed=5))
    cfg = pp.PreprocessConfig(window_length=25)
    prep = pp.prepare(bundle, cfg)
    counts_ok = all(np.sum(prep.train.unit_ids == t.unit_id) == len(t) - 25 + 1 for t in bundle.train)
    labels_ok = prep.train.labels.max() <= 125
    final_zero = all(prep.train.labels[(prep.train.unit_ids == t.unit_id) & (prep.train.end_cycles == len(t))][0] == 0
                     for t in bundle.train)
    x = np.random.default_rng(0).normal(size=(50, 3))
    identity = np.array_equal(pp.exponential_smooth(x, 1.0), x)
    pool = np.concatenate([pp.apply_normalization(pp.select_sensors(t, cfg), prep.stats).sensors
                           for t in bundle.train])
    mu, sd = np.abs(pool.mean(axis=0)).max(), np.abs(pool.std(axis=0) - 1).max()
    ok = counts_ok and labels_ok and final_zero and identity and mu < 1e-9 and sd < 1e-9
    _check(5, ok, f"T-L+1 counts {counts_ok}, labels<=125 {labels_ok}, final label 0 {final_zero}, "
                  f"beta=1 identity {identity}, |mean| {mu:.1e}, |std-1| {sd:.1e}")


def _need_fd001(n):
    if not HAVE_FD001:
        record(n, False, f"skipped, no FD001 files under {CMAPSS_DIR} (set HRP_CMAPSS_DIR)", status="SKIP")
        pytest.skip("C-MAPSS FD001 files not found (set HRP_CMAPSS_DIR)")


def test_criterion_6_cmapss_counts():
    _need_fd001(6)
    bundle = dataio.load_cmapss_dir(CMAPSS_DIR, "FD001")
    prep = pp.prepare(bundle, pp.PreprocessConfig(window_length=25))
    ok = len(prep.train) == 18231 and len(bundle.train) == 100 and len(bundle.test) == 100
    _check(6, ok, f"{len(prep.train)} train windows (18231), {len(bundle.train)}/{len(bundle.test)} engines (100/100)")


@pytest.mark.slow
def test_criterion_7_cmapss_end_to_end(tmp_path):
    _need_fd001(7)
    t0 = time.perf_counter()
    args = ["--out", str(tmp_path), "--dataset", "FD001", "--data-dir", str(CMAPSS_DIR), "--seed", "0"]
    for cmd in ("train", "predict", "evaluate"):
        assert cli.run([cmd, *args]) == 0
    rep = json.loads((tmp_path / "metrics.json").read_text())
    dt = time.perf_counter() - t0
    ok = rep["rmse"] <= 20 and rep["naw"] <= 0.40 and rep["coverage"] >= 0.85 and dt <= 1800
    _check(7, ok, f"rmse {rep['rmse']:.2f} (<= 20), naw {rep['naw']:.3f} (<= 0.40), "
                  f"coverage {rep['coverage']:.2f} (>= 0.85); {dt / 60:.1f} min")


def test_criterion_8_importance_oracle():
    t0 = time.perf_counter()
    top, worst_noise = 0, 0.0
    for seed in range(20):
        model, g, prep = single_driver_pipeline(seed)
        rep = importance.feature_importance(model, g, prep.test, repeats=10, seed=seed)
        top += rep.top_sensor() == DRIVER
        for sid in rep.sensor_ids:
            if sid != DRIVER:
                worst_noise = max(worst_noise, abs(rep.raw[rep.sensor_ids.index(sid)]) / rep.baseline_rmse)
    dt = time.perf_counter() - t0
    ok = top >= 19 and worst_noise < 0.05 and dt < 300
    _check(8, ok, f"driver ranked first in {top}/20 reruns (>= 19); worst noise |lambda|/baseline "
                  f"{worst_noise:.3f} (< 0.05); {dt:.0f} s (< 300 s)")


def test_criterion_9_determinism(tmp_path):
    args = ["--dataset", "synthetic", "--seed", "7", "--set", "synthetic.n_engines=10",
            "--set", "train.epochs=5", "--set", "train.hidden_size=8", "--set", "gp.n_max=300",
            "--set", "gp.restarts=2", "--set", "gp.evals_per_restart=30"]
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert cli.run(["train", "--out", str(out), *args]) == 0
        assert cli.run(["predict", "--out", str(out), *args]) == 0
    names = (pipeline.EXTRACTOR_FILE, pipeline.GP_FILE, pipeline.PREDICTIONS_FILE)
    same = {n: (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names}
    _check(9, all(same.values()), ", ".join(f"{n} {'identical' if v else 'DIFFERS'}" for n, v in same.items()))
