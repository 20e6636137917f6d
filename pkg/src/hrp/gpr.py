"""Exact zero-mean GP regression with a squared-exponential kernel.

Hidden states from the extractor are the inputs, capped RUL the targets.
Inference goes through a cached Cholesky factor of ``K + noise^2 I``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import ndtri

from . import container, kernels

JITTER_START = 1e-10
JITTER_MAX = 1e-4
VARIANCE_CLAMP = 1e-10
_LOG2PI = math.log(2.0 * math.pi)


class ConditioningError(ArithmeticError):
    def __init__(self, message, jitter):
        super().__init__(message)
        self.jitter = jitter


@dataclass(frozen=True)
class KernelParams:
    amplitude: float = 1.0
    length_scale: float = 1.0

    def __post_init__(self):
        if not (self.amplitude > 0 and self.length_scale > 0):
            raise ValueError("kernel amplitude and length scale must be positive")


@dataclass(frozen=True)
class NoiseParam:
    noise_std: float = 0.1

    def __post_init__(self):
        if not self.noise_std >= 0:
            raise ValueError("noise_std must be non-negative")


@dataclass(frozen=True)
class Posterior:
    mean: float
    variance: float


@dataclass(frozen=True)
class Interval:
    point: float
    lower: float
    upper: float
    alpha: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True, eq=False)
class GPModel:
    H: np.ndarray
    y: np.ndarray
    kernel: KernelParams
    noise: NoiseParam
    jitter: float
    chol: np.ndarray
    alpha_vec: np.ndarray

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def dim(self) -> int:
        return self.H.shape[1]


def se_kernel(h, h2, k: KernelParams) -> float:
    h = np.asarray(h, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    if h.shape != h2.shape:
        raise ValueError(f"kernel inputs have shapes {h.shape} and {h2.shape}")
    d2 = float(np.sum((h - h2) ** 2))
    return k.amplitude ** 2 * math.exp(-d2 / (2.0 * k.length_scale ** 2))


def kernel_matrix(A, B, k: KernelParams) -> np.ndarray:
    return kernels.se_kernel_matrix(A, B, k.amplitude, k.length_scale)


def _jitter_ladder(start, amp2):
    levels = [] if start is None else [float(start)]
    j = JITTER_START * amp2
    while j <= JITTER_MAX * amp2 * (1 + 1e-9):
        if not levels or j > levels[0]:
            levels.append(j)
        j *= 10.0
    return levels


def fit_gp(H, y, kernel: KernelParams, noise: NoiseParam, jitter: float | None = None) -> GPModel:
    """Factorize ``K + noise^2 I + jitter I`` and cache the solve against ``y``.

    ``jitter=None`` starts at ``1e-10 * amplitude^2``; an explicit value is
    tried first. On failure the jitter grows tenfold up to
    ``1e-4 * amplitude^2`` before giving up.
    """
    H = np.ascontiguousarray(H, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[0] != y.shape[0]:
        raise ValueError(f"need H (n x m) and y (n,), got {H.shape} and {y.shape}")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(y))):
        raise ValueError("training inputs must be finite")
    K = kernel_matrix(H, H, kernel)
    base = K + noise.noise_std ** 2 * np.eye(len(y))
    tried = None
    for j in _jitter_ladder(jitter, kernel.amplitude ** 2):
        tried = j
        try:
            L = cholesky(base + j * np.eye(len(y)), lower=True, check_finite=False)
        except LinAlgError:
            continue
        if not np.all(np.isfinite(L)) or np.any(np.diag(L) <= 0):
            continue
        alpha = cho_solve((L, True), y, check_finite=False)
        return GPModel(H, y, kernel, noise, j, L, alpha)
    raise ConditioningError(f"Cholesky failed up to jitter {tried:.3g}", tried)


def _cross(model: GPModel, Hs) -> np.ndarray:
    Hs = np.atleast_2d(np.asarray(Hs, dtype=float))
    if Hs.shape[1] != model.dim:
        raise ValueError(f"query dimension {Hs.shape[1]} != model dimension {model.dim}")
    return Hs, kernel_matrix(model.H, Hs, model.kernel)


def posterior_batch(model: GPModel, Hs):
    """Posterior mean and latent variance at each row of ``Hs``."""
    Hs, Ks = _cross(model, Hs)
    mean = Ks.T @ model.alpha_vec
    v = solve_triangular(model.chol, Ks, lower=True, check_finite=False)
    var = model.kernel.amplitude ** 2 - np.sum(v * v, axis=0)
    if np.any(var < -VARIANCE_CLAMP * max(1.0, model.kernel.amplitude ** 2)):
        raise ConditioningError(f"negative posterior variance {var.min():.3g}", model.jitter)
    return mean, np.maximum(var, 0.0)


def posterior(model: GPModel, h_star) -> Posterior:
    h_star = np.asarray(h_star, dtype=float)
    if h_star.ndim != 1:
        raise ValueError("posterior() takes a single query vector")
    mean, var = posterior_batch(model, h_star[None])
    return Posterior(float(mean[0]), float(var[0]))


def predict_point_batch(model: GPModel, Hs) -> np.ndarray:
    _, Ks = _cross(model, Hs)
    return Ks.T @ model.alpha_vec


def predict_point(model: GPModel, h_star) -> float:
    return float(predict_point_batch(model, np.asarray(h_star, dtype=float)[None])[0])


def z_value(alpha: float) -> float:
    """Upper ``alpha/2`` standard normal quantile."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha={alpha} outside (0, 1)")
    return float(-ndtri(alpha / 2.0))


def interval_from(point, variance, alpha: float):
    z = z_value(alpha)
    half = z * np.sqrt(variance)
    return point - half, point + half


def predict_interval_batch(model: GPModel, Hs, alpha: float, include_noise: bool = False):
    """Vectorized ``(point, lower, upper, variance)`` arrays.

    With ``include_noise`` the interval is for a new noisy observation
    (latent variance plus ``noise_std^2``); otherwise for the latent mean.
    """
    z_value(alpha)
    mean, var = posterior_batch(model, Hs)
    if include_noise:
        var = var + model.noise.noise_std ** 2
    lo, hi = interval_from(mean, var, alpha)
    return mean, lo, hi, var


def predict_interval(model: GPModel, h_star, alpha: float, include_noise: bool = False) -> Interval:
    point, lo, hi, _ = predict_interval_batch(model, np.asarray(h_star, dtype=float)[None],
                                              alpha, include_noise)
    return Interval(float(point[0]), float(lo[0]), float(hi[0]), alpha)


def log_marginal_likelihood(model: GPModel) -> float:
    n = model.n
    return float(-0.5 * model.y @ model.alpha_vec - np.sum(np.log(np.diag(model.chol)))
                 - 0.5 * n * _LOG2PI)


# ---------------------------------------------------------------------------
# Hyperparameter search
# ---------------------------------------------------------------------------

class _BudgetExhausted(Exception):
    pass


def _lml_and_grad(logp, H, y, sqdist):
    """LML and its gradient w.r.t. (log tau, log eta, log noise)."""
    tau, eta, sn = np.exp(logp)
    n = len(y)
    Kf = tau * tau * np.exp(-0.5 * sqdist / (eta * eta))
    A = Kf + (sn * sn + JITTER_START * tau * tau) * np.eye(n)
    try:
        L = cholesky(A, lower=True, check_finite=False)
    except LinAlgError:
        return -np.inf, np.zeros(3)
    alpha = cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * _LOG2PI
    Ainv = cho_solve((L, True), np.eye(n), check_finite=False)
    W = np.outer(alpha, alpha) - Ainv
    dK_dlogtau = 2.0 * Kf
    dK_dlogeta = Kf * sqdist / (eta * eta)
    g = np.array([
        0.5 * np.sum(W * dK_dlogtau),
        0.5 * np.sum(W * dK_dlogeta),
        0.5 * np.trace(W) * 2.0 * sn * sn,
    ])
    return float(lml), g


def optimize_hyperparams(H, y, init=(1.0, 1.0, 0.1), budget: int = 1600, restarts: int = 8,
                         seed: int = 0, bounds=((1e-3, 1e4), (1e-3, 1e3), (1e-4, 1e3))):
    """Multi-start L-BFGS on the log marginal likelihood in log-parameter space.

    ``budget`` caps the total number of likelihood evaluations across all
    starts. The first start is ``init`` itself (its value is always
    evaluated, so ``budget=1`` returns ``init``); the remaining starts are
    drawn log-uniformly within ``bounds``. Never returns a triple with lower
    likelihood than ``init``.

    Returns ``(KernelParams, NoiseParam, lml)``.
    """
    if budget < 1:
        raise ValueError("budget must be at least one evaluation")
    H = np.ascontiguousarray(H, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    sq = np.sum(H * H, axis=1)
    sqdist = np.maximum(sq[:, None] + sq[None, :] - 2.0 * H @ H.T, 0.0)
    np.fill_diagonal(sqdist, 0.0)
    lb = np.log([b[0] for b in bounds])
    ub = np.log([b[1] for b in bounds])
    init_raw = tuple(float(v) for v in init)
    init = np.asarray(init, dtype=float)
    if init[2] <= 0:
        init = np.array([init[0], init[1], bounds[2][0]])
    x0 = np.log(init)

    state = {"evals": 0, "best_x": x0, "best": -np.inf}

    def objective(x):
        if state["evals"] >= budget:
            raise _BudgetExhausted
        state["evals"] += 1
        val, g = _lml_and_grad(x, H, y, sqdist)
        if val > state["best"]:
            state["best"], state["best_x"] = val, np.array(x)
        if not np.isfinite(val):
            return 1e300, np.zeros(3)
        return -val, -g

    objective(x0)
    init_val = state["best"]
    rng = np.random.Generator(np.random.PCG64(seed))
    starts = [x0] + [rng.uniform(lb, ub) for _ in range(max(restarts, 1) - 1)]
    per_start = max(1, (budget - 1) // len(starts))
    box = list(zip(lb, ub))
    for x_start in starts:
        if state["evals"] >= budget:
            break
        try:
            minimize(objective, np.clip(x_start, lb, ub), jac=True, method="L-BFGS-B",
                     bounds=box, options={"maxfun": per_start, "maxiter": per_start})
        except _BudgetExhausted:
            break

    if state["best"] > init_val:
        tau, eta, sn = np.exp(state["best_x"])
    else:
        tau, eta, sn = init_raw
    return KernelParams(float(tau), float(eta)), NoiseParam(float(sn)), float(max(state["best"], init_val))


def subsample_training(H, y, n_max: int | None, seed: int):
    """Seeded uniform subset of at most ``n_max`` rows (identity if already small).

    Returns ``(H, y, index)``; the index is sorted so the subset keeps the
    original row order.
    """
    H = np.asarray(H)
    y = np.asarray(y)
    n = H.shape[0]
    if n_max is None or n <= n_max:
        return H, y, np.arange(n)
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = np.sort(rng.choice(n, size=n_max, replace=False))
    return H[idx], y[idx], idx


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def gp_to_text(model: GPModel, extra=None) -> str:
    meta = {
        "amplitude": model.kernel.amplitude,
        "length_scale": model.kernel.length_scale,
        "noise_std": model.noise.noise_std,
        "jitter": model.jitter,
        "n": model.n,
        "dim": model.dim,
    }
    if extra:
        meta.update(extra)
    return container.dumps("gp", {"H": model.H, "y": model.y}, meta)


def save_gp(path, model: GPModel, extra=None):
    with open(path, "w") as fh:
        fh.write(gp_to_text(model, extra))


def load_gp(path):
    """Rebuild the model by refactorizing with the stored jitter. Returns ``(model, meta)``."""
    arrays, meta = container.load(path, "gp")
    model = fit_gp(arrays["H"], arrays["y"], KernelParams(meta["amplitude"], meta["length_scale"]),
                   NoiseParam(meta["noise_std"]), jitter=meta["jitter"])
    return model, meta
