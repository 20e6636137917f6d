"""Gated recurrent feature extractor trained under Huber loss.

The cell is the usual forget/input/output-gated memory unit. A window of
``L`` rows is summarised by the hidden state after the last row; a scalar
affine readout on that state is attached only so the extractor can be
trained against capped RUL.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import container, kernels

log = logging.getLogger(__name__)

GATES = ("f", "i", "C", "o")
_INFER_CHUNK = 2048


class ShapeError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class CellParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_C: np.ndarray
    W_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_C: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        shape = self.W_f.shape
        if len(shape) != 2 or shape[1] < shape[0]:
            raise ShapeError(f"bad weight shape {shape}")
        for g in GATES:
            if getattr(self, f"W_{g}").shape != shape:
                raise ShapeError("gate weight matrices must share a shape")
            if getattr(self, f"b_{g}").shape != (shape[0],):
                raise ShapeError("gate biases must have length m")

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def n_features(self) -> int:
        return self.W_f.shape[1] - self.W_f.shape[0]

    def stacked(self):
        """``(W, b)`` with gate blocks in the order f, i, C, o."""
        W = np.concatenate([self.W_f, self.W_i, self.W_C, self.W_o])
        b = np.concatenate([self.b_f, self.b_i, self.b_C, self.b_o])
        return W, b

    @classmethod
    def from_stacked(cls, W, b):
        m = W.shape[0] // 4
        Ws = [np.array(W[k * m:(k + 1) * m]) for k in range(4)]
        bs = [np.array(b[k * m:(k + 1) * m]) for k in range(4)]
        return cls(*Ws, *bs)

    @classmethod
    def zeros(cls, m, n_features):
        return cls.from_stacked(np.zeros((4 * m, m + n_features)), np.zeros(4 * m))


@dataclass(frozen=True, eq=False)
class ExtractorModel:
    cell: CellParams
    readout_w: np.ndarray
    readout_b: float
    history: tuple = ()

    def __post_init__(self):
        if self.readout_w.shape != (self.cell.hidden_size,):
            raise ShapeError("readout dimension must match hidden size")

    @property
    def hidden_size(self) -> int:
        return self.cell.hidden_size

    @property
    def n_features(self) -> int:
        return self.cell.n_features


@dataclass(frozen=True)
class TrainConfig:
    hidden_size: int = 32
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 256
    huber_delta: float = 1.0
    seed: int = 0
    optimizer: str = "adam"  # "adam" (adaptive per-parameter) or "sgd"
    readout_bias_init: str = "label_mean"  # or "zero"

    def __post_init__(self):
        if min(self.hidden_size, self.epochs, self.batch_size) < 1:
            raise ValueError("hidden_size, epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.huber_delta <= 0:
            raise ValueError("learning_rate and huber_delta must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.readout_bias_init not in ("label_mean", "zero"):
            raise ValueError(f"unknown readout_bias_init {self.readout_bias_init!r}")


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def cell_step(p: CellParams, x_t, h_prev, C_prev):
    """One step of the gated cell; returns ``(h_t, C_t)``."""
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    C_prev = np.asarray(C_prev, dtype=float)
    m = p.hidden_size
    if x_t.shape != (p.n_features,) or h_prev.shape != (m,) or C_prev.shape != (m,):
        raise ShapeError("input, hidden or cell dimension does not match the parameters")
    z = np.concatenate([h_prev, x_t])
    f = expit(p.W_f @ z + p.b_f)
    i = expit(p.W_i @ z + p.b_i)
    c_tilde = np.tanh(p.W_C @ z + p.b_C)
    o = expit(p.W_o @ z + p.b_o)
    C_t = f * C_prev + i * c_tilde
    h_t = o * np.tanh(C_t)
    return h_t, C_t


def _check_windows(model: ExtractorModel, windows: np.ndarray) -> np.ndarray:
    windows = np.asarray(windows, dtype=float)
    if windows.ndim != 3 or windows.shape[2] != model.n_features or windows.shape[1] < 1:
        raise ShapeError(f"windows of shape {windows.shape} do not fit a model with "
                         f"{model.n_features} features")
    return windows


def extract_batch(model: ExtractorModel, windows) -> np.ndarray:
    """Final hidden states for a stack of windows, shape ``(N, m)``."""
    windows = _check_windows(model, windows)
    W, b = model.cell.stacked()
    out = np.empty((windows.shape[0], model.hidden_size))
    for start in range(0, windows.shape[0], _INFER_CHUNK):
        chunk = windows[start:start + _INFER_CHUNK]
        out[start:start + len(chunk)] = kernels.lstm_forward(chunk, W, b)[4]
    return out


def extract(model: ExtractorModel, window) -> np.ndarray:
    """Final hidden state for one ``L x F`` window."""
    window = np.asarray(window, dtype=float)
    if window.ndim != 2:
        raise ShapeError("a single window must be an L x F matrix")
    return extract_batch(model, window[None])[0]


def predict_readout(model: ExtractorModel, windows) -> np.ndarray:
    return extract_batch(model, windows) @ model.readout_w + model.readout_b


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------

def huber_loss(a, delta: float):
    a = np.asarray(a, dtype=float)
    absa = np.abs(a)
    out = np.where(absa <= delta, 0.5 * a * a, delta * (absa - 0.5 * delta))
    return out if out.ndim else float(out)


def huber_grad(a, delta: float):
    return np.clip(a, -delta, delta)


def _flatten(model: ExtractorModel):
    W, b = model.cell.stacked()
    return [W, b, np.array(model.readout_w, dtype=float), np.array([model.readout_b])]


def _unflatten(params, history=()):
    W, b, w, rb = params
    return ExtractorModel(CellParams.from_stacked(W.copy(), b.copy()), w.copy(), float(rb[0]),
                          tuple(history))


def loss_and_grads(model: ExtractorModel, windows, labels, delta: float):
    """Mean Huber loss of the readout and its parameter gradients.

    Gradients are returned as a dict keyed like the model fields:
    ``W_f .. W_o``, ``b_f .. b_o``, ``readout_w``, ``readout_b``.
    """
    windows = _check_windows(model, windows)
    labels = np.asarray(labels, dtype=float)
    W, b = model.cell.stacked()
    Z, G, C, TC, h = kernels.lstm_forward(windows, W, b)
    n = windows.shape[0]
    # overflow here means divergence, which the caller detects and reports
    with np.errstate(over="ignore", invalid="ignore"):
        resid = h @ model.readout_w + model.readout_b - labels
        loss = float(np.mean(huber_loss(resid, delta)))
    dpred = huber_grad(resid, delta) / n
    dW, db = kernels.lstm_backward(np.outer(dpred, model.readout_w), W, (Z, G, C, TC))
    m = model.hidden_size
    grads = {}
    for k, g in enumerate(GATES):
        grads[f"W_{g}"] = dW[k * m:(k + 1) * m]
        grads[f"b_{g}"] = db[k * m:(k + 1) * m]
    grads["readout_w"] = h.T @ dpred
    grads["readout_b"] = float(dpred.sum())
    return loss, grads


def _grads_to_list(grads, m):
    dW = np.concatenate([grads[f"W_{g}"] for g in GATES])
    db = np.concatenate([grads[f"b_{g}"] for g in GATES])
    return [dW, db, np.asarray(grads["readout_w"], dtype=float), np.array([grads["readout_b"]])]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def init_model(m: int, n_features: int, rng: np.random.Generator, readout_bias=0.0) -> ExtractorModel:
    """Uniform(-1/sqrt(m), 1/sqrt(m)) weights, zero biases."""
    bound = 1.0 / np.sqrt(m)
    W = rng.uniform(-bound, bound, size=(4 * m, m + n_features))
    w = rng.uniform(-bound, bound, size=m)
    return ExtractorModel(CellParams.from_stacked(W, np.zeros(4 * m)), w, float(readout_bias))


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def train_extractor(windows, labels, cfg: TrainConfig, progress=None) -> ExtractorModel:
    """Mini-batch training of cell + readout by backpropagation through time.

    Deterministic for a given ``cfg.seed``: initialization and the per-epoch
    shuffles come from one seeded stream. The returned model's ``history``
    holds the mean training loss of every epoch.
    """
    windows = np.asarray(windows, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if windows.ndim != 3 or windows.shape[0] == 0:
        raise ValueError("training needs a non-empty (N, L, F) window stack")
    if labels.shape != (windows.shape[0],):
        raise ShapeError("one label per window required")
    n, _, F = windows.shape
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    bias0 = float(labels.mean()) if cfg.readout_bias_init == "label_mean" else 0.0
    model = init_model(cfg.hidden_size, F, rng, bias0)
    params = _flatten(model)
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(params, cfg.learning_rate)
    m = cfg.hidden_size
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cur = _unflatten(params)
            loss, grads = loss_and_grads(cur, windows[idx], labels[idx], cfg.huber_delta)
            glist = _grads_to_list(grads, m)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in glist):
                raise DivergenceError(f"non-finite loss or gradient in epoch {epoch + 1}; "
                                      f"try a smaller learning_rate than {cfg.learning_rate}")
            opt.step(params, glist)
            total += loss * len(idx)
        history.append(total / n)
        if progress is not None:
            progress(epoch + 1, history[-1])
        log.debug("epoch %d loss %.6f", epoch + 1, history[-1])
    if not all(np.all(np.isfinite(p)) for p in params):
        raise DivergenceError(f"parameters became non-finite; try a smaller learning_rate "
                              f"than {cfg.learning_rate}")
    return _unflatten(params, history)


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

def gradient_check(model: ExtractorModel, window, label, delta: float, step: float = 1e-5,
                   grad_fn=None) -> float:
    """Worst relative gap between analytic and central-difference gradients.

    The relative error of one parameter is ``|a - n| / max(|a| + |n|, 1e-10)``.
    ``grad_fn`` replaces :func:`loss_and_grads` (used to inject faults).
    """
    grad_fn = grad_fn or loss_and_grads
    window = np.asarray(window, dtype=float)[None]
    label = np.array([float(label)])
    _, grads = grad_fn(model, window, label, delta)
    analytic = _grads_to_list(grads, model.hidden_size)
    params = _flatten(model)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss_and_grads(_unflatten(params), window, label, delta)[0]
            flat[k] = orig - step
            down = loss_and_grads(_unflatten(params), window, label, delta)[0]
            flat[k] = orig
            num = (up - down) / (2 * step)
            err = abs(gflat[k] - num) / max(abs(gflat[k]) + abs(num), 1e-10)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def extractor_to_text(model: ExtractorModel, cfg: TrainConfig | None = None, extra=None) -> str:
    W, b = model.cell.stacked()
    arrays = {"W": W, "b": b, "readout_w": model.readout_w}
    meta = {
        "hidden_size": model.hidden_size,
        "n_features": model.n_features,
        "gate_order": list(GATES),
        "readout_b": float(model.readout_b),
        "history": [float(v) for v in model.history],
        "train_config": asdict(cfg) if cfg is not None else None,
    }
    if extra:
        meta.update(extra)
    return container.dumps("extractor", arrays, meta)


def save_extractor(path, model, cfg=None, extra=None):
    with open(path, "w") as fh:
        fh.write(extractor_to_text(model, cfg, extra))


def load_extractor(path):
    """Returns ``(model, meta)``."""
    arrays, meta = container.load(path, "extractor")
    cell = CellParams.from_stacked(arrays["W"], arrays["b"])
    if cell.hidden_size != meta["hidden_size"] or cell.n_features != meta["n_features"]:
        raise ShapeError("checkpoint header disagrees with stored arrays")
    model = ExtractorModel(cell, arrays["readout_w"], meta["readout_b"], tuple(meta["history"]))
    return model, meta
