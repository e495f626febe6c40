"""MLP integrity monitor: weighted-MSE training, inference and binarization.

The network is ``in -> [affine, ReLU] x H -> affine -> Sigmoid``. Weights
are stored as float32 (the file format's precision) once training ends;
all arithmetic is float64.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DimensionError, TrainingError, VersionError
from .featurizer import CATALOGUE_VERSION

log = logging.getLogger(__name__)

NORM_EPS = 1e-12

# (out-of-tolerance fraction, alpha) operating points for AP-GeM, NetVLAD, SALAD.
ALPHA_OPERATING_POINTS = ((0.436, 6.0), (0.472, 3.0), (0.133, 35.0))


@dataclass(frozen=True)
class MlpModel:
    """Trained monitor. ``weights[i]`` has shape (out, in)."""

    weights: tuple
    biases: tuple
    input_mean: np.ndarray
    input_std: np.ndarray
    threshold: float = 0.5
    catalogue_version: int = CATALOGUE_VERSION
    alpha_used: float = 1.0

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise DimensionError("weights and biases differ in layer count")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        prev = self.input_dim
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[1] != prev or b.shape != (w.shape[0],):
                raise DimensionError(f"layer shape {w.shape} does not chain from width {prev}")
            prev = w.shape[0]
        if prev != 1:
            raise DimensionError(f"output layer must have 1 unit, has {prev}")
        if self.input_std.shape != self.input_mean.shape:
            raise DimensionError("normalization mean/std shapes differ")

    @property
    def input_dim(self) -> int:
        return self.input_mean.shape[0]

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    def with_threshold(self, threshold: float) -> "MlpModel":
        return replace(self, threshold=float(threshold))


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    batch_size: int = 8
    learning_rate: float = 1e-5
    dropout: float = 0.10
    epochs: int = 500
    seed: int = 0
    optimizer: str = "adam"
    hidden_sizes: tuple = (128, 128, 128, 128)
    threshold: float = 0.5
    plateau_epochs: int = 50
    plateau_tol: float = 1e-4

    def __post_init__(self):
        if not self.alpha >= 1.0:
            raise ConfigError(f"alpha must be >= 1, got {self.alpha}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ConfigError("need at least one hidden layer of positive width")


@dataclass(frozen=True)
class PredictionRecord:
    raw: float
    binary: int


@dataclass
class EpochLog:
    epoch: int
    loss: float
    precision: float
    recall: float


@dataclass
class TrainResult:
    model: MlpModel
    history: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss


def weighted_mse(P, P_hat, alpha: float) -> float:
    """Mean squared error with out-of-tolerance (P=0) terms scaled by alpha."""
    P = np.asarray(P, dtype=np.float64)
    P_hat = np.asarray(P_hat, dtype=np.float64)
    if P.shape != P_hat.shape or P.ndim != 1:
        raise DimensionError(f"P and P_hat must be equal-length vectors, got {P.shape}, {P_hat.shape}")
    if P.size == 0:
        raise DimensionError("weighted_mse of an empty batch")
    if not np.all((P == 0) | (P == 1)):
        raise ConfigError("P must be binary")
    w = np.where(P == 1, 1.0, alpha)
    return float(np.sum(w * (P - P_hat) ** 2) / P.size)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # Keep strictly inside (0, 1) even when the logit saturates.
    return np.clip(out, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)


def normalize_input(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != model.input_dim:
        raise DimensionError(f"model expects {model.input_dim} inputs, got {X.shape[-1]}")
    return (X - model.input_mean.astype(np.float64)) / model.input_std.astype(np.float64)


def _forward_layers(params, Xn, masks=None):
    """Return (pre-activations, activations) per layer; activations[0] is the input."""
    weights, biases = params
    acts = [Xn]
    pres = []
    h = Xn
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w.T + b
        pres.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
            if masks is not None:
                h = h * masks[i]
        else:
            h = sigmoid(z[:, 0])
        acts.append(h)
    return pres, acts


def forward(model: MlpModel, x, catalogue_version: int | None = None) -> np.ndarray | float:
    """Monitor output in (0, 1) for one input vector or a batch of rows."""
    if catalogue_version is not None and catalogue_version != model.catalogue_version:
        raise VersionError(
            f"model built for catalogue v{model.catalogue_version}, input is v{catalogue_version}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if not np.all(np.isfinite(X)):
        raise ConfigError("non-finite monitor input")
    Xn = normalize_input(model, X)
    params = ([w.astype(np.float64) for w in model.weights], [b.astype(np.float64) for b in model.biases])
    _, acts = _forward_layers(params, Xn)
    out = acts[-1]
    return float(out[0]) if single else out


def predict(model: MlpModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Raw scores and binary predictions (1 iff raw >= threshold) for rows of X."""
    raw = np.atleast_1d(forward(model, np.atleast_2d(X)))
    return raw, (raw >= model.threshold).astype(np.int8)


def predict_one(model: MlpModel, x) -> PredictionRecord:
    raw = forward(model, x)
    return PredictionRecord(raw=raw, binary=int(raw >= model.threshold))


def loss_and_gradients(params, Xn, P, alpha: float, masks=None):
    """Weighted MSE and its exact gradient w.r.t. every weight and bias.

    ``params`` is (weights, biases) in float64; ``Xn`` is already normalized.
    ``masks`` are pre-scaled dropout masks for the hidden layers, or None.
    """
    weights, biases = params
    P = np.asarray(P, dtype=np.float64)
    pres, acts = _forward_layers(params, Xn, masks)
    p = acts[-1]
    N = P.shape[0]
    w = np.where(P == 1, 1.0, alpha)
    loss = float(np.sum(w * (P - p) ** 2) / N)

    gw = [None] * len(weights)
    gb = [None] * len(weights)
    # dL/dz at the output through the sigmoid
    delta = ((2.0 / N) * w * (p - P) * p * (1.0 - p))[:, None]
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            dh = delta @ weights[i]
            if masks is not None:
                dh = dh * masks[i - 1]
            delta = dh * (pres[i - 1] > 0)
    return loss, gw, gb


def init_params(sizes, rng: np.random.Generator, output_prior: float | None = None):
    """Uniform fan-in init: sqrt(6/fan_in) for ReLU layers, 1/sqrt(fan_in) for the output.

    With ``output_prior`` the output layer instead starts at zero weights and
    a bias whose sigmoid equals ``output_prior``, so the untrained network
    predicts the best constant and the sigmoid starts away from saturation.
    """
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        limit = 1.0 / math.sqrt(fan_in) if last else math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-1.0 / math.sqrt(fan_in), 1.0 / math.sqrt(fan_in), size=fan_out))
    if output_prior is not None:
        p = min(max(float(output_prior), 1e-6), 1.0 - 1e-6)
        weights[-1][:] = 0.0
        biases[-1][:] = math.log(p / (1.0 - p))
    return weights, biases


def constant_optimum(P, alpha: float) -> float:
    """Constant prediction minimising the weighted MSE for labels P."""
    pi = float(np.mean(P))
    return pi / (pi + alpha * (1.0 - pi))


def _precision_recall(P, pred):
    tp = int(np.sum((pred == 1) & (P == 1)))
    npred = int(np.sum(pred == 1))
    npos = int(np.sum(P == 1))
    precision = tp / npred if npred else 0.0
    recall = tp / npos if npos else 0.0
    return precision, recall


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
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


def train(X, y, config: TrainConfig, catalogue_version: int = CATALOGUE_VERSION) -> TrainResult:
    """Fit the monitor on rows of X with binary labels y (1 = in-tolerance).

    Deterministic for a given ``config.seed``: initialization, per-epoch
    shuffles and dropout masks all come from one seeded generator in a
    fixed order. Training stops early once the best epoch loss has not
    improved by ``plateau_tol`` (relative) for ``plateau_epochs`` epochs.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise TrainingError("training set is empty")
    if y.shape != (X.shape[0],):
        raise DimensionError(f"{X.shape[0]} samples but {y.shape} labels")
    if not np.all(np.isfinite(X)):
        raise TrainingError("training inputs contain non-finite values")
    if not np.all((y == 0) | (y == 1)):
        raise TrainingError("labels must be binary")
    P = y.astype(np.float64)
    n_pos = int(P.sum())
    if n_pos == 0 or n_pos == P.size:
        raise TrainingError(
            f"training labels are single-class ({n_pos} of {P.size} in-tolerance); "
            "alpha has no effect and precision is undefined")

    cfg = config
    rng = np.random.default_rng(cfg.seed)
    mean = X.mean(axis=0).astype(np.float32)
    std = np.maximum(X.std(axis=0), NORM_EPS).astype(np.float32)
    Xn = (X - mean.astype(np.float64)) / std.astype(np.float64)

    sizes = [X.shape[1], *cfg.hidden_sizes, 1]
    weights, biases = init_params(sizes, rng, output_prior=constant_optimum(P, cfg.alpha))
    flat = [*weights, *biases]
    opt = _Adam(flat, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(flat, cfg.learning_rate)
    keep = 1.0 - cfg.dropout
    L = len(weights)

    history = []
    best = math.inf
    since_best = 0
    N = X.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            masks = None
            if cfg.dropout > 0:
                masks = [(rng.random((idx.size, h)) < keep) / keep for h in cfg.hidden_sizes]
            loss, gw, gb = loss_and_gradients((weights, biases), Xn[idx], P[idx], cfg.alpha, masks)
            total += loss * idx.size
            opt.step(flat, [*gw, *gb])
        epoch_loss = total / N
        _, acts = _forward_layers((weights, biases), Xn)
        pred = (acts[-1] >= cfg.threshold).astype(np.int8)
        precision, recall = _precision_recall(P, pred)
        history.append(EpochLog(epoch, epoch_loss, precision, recall))
        if epoch_loss < best * (1.0 - cfg.plateau_tol):
            best = epoch_loss
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.plateau_epochs:
                log.info("loss plateau at epoch %d (%.6g)", epoch, epoch_loss)
                break

    model = MlpModel(
        weights=tuple(w.astype(np.float32) for w in weights[:L]),
        biases=tuple(b.astype(np.float32) for b in biases[:L]),
        input_mean=mean,
        input_std=std,
        threshold=cfg.threshold,
        catalogue_version=catalogue_version,
        alpha_used=float(cfg.alpha),
    )
    return TrainResult(model=model, history=history)


def choose_alpha_default(out_of_tolerance_fraction: float) -> float:
    """Suggest alpha from the training label balance.

    Interpolates linearly in 1/fraction between the three reference
    operating points; outside them, the nearest segment is extended.
    The result is floored at 1.
    """
    f = float(out_of_tolerance_fraction)
    if not (0.0 < f < 1.0) or not math.isfinite(f):
        raise ConfigError(f"out-of-tolerance fraction must be in (0, 1), got {f}")
    pts = sorted((1.0 / frac, a) for frac, a in ALPHA_OPERATING_POINTS)
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x = 1.0 / f
    for frac, a in ALPHA_OPERATING_POINTS:
        if f == frac:
            return a
    if x <= xs[0]:
        i = 0
    elif x >= xs[-1]:
        i = len(xs) - 2
    else:
        i = int(np.searchsorted(xs, x)) - 1
    slope = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
    return max(1.0, ys[i] + slope * (x - xs[i]))
