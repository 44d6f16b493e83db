"""Regressors over measurement-frequency features.

Features summarize a record as per-qubit (basis, outcome) frequencies:
six numbers per qubit ordered (X,0), (X,1), (Y,0), (Y,1), (Z,0), (Z,1),
optionally followed by the system parameters. Two model families are
supported: a small tanh MLP trained with Adam (supervised or with a
mean-teacher consistency term over unlabeled features), and a ridge
regression baseline in the same feature space.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument, NumericalFailure, UndefinedMetric
from .seeding import derive_rng

TASKS_CLAMP = {"entropy": "entropy", "corr_x": "corr", "corr_z": "corr"}


@dataclass(frozen=True)
class LearnerConfig:
    """Training hyperparameters shared by both model families."""

    hidden_sizes: tuple[int, ...] = (128, 128)
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 300
    patience_initial: int = 100
    patience_engine: int = 30
    consistency_weight: float = 1.0
    ema_decay: float = 0.99
    ridge: float = 1e-6
    holdout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if any(h < 1 for h in self.hidden_sizes):
            raise InvalidArgument("hidden sizes must be positive")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidArgument("bad optimizer settings")
        # Patience beyond max_epochs is inert: the epoch loop caps it.
        if self.patience_initial < 0 or self.patience_engine < 0:
            raise InvalidArgument("patience must be >= 0")
        if not 0.0 <= self.ema_decay < 1.0:
            raise InvalidArgument("ema_decay must lie in [0, 1)")
        if self.consistency_weight < 0:
            raise InvalidArgument("consistency_weight must be >= 0")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise InvalidArgument("holdout_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class FeatureSpec:
    """What a feature vector encodes, enough to rebuild it from a point."""

    n_qubits: int
    use_params: bool
    param_dim: int
    task: str

    @property
    def dim(self) -> int:
        return 6 * self.n_qubits + (self.param_dim if self.use_params else 0)


@dataclass(eq=False)
class Model:
    """Trained regressor: flat parameters plus architecture metadata.

    MLP models keep the input standardization (center, scale) fitted on
    their first training set; retraining reuses it unchanged.
    """

    kind: str  # "mlp" or "kernel"
    dims: tuple[int, ...]  # layer widths input..output; kernel uses (d+1, k)
    theta: np.ndarray
    feature_spec: FeatureSpec | None = None
    seed: int = 0
    x_center: np.ndarray | None = None
    x_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("mlp", "kernel"):
            raise InvalidArgument(f"unknown model kind {self.kind!r}")
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 1:
            raise InvalidArgument("theta must be a flat vector")
        if self.theta.shape[0] != _theta_size(self.kind, self.dims):
            raise InvalidArgument("theta length does not match dims")
        if self.x_center is not None:
            self.x_center = np.asarray(self.x_center, dtype=np.float64)
            self.x_scale = np.asarray(self.x_scale, dtype=np.float64)

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self.x_center is None:
            return x
        return (x - self.x_center) / self.x_scale


def _theta_size(kind: str, dims: tuple[int, ...]) -> int:
    if kind == "kernel":
        return dims[0] * dims[1]
    return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


# ---------------------------------------------------------------- features

def featurize(point, use_params: bool = True) -> np.ndarray:
    """Frequency features of a point's record, params appended if asked."""
    record = point.record
    n, m = record.n_qubits, record.m
    combos = 2 * record.bases.astype(np.int64) + record.outcomes
    counts = np.zeros((n, 6))
    for i in range(n):
        counts[i] = np.bincount(combos[i], minlength=6)
    feats = counts.ravel() / m
    if use_params:
        feats = np.concatenate([feats, np.asarray(point.params, dtype=np.float64)])
    return feats


def featurize_many(points, use_params: bool = True) -> np.ndarray:
    if not points:
        raise InvalidArgument("no points to featurize")
    return np.stack([featurize(p, use_params) for p in points])


def feature_spec_for(config) -> FeatureSpec:
    param_dim = 0 if config.system == "pauli_file" else 1
    return FeatureSpec(config.N, config.use_params_as_features, param_dim, config.task)


# ---------------------------------------------------------------- MLP internals

def mlp_init(
    dims: tuple[int, ...], rng: np.random.Generator, out_bias: np.ndarray | None = None
) -> np.ndarray:
    """Glorot-uniform weights, zero biases, flattened.

    out_bias seeds the final layer's bias (label means), so training
    starts from the mean predictor instead of zero.
    """
    parts = []
    last = len(dims) - 2
    for li, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        if li == last and out_bias is not None:
            parts.append(np.asarray(out_bias, dtype=np.float64).ravel())
        else:
            parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def _unflatten(theta: np.ndarray, dims: tuple[int, ...]):
    layers = []
    pos = 0
    for fan_in, fan_out in zip(dims, dims[1:]):
        w = theta[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = theta[pos : pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def mlp_forward(theta: np.ndarray, dims: tuple[int, ...], x: np.ndarray) -> np.ndarray:
    """Forward pass; hidden layers tanh, output linear."""
    h = x
    layers = _unflatten(theta, dims)
    for w, b in layers[:-1]:
        h = np.tanh(h @ w + b)
    w, b = layers[-1]
    return h @ w + b


def mlp_loss_grad(theta, dims, x, y):
    """Mean squared-norm loss over a batch and its flat gradient."""
    layers = _unflatten(theta, dims)
    acts = [x]
    h = x
    for w, b in layers[:-1]:
        h = np.tanh(h @ w + b)
        acts.append(h)
    w, b = layers[-1]
    out = h @ w + b
    batch = x.shape[0]
    diff = out - y
    loss = float((diff ** 2).sum() / batch)

    grads = [None] * len(layers)
    delta = 2.0 * diff / batch
    for li in range(len(layers) - 1, -1, -1):
        w, b = layers[li]
        grads[li] = (acts[li].T @ delta, delta.sum(axis=0))
        if li > 0:
            delta = (delta @ w.T) * (1.0 - acts[li] ** 2)
    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return loss, flat


def _mse(theta, dims, x, y) -> float:
    diff = mlp_forward(theta, dims, x) - y
    return float((diff ** 2).sum() / x.shape[0])


class _Adam:
    def __init__(self, size: int, lr: float):
        self.lr = lr
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = 0.9 * self.m + 0.1 * grad
        self.v = 0.999 * self.v + 0.001 * grad ** 2
        m_hat = self.m / (1.0 - 0.9 ** self.t)
        v_hat = self.v / (1.0 - 0.999 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + 1e-8)


def _fit_mlp(
    theta0: np.ndarray,
    dims: tuple[int, ...],
    x: np.ndarray,
    y: np.ndarray,
    cfg: LearnerConfig,
    rng: np.random.Generator,
    patience: int,
    monitor: str,
    x_unlabeled: np.ndarray | None = None,
    monitor_idx: np.ndarray | None = None,
    monitor_xy: tuple[np.ndarray, np.ndarray] | None = None,
    min_rel_improve: float = 0.0,
) -> np.ndarray:
    """Adam loop with early stopping.

    monitor="holdout" carves a seed-fixed slice out of (x, y) and stops
    on its MSE; monitor_idx pins that slice to given rows instead, and
    monitor_xy swaps in replacement inputs for it (the rows named by
    monitor_idx are excluded from training either way). monitor="train"
    stops on the full training-set MSE and never returns parameters
    worse than theta0 on it. min_rel_improve sets a relative deadband:
    an epoch only dethrones the best parameters when it beats them by
    that margin, so monitor-noise-level wobble hands back the starting
    point. When unlabeled rows are given, each step adds a mean-teacher
    consistency gradient.
    """
    n = x.shape[0]
    if monitor == "holdout" and monitor_idx is not None:
        hold_idx = np.asarray(monitor_idx, dtype=np.intp)
        train_idx = np.setdiff1d(np.arange(n), hold_idx)
    elif monitor == "holdout":
        k = max(1, int(round(cfg.holdout_fraction * n)))
        if k >= n:
            k = n - 1
        perm = rng.permutation(n)
        hold_idx, train_idx = perm[:k], perm[k:]
    else:
        hold_idx = np.arange(n)
        train_idx = np.arange(n)
    x_train, y_train = x[train_idx], y[train_idx]
    if monitor_xy is not None:
        x_hold, y_hold = monitor_xy
    else:
        x_hold, y_hold = x[hold_idx], y[hold_idx]
    n_train = x_train.shape[0]

    use_consistency = (
        x_unlabeled is not None and len(x_unlabeled) > 0 and cfg.consistency_weight > 0.0
    )
    if use_consistency:
        n_lab_total = n
        n_unl_total = len(x_unlabeled)
        b_l = int(round(cfg.batch_size * n_lab_total / (n_lab_total + n_unl_total)))
        b_l = min(max(b_l, 1), cfg.batch_size - 1)
        b_u = cfg.batch_size - b_l
        teacher = theta0.copy()
        rng_unlabeled = derive_rng(cfg.seed, 101)
        unl_order = rng_unlabeled.permutation(n_unl_total)
        unl_pos = 0
    else:
        b_l = cfg.batch_size

    theta = theta0.copy()
    adam = _Adam(theta.size, cfg.learning_rate)
    best_theta = theta0.copy()
    best_loss = _mse(theta0, dims, x_hold, y_hold)
    bad_epochs = 0

    for _epoch in range(cfg.max_epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, b_l):
            batch = order[start : start + b_l]
            loss, grad = mlp_loss_grad(theta, dims, x_train[batch], y_train[batch])
            if use_consistency:
                take = []
                while len(take) < b_u:
                    if unl_pos == n_unl_total:
                        unl_order = rng_unlabeled.permutation(n_unl_total)
                        unl_pos = 0
                    take.append(unl_order[unl_pos])
                    unl_pos += 1
                xu = x_unlabeled[np.asarray(take)]
                targets = mlp_forward(teacher, dims, xu)
                _, grad_u = mlp_loss_grad(theta, dims, xu, targets)
                grad = grad + cfg.consistency_weight * grad_u
            theta = adam.step(theta, grad)
            if use_consistency:
                teacher = cfg.ema_decay * teacher + (1.0 - cfg.ema_decay) * theta

        epoch_loss = _mse(theta, dims, x_hold, y_hold)
        if not np.isfinite(epoch_loss):
            raise NumericalFailure(f"non-finite training loss at epoch {_epoch}")
        if epoch_loss < best_loss * (1.0 - min_rel_improve):
            best_loss = epoch_loss
            best_theta = theta.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > patience:
                break
    return best_theta


def _check_samples(samples, minimum: int = 2):
    if len(samples) < minimum:
        raise InvalidArgument(f"need at least {minimum} training samples")
    x = np.stack([np.asarray(f, dtype=np.float64) for f, _ in samples])
    y = np.stack([np.atleast_1d(np.asarray(l, dtype=np.float64)) for _, l in samples])
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise InvalidArgument("non-finite training values")
    return x, y


# ---------------------------------------------------------------- training

_SCALE_FLOOR = 1.0


def _fit_scaler(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    center = x.mean(axis=0)
    scale = np.maximum(x.std(axis=0), _SCALE_FLOOR)
    return center, scale


def train_sl(samples, cfg: LearnerConfig, feature_spec: FeatureSpec | None = None) -> Model:
    """Supervised MLP fit on (features, labels) pairs."""
    x, y = _check_samples(samples)
    center, scale = _fit_scaler(x)
    xs = (x - center) / scale
    dims = (x.shape[1], *cfg.hidden_sizes, y.shape[1])
    rng = derive_rng(cfg.seed, 100)
    theta0 = mlp_init(dims, rng, out_bias=y.mean(axis=0))
    theta = _fit_mlp(theta0, dims, xs, y, cfg, rng, cfg.patience_initial, "holdout")
    return Model("mlp", dims, theta, feature_spec, cfg.seed, center, scale)


def train_ssl(
    samples,
    unlabeled_features,
    cfg: LearnerConfig,
    feature_spec: FeatureSpec | None = None,
) -> Model:
    """Mean-teacher fit: supervised loss plus consistency on unlabeled rows.

    With an empty unlabeled set or zero consistency weight this follows
    the exact same RNG stream as train_sl and returns identical weights.
    """
    x, y = _check_samples(samples)
    xu = (
        np.empty((0, x.shape[1]))
        if unlabeled_features is None or len(unlabeled_features) == 0
        else np.stack([np.asarray(f, dtype=np.float64) for f in unlabeled_features])
    )
    if xu.shape[0] and xu.shape[1] != x.shape[1]:
        raise InvalidArgument("unlabeled feature dimension mismatch")
    center, scale = _fit_scaler(x)
    xs = (x - center) / scale
    xus = (xu - center) / scale if xu.shape[0] else xu
    dims = (x.shape[1], *cfg.hidden_sizes, y.shape[1])
    rng = derive_rng(cfg.seed, 100)
    theta0 = mlp_init(dims, rng, out_bias=y.mean(axis=0))
    theta = _fit_mlp(theta0, dims, xs, y, cfg, rng, cfg.patience_initial, "holdout", xus)
    return Model("mlp", dims, theta, feature_spec, cfg.seed, center, scale)


def train_kernel(samples, cfg: LearnerConfig, feature_spec: FeatureSpec | None = None) -> Model:
    """Ridge regression on bias-augmented features, closed form."""
    x, y = _check_samples(samples, minimum=1)
    xb = np.hstack([x, np.ones((x.shape[0], 1))])
    ridge = max(cfg.ridge, 1e-10)
    gram = xb.T @ xb + ridge * np.eye(xb.shape[1])
    weights = np.linalg.solve(gram, xb.T @ y)
    dims = (xb.shape[1], y.shape[1])
    return Model("kernel", dims, weights.ravel(), feature_spec, cfg.seed)


# Warm starts refit on few noisy holdout rows; require a clear win over
# the incoming parameters before moving off them.
_RETRAIN_MIN_IMPROVE = 5e-3


def continue_training(
    model: Model,
    samples,
    cfg: LearnerConfig,
    rng: np.random.Generator,
    patience: int | None = None,
    monitor_idx: np.ndarray | None = None,
    monitor_samples=None,
) -> Model:
    """Warm-start refit on new samples.

    MLP weights continue from the current model under the usual holdout
    early stopping, with the starting parameters scored first so a run
    that never improves hands back the input model. monitor_samples
    replaces the held-out rows' (features, labels) for monitoring only,
    e.g. with features recomputed at a smaller snapshot budget. Kernel
    models are refit in closed form.
    """
    x, y = _check_samples(samples)
    if model.kind == "kernel":
        refit = train_kernel(samples, cfg, model.feature_spec)
        return replace(refit, seed=model.seed)
    if x.shape[1] != model.dims[0] or y.shape[1] != model.dims[-1]:
        raise InvalidArgument("sample shapes do not match model dims")
    pat = cfg.patience_engine if patience is None else patience
    monitor_xy = None
    if monitor_samples is not None:
        xm = np.stack([np.asarray(f, dtype=np.float64) for f, _ in monitor_samples])
        ym = np.stack([np.atleast_1d(np.asarray(l, dtype=np.float64)) for _, l in monitor_samples])
        monitor_xy = (model.transform(xm), ym)
    theta = _fit_mlp(
        model.theta, model.dims, model.transform(x), y, cfg, rng, pat, "holdout",
        monitor_idx=monitor_idx, monitor_xy=monitor_xy,
        min_rel_improve=_RETRAIN_MIN_IMPROVE,
    )
    return Model(
        "mlp", model.dims, theta, model.feature_spec, model.seed, model.x_center, model.x_scale
    )


# ---------------------------------------------------------------- prediction

def predict_features(model: Model, features: np.ndarray) -> np.ndarray:
    """Raw model output for a feature matrix (no clamping)."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != (model.dims[0] - 1 if model.kind == "kernel" else model.dims[0]):
        raise InvalidArgument(
            f"feature dim {x.shape[1]} does not match model input {model.dims[0]}"
        )
    if model.kind == "kernel":
        xb = np.hstack([x, np.ones((x.shape[0], 1))])
        return xb @ model.theta.reshape(model.dims)
    return mlp_forward(model.theta, model.dims, model.transform(x))


def _clamp(task: str, n_qubits: int, raw: np.ndarray) -> np.ndarray:
    family = TASKS_CLAMP.get(task)
    if family == "corr":
        return np.clip(raw, -1.0, 1.0)
    if family == "entropy":
        return np.clip(raw, 0.0, float(n_qubits - 1))
    return raw


def predict(model: Model, point) -> np.ndarray:
    """Clamped label prediction for one data point."""
    if model.feature_spec is None:
        raise InvalidArgument("model carries no feature spec; cannot featurize points")
    spec = model.feature_spec
    feats = featurize(point, spec.use_params)
    raw = predict_features(model, feats)[0]
    return _clamp(spec.task, spec.n_qubits, raw)


def predict_many(model: Model, points) -> np.ndarray:
    if model.feature_spec is None:
        raise InvalidArgument("model carries no feature spec; cannot featurize points")
    spec = model.feature_spec
    feats = featurize_many(points, spec.use_params)
    raw = predict_features(model, feats)
    return _clamp(spec.task, spec.n_qubits, raw)


# ---------------------------------------------------------------- metrics

def r_squared(predictions, truths) -> float:
    """Coefficient of determination over all entries, flattened."""
    preds = [np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in predictions]
    trues = [np.atleast_1d(np.asarray(t, dtype=np.float64)) for t in truths]
    if len(preds) != len(trues):
        raise InvalidArgument("predictions and truths differ in length")
    if len(preds) < 2:
        raise InvalidArgument("need at least two pairs")
    p = np.concatenate([a.ravel() for a in preds])
    t = np.concatenate([a.ravel() for a in trues])
    if p.shape != t.shape:
        raise InvalidArgument("prediction/truth shapes disagree")
    ss_tot = float(((t - t.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise UndefinedMetric("truth values are all identical; R^2 undefined")
    ss_res = float(((t - p) ** 2).sum())
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------- persistence

def _encode_blob(arr: np.ndarray | None) -> str | None:
    if arr is None:
        return None
    return base64.b64encode(np.asarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode_blob(blob: str | None) -> np.ndarray | None:
    if blob is None:
        return None
    return np.frombuffer(base64.b64decode(blob), dtype="<f8").astype(np.float64)


def save_model(model: Model, path):
    """JSON header plus base64 little-endian float64 parameter blobs."""
    spec = model.feature_spec
    payload = {
        "kind": model.kind,
        "dims": list(model.dims),
        "feature_spec": None
        if spec is None
        else {
            "n_qubits": spec.n_qubits,
            "use_params": spec.use_params,
            "param_dim": spec.param_dim,
            "task": spec.task,
        },
        "seed": model.seed,
        "theta": _encode_blob(model.theta),
        "x_center": _encode_blob(model.x_center),
        "x_scale": _encode_blob(model.x_scale),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"bad model file: {exc}") from None
    try:
        spec_obj = payload["feature_spec"]
        spec = None if spec_obj is None else FeatureSpec(**spec_obj)
        return Model(
            payload["kind"],
            tuple(payload["dims"]),
            _decode_blob(payload["theta"]),
            spec,
            payload["seed"],
            _decode_blob(payload.get("x_center")),
            _decode_blob(payload.get("x_scale")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidArgument(f"bad model file: {exc}") from None
