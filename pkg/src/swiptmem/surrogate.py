"""Feed-forward surrogates for the circuit model.

Two small ReLU networks stand in for the circuit simulator inside the
optimization loop: one predicts the next load voltage, the other the
per-interval harvested power, both from the pair (current voltage, received
symbol). Training minimizes mean absolute percentage error with Adam;
everything is plain numpy so runs are bit-for-bit reproducible from a seed.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .circuit import Dataset
from .errors import TrainingFailure

MODEL_FORMAT_VERSION = 1

# Relative error against a near-zero target is meaningless; targets are
# floored at these scales before dividing.
MAPE_FLOOR_VOLTAGE = 1e-6
MAPE_FLOOR_POWER = 1e-9

_TARGETS = ("next_state", "reward")


@dataclass
class MlpParams:
    """Weights plus the normalization constants that make inference self-contained.

    Layers are affine maps with ReLU on all but the last. Inputs are
    standardized per feature; the output is min-max mapped to [0, 1] during
    training and denormalized on the way out.
    """

    weights: list
    biases: list
    in_mean: np.ndarray
    in_std: np.ndarray
    out_lo: float
    out_hi: float
    target: str
    format_version: int = MODEL_FORMAT_VERSION

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def forward(self, inputs):
        """Evaluate the network on rows of (v0, x_eh); returns denormalized outputs."""
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        if not np.all(np.isfinite(x)):
            raise ValueError("inputs must be finite")
        h = (x - self.in_mean) / self.in_std
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        y = (h @ self.weights[-1] + self.biases[-1]).ravel()
        return self.out_lo + y * (self.out_hi - self.out_lo)


def mlp_forward(m: MlpParams, inputs):
    """Functional alias for :meth:`MlpParams.forward` (scalar pair or batch)."""
    out = m.forward(inputs)
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite network output")
    if np.ndim(inputs) == 1:
        return float(out[0])
    return out


def mape(pred, target, floor=1e-12) -> float:
    """Mean absolute percentage error with a floored denominator, in percent."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    denom = np.maximum(np.abs(target), floor)
    return float(100.0 * np.mean(np.abs(pred - target) / denom))


@dataclass
class TrainConfig:
    hidden_layers: int = 5
    hidden_units: int = 7
    learning_rate: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 400
    patience: int = 60  # epochs without validation improvement before stopping
    stall_epochs: int = 3  # training-loss stalls before the rate is halved
    grad_clip: float = 10.0
    n_train: int = 11000
    n_val: int = 3000
    n_test: int = 750
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must be in (0, 1)")


@dataclass
class TrainReport:
    train_mape: list = field(default_factory=list)
    val_mape: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mape: float = np.inf
    test_mape: float = np.inf
    learning_rates: list = field(default_factory=list)


def _init_params(sizes, rng):
    """Uniform fan-in-scaled weights, zero biases (keeps narrow ReLU stacks alive)."""
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return weights, biases


def _forward_cached(weights, biases, x):
    acts = [x]
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    y = h @ weights[-1] + biases[-1]
    return y.ravel(), acts


def _backward(weights, acts, dloss_dy):
    """Gradients of a scalar loss given d(loss)/d(output) per row."""
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    delta = dloss_dy[:, None]
    for layer in range(len(weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * (acts[layer] > 0.0)
    return grads_w, grads_b


def loss_and_gradients(weights, biases, x, y_norm, denom_norm):
    """Floored-MAPE loss and its parameter gradients.

    ``y_norm`` are the min-max-normalized targets; ``denom_norm`` are the
    floored absolute targets on the *original* scale divided by the output
    span, so the loss equals the true percentage error despite the shift in
    the normalization. Exposed for the finite-difference checks in the
    test-suite.
    """
    pred, acts = _forward_cached(weights, biases, x)
    resid = (pred - y_norm) / denom_norm
    loss = 100.0 * np.mean(np.abs(resid))
    dloss = 100.0 * np.sign(resid) / (denom_norm * x.shape[0])
    gw, gb = _backward(weights, acts, dloss)
    return loss, gw, gb


def train(data: Dataset, target: str, cfg: TrainConfig):
    """Fit one surrogate on the requested target column.

    The dataset is split sequentially into train/val/test blocks of the
    configured sizes. Epochs that worsen the full-batch training loss are
    rolled back (so the recorded training-loss curve is non-increasing), and
    the learning rate is halved after ``stall_epochs`` consecutive rollbacks.
    Returns the parameters at the best validation loss plus a report.
    """
    if target not in _TARGETS:
        raise ValueError(f"target must be one of {_TARGETS}")
    n_need = cfg.n_train + cfg.n_val + cfg.n_test
    if len(data) < n_need:
        raise ValueError(f"dataset has {len(data)} rows; need {n_need}")

    x_all = np.column_stack([data.v0, data.x_eh])
    y_all = data.v_next if target == "next_state" else data.avg_power
    floor = MAPE_FLOOR_VOLTAGE if target == "next_state" else MAPE_FLOOR_POWER

    x_tr, y_tr = x_all[: cfg.n_train], y_all[: cfg.n_train]
    x_val, y_val = (
        x_all[cfg.n_train: cfg.n_train + cfg.n_val],
        y_all[cfg.n_train: cfg.n_train + cfg.n_val],
    )
    x_te, y_te = x_all[n_need - cfg.n_test: n_need], y_all[n_need - cfg.n_test: n_need]

    in_mean = x_tr.mean(axis=0)
    in_std = x_tr.std(axis=0)
    in_std[in_std == 0] = 1.0
    out_lo = float(y_tr.min())
    out_hi = float(y_tr.max())
    if out_hi <= out_lo:
        out_hi = out_lo + 1.0
    scale = out_hi - out_lo

    xn_tr = (x_tr - in_mean) / in_std
    xn_val = (x_val - in_mean) / in_std
    yn_tr = (y_tr - out_lo) / scale
    denom_tr = np.maximum(np.abs(y_tr), floor) / scale

    rng = np.random.default_rng(cfg.seed)
    sizes = [2] + [cfg.hidden_units] * cfg.hidden_layers + [1]
    weights, biases = _init_params(sizes, rng)

    adam_m = [np.zeros_like(w) for w in weights] + [np.zeros_like(b) for b in biases]
    adam_v = [np.zeros_like(w) for w in weights] + [np.zeros_like(b) for b in biases]
    t_step = 0
    lr = cfg.learning_rate

    def full_train_loss(ws, bs):
        pred, _ = _forward_cached(ws, bs, xn_tr)
        return 100.0 * float(np.mean(np.abs((pred - yn_tr) / denom_tr)))

    def val_mape(ws, bs):
        pred, _ = _forward_cached(ws, bs, xn_val)
        return mape(out_lo + pred * scale, y_val, floor)

    report = TrainReport()
    best_w = [w.copy() for w in weights]
    best_b = [b.copy() for b in biases]
    report.best_val_mape = val_mape(weights, biases)
    report.best_epoch = 0
    prev_loss = full_train_loss(weights, biases)
    stall = 0
    since_best = 0

    n_tr = cfg.n_train
    for epoch in range(cfg.epochs):
        snapshot = ([w.copy() for w in weights], [b.copy() for b in biases])
        order = rng.permutation(n_tr)
        for start in range(0, n_tr, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            loss, gw, gb = loss_and_gradients(weights, biases, xn_tr[idx], yn_tr[idx], denom_tr[idx])
            if not np.isfinite(loss):
                raise TrainingFailure(
                    f"training loss became non-finite at epoch {epoch}", last_epoch=epoch - 1
                )
            grads = gw + gb
            gnorm = np.sqrt(sum(float((g**2).sum()) for g in grads))
            if gnorm > cfg.grad_clip:
                grads = [g * (cfg.grad_clip / gnorm) for g in grads]
            t_step += 1
            params = weights + biases
            for i, (prm, g) in enumerate(zip(params, grads)):
                adam_m[i] = cfg.beta1 * adam_m[i] + (1 - cfg.beta1) * g
                adam_v[i] = cfg.beta2 * adam_v[i] + (1 - cfg.beta2) * g * g
                m_hat = adam_m[i] / (1 - cfg.beta1**t_step)
                v_hat = adam_v[i] / (1 - cfg.beta2**t_step)
                prm -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

        epoch_loss = full_train_loss(weights, biases)
        if epoch_loss > prev_loss:
            # Roll the epoch back and drop the optimizer momentum so the same
            # rejected trajectory is not replayed next epoch.
            weights, biases = snapshot
            adam_m = [np.zeros_like(a) for a in adam_m]
            adam_v = [np.zeros_like(a) for a in adam_v]
            t_step = 0
            stall += 1
            if stall >= cfg.stall_epochs:
                lr *= 0.5
                stall = 0
            epoch_loss = prev_loss
        else:
            prev_loss = epoch_loss
            stall = 0
        report.train_mape.append(epoch_loss)
        report.learning_rates.append(lr)

        vm = val_mape(weights, biases)
        report.val_mape.append(vm)
        since_best += 1
        if vm < report.best_val_mape:
            report.best_val_mape = vm
            report.best_epoch = epoch + 1
            best_w = [w.copy() for w in weights]
            best_b = [b.copy() for b in biases]
            since_best = 0
        if since_best >= cfg.patience:
            break

    params = MlpParams(
        weights=best_w,
        biases=best_b,
        in_mean=in_mean,
        in_std=in_std,
        out_lo=out_lo,
        out_hi=out_hi,
        target=target,
    )
    report.test_mape = mape(params.forward(x_te), y_te, floor)
    return params, report


def predict_next_state(m: MlpParams, v0, x_eh, v_ceiling: float):
    """Next-state prediction clamped to the physical voltage range."""
    out = m.forward(np.column_stack([np.atleast_1d(v0), np.atleast_1d(x_eh)]))
    out = np.clip(out, 0.0, v_ceiling)
    return float(out[0]) if np.ndim(v0) == 0 else out


def predict_reward(m: MlpParams, v0, x_eh, power_ceiling: float):
    """Per-interval power prediction clamped to [0, power ceiling]."""
    out = m.forward(np.column_stack([np.atleast_1d(v0), np.atleast_1d(x_eh)]))
    out = np.clip(out, 0.0, power_ceiling)
    return float(out[0]) if np.ndim(v0) == 0 else out


def save_model(m: MlpParams, path):
    doc = {
        "format_version": m.format_version,
        "kind": "relu-mlp",
        "target": m.target,
        "layer_sizes": m.layer_sizes,
        "in_mean": m.in_mean.tolist(),
        "in_std": m.in_std.tolist(),
        "out_lo": m.out_lo,
        "out_hi": m.out_hi,
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> MlpParams:
    with open(path) as fh:
        doc = json.load(fh)
    if "format_version" not in doc:
        raise ValueError("model file lacks the mandatory version field")
    if doc["format_version"] != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc['format_version']}")
    return MlpParams(
        weights=[np.asarray(w, dtype=float) for w in doc["weights"]],
        biases=[np.asarray(b, dtype=float) for b in doc["biases"]],
        in_mean=np.asarray(doc["in_mean"], dtype=float),
        in_std=np.asarray(doc["in_std"], dtype=float),
        out_lo=float(doc["out_lo"]),
        out_hi=float(doc["out_hi"]),
        target=doc["target"],
        format_version=doc["format_version"],
    )
