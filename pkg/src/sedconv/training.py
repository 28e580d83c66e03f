"""Optimization loop: cross-entropy loss, Adam, early stopping, repetitions.

A run is bit-reproducible from its seed: the same seed yields the same
batch order, the same dropout masks, and therefore the same recorded
losses.  Per-epoch wall-clock covers one full pass over the training split.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics, models
from .autodiff import backward
from .errors import ConfigError, NumericsError, ShapeError
from .tensor import Tensor, make_node, no_grad

BCE_CLAMP = 1e-12


@dataclass
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    patience: int = 30
    max_epochs: int = 200
    seed: int = 0
    repetitions: int = 10

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        return self


@dataclass
class EpochRecord:
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class RunRecord:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    test_f1: float = None
    test_er: float = None

    @property
    def best_val_loss(self):
        return self.epochs[self.best_epoch - 1].val_loss

    @property
    def mean_epoch_seconds(self):
        return float(np.mean([e.seconds for e in self.epochs]))


def bce_loss(pred, target):
    """Mean binary cross-entropy over every (frame, class) term.

    Predictions are clamped to [1e-12, 1 - 1e-12] before the logs; the
    clamp also zeroes the gradient of any saturated element.
    """
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    y = target.astype(pred.dtype)
    p = np.clip(pred.data, BCE_CLAMP, 1.0 - BCE_CLAMP)
    n = p.size
    value = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum() / n

    inside = (pred.data >= BCE_CLAMP) & (pred.data <= 1.0 - BCE_CLAMP)

    def backward_rule(g):
        grad = g * (p - y) / (p * (1.0 - p) * n)
        return (np.where(inside, grad, 0.0),)

    return make_node(np.asarray(value), (pred,), backward_rule)


class AdamState:
    """First/second moment accumulators plus the shared step count."""

    def __init__(self):
        self.step = 0
        self._moments = {}

    def moments(self, param):
        key = id(param)
        if key not in self._moments:
            self._moments[key] = (np.zeros_like(param.data), np.zeros_like(param.data))
        return self._moments[key]


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update, in place on the parameter tensors."""
    state.step += 1
    t = state.step
    lr = config.learning_rate
    b1, b2 = config.beta1, config.beta2
    correct1 = 1.0 - b1**t
    correct2 = 1.0 - b2**t
    for param in params:
        g = grads.grad(param)
        m, v = state.moments(param)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / correct1
        v_hat = v / correct2
        param.data -= lr * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strict
    improvement of the best validation loss."""

    def __init__(self, patience):
        self.patience = patience
        self.best = None
        self.best_epoch = 0
        self.streak = 0

    def update(self, val_loss, epoch):
        """Record one epoch; returns True when training should stop."""
        if self.best is None or val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.streak = 0
        else:
            self.streak += 1
        return self.streak >= self.patience


def _stack_features(samples, idx, dtype):
    return np.stack([samples[i].features for i in idx]).astype(dtype, copy=False)


def _stack_targets(samples, idx):
    return np.stack([samples[i].targets for i in idx])


def _mean_loss(model, samples, batch_size):
    """Dataset-mean cross-entropy without building gradient records."""
    total = 0.0
    count = 0
    with no_grad():
        for start in range(0, len(samples), batch_size):
            idx = range(start, min(start + batch_size, len(samples)))
            x = _stack_features(samples, idx, model.dtype)
            y = _stack_targets(samples, idx)
            pred = model.forward(Tensor(x, dtype=model.dtype), mode="eval")
            total += bce_loss(pred, y).item() * len(idx)
            count += len(idx)
    return total / count


def fit(model, train_split, val_split, config, test_split=None, checkpoint_path=None):
    """Train until early stopping or ``max_epochs``; restore the best epoch.

    Returns a RunRecord; when ``test_split`` is given the restored model is
    scored on it (frame-wise F1 and error rate over the whole split).
    """
    config.validate()
    train_samples = list(train_split.samples)
    val_samples = list(val_split.samples)
    if not train_samples or not val_samples:
        raise ConfigError("training and validation splits must be non-empty")

    rng = np.random.default_rng(config.seed)
    params = model.param_tensors()
    state = AdamState()
    stopper = EarlyStopping(config.patience)
    record = RunRecord()
    best_snapshot = None

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(train_samples))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            x = _stack_features(train_samples, idx, model.dtype)
            y = _stack_targets(train_samples, idx)
            pred = model.forward(Tensor(x, dtype=model.dtype), mode="train", rng=rng)
            loss = bce_loss(pred, y)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NumericsError(
                    f"training loss is {loss_value} at epoch {epoch}, batch {start // config.batch_size}"
                )
            grads = backward(loss, params)
            adam_step(params, grads, state, config)
            epoch_loss += loss_value * len(idx)
        seconds = time.perf_counter() - started

        train_loss = epoch_loss / len(train_samples)
        val_loss = _mean_loss(model, val_samples, config.batch_size)
        record.epochs.append(EpochRecord(train_loss, val_loss, seconds))

        improved_epoch = stopper.best_epoch
        should_stop = stopper.update(val_loss, epoch)
        if stopper.best_epoch != improved_epoch or epoch == 1:
            best_snapshot = {
                name: (value.data if isinstance(value, Tensor) else value).copy()
                for name, value in model.state_arrays()
            }
        if should_stop:
            break

    record.best_epoch = stopper.best_epoch
    models.restore_state(model, best_snapshot)
    if checkpoint_path is not None:
        models.save_checkpoint(checkpoint_path, model)

    if test_split is not None:
        record.test_f1, record.test_er = evaluate(model, test_split.samples, config.batch_size)
    return record


def evaluate(model, samples, batch_size=16):
    """Frame-wise F1 and error rate of the model over a list of samples."""
    pairs = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            idx = range(start, min(start + batch_size, len(samples)))
            x = _stack_features(samples, idx, model.dtype)
            pred = model.forward(Tensor(x, dtype=model.dtype), mode="eval")
            binary = metrics.binarize(pred.data)
            for row, i in enumerate(idx):
                pairs.append((binary[row], samples[i].targets))
    pred_all, ref_all = metrics.concat_frames(pairs)
    return metrics.f1_score(pred_all, ref_all), metrics.error_rate(pred_all, ref_all)


# ---------------------------------------------------------------------------
# repetitions and aggregation
# ---------------------------------------------------------------------------


@dataclass
class AggregateRow:
    variant: str
    separable: bool
    dilation: int  # 0 for variants without a temporal convolution
    kernel: int  # 0 likewise
    f1_mean: float = float("nan")
    f1_std: float = float("nan")
    er_mean: float = float("nan")
    er_std: float = float("nan")
    parameters: int = 0
    seconds_mean: float = float("nan")
    seconds_std: float = float("nan")
    status: str = "ok"
    error: str = ""


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def run_grid_point(model_config, splits, train_config, repetitions, base_seed=None):
    """Train one configuration ``repetitions`` times and aggregate."""
    train_split, val_split, test_split = splits
    seed0 = train_config.seed if base_seed is None else base_seed
    f1s, ers, all_seconds = [], [], []
    params_total = None
    for rep in range(repetitions):
        seed = seed0 + rep
        model = models.build_model(model_config, seed=seed)
        if params_total is None:
            params_total = models.count_parameters(model).total_parameters()
        rep_config = TrainConfig(
            batch_size=train_config.batch_size,
            learning_rate=train_config.learning_rate,
            beta1=train_config.beta1,
            beta2=train_config.beta2,
            adam_epsilon=train_config.adam_epsilon,
            patience=train_config.patience,
            max_epochs=train_config.max_epochs,
            seed=seed,
            repetitions=repetitions,
        )
        record = fit(model, train_split, val_split, rep_config, test_split=test_split)
        f1s.append(record.test_f1)
        ers.append(record.test_er)
        all_seconds.extend(e.seconds for e in record.epochs)

    row = AggregateRow(
        variant=model_config.variant,
        separable=model_config.separable,
        dilation=model_config.dilation_time if model_config.uses_dilation else 0,
        kernel=model_config.dil_kernel if model_config.uses_dilation else 0,
        parameters=params_total,
    )
    row.f1_mean, row.f1_std = _mean_std(f1s)
    row.er_mean, row.er_std = _mean_std(ers)
    row.seconds_mean, row.seconds_std = _mean_std(all_seconds)
    return row


def repeat_experiment(config_grid, splits, train_config, repetitions=10):
    """One aggregate row per grid point; a failing point is marked FAILED
    without aborting the remaining points."""
    if not config_grid:
        raise ConfigError("no grid points")
    rows = []
    for model_config in config_grid:
        try:
            rows.append(run_grid_point(model_config, splits, train_config, repetitions))
        except Exception as exc:  # keep remaining cells alive
            rows.append(
                AggregateRow(
                    variant=model_config.variant,
                    separable=model_config.separable,
                    dilation=model_config.dilation_time if model_config.uses_dilation else 0,
                    kernel=model_config.dil_kernel if model_config.uses_dilation else 0,
                    status="FAILED",
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
    return rows


# ---------------------------------------------------------------------------
# run-record files
# ---------------------------------------------------------------------------


def save_run_record(path, record):
    """Line-oriented text: one epoch per line, then summary lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# epoch train_loss val_loss seconds\n")
        for i, e in enumerate(record.epochs, 1):
            fh.write(f"{i} {e.train_loss!r} {e.val_loss!r} {e.seconds!r}\n")
        fh.write(f"best_epoch {record.best_epoch}\n")
        if record.test_f1 is not None:
            fh.write(f"test_f1 {record.test_f1!r}\n")
            fh.write(f"test_er {record.test_er!r}\n")


def load_run_record(path):
    record = RunRecord()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "best_epoch":
                record.best_epoch = int(parts[1])
            elif parts[0] == "test_f1":
                record.test_f1 = float(parts[1])
            elif parts[0] == "test_er":
                record.test_er = float(parts[1])
            else:
                _, train_loss, val_loss, seconds = parts
                record.epochs.append(
                    EpochRecord(float(train_loss), float(val_loss), float(seconds))
                )
    return record
