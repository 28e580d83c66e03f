import math

import numpy as np
import pytest

from sedconv import data, models, training
from sedconv.autodiff import backward
from sedconv.errors import ConfigError, NumericsError
from sedconv.tensor import Tensor
from sedconv.training import (
    AdamState,
    EarlyStopping,
    RunRecord,
    TrainConfig,
    adam_step,
    bce_loss,
    evaluate,
    fit,
    load_run_record,
    repeat_experiment,
    save_run_record,
)


def tiny_splits(seed=3):
    return data.synthesize_dataset(
        num_mixtures=5, classes=3, max_polyphony=2, seed=seed,
        frames_per_mixture=64, num_features=12, chunk_frames=32,
        mean_gap=20.0, duration_range=(6, 16),
    )


def tiny_model(seed=0, variant="dnd"):
    config = models.ModelConfig(
        variant=variant, channels=3, classes=3, input_frames=32,
        input_features=12, dropout=0.25, dil_kernel=3, dilation_time=1,
    )
    return models.build_model(config, seed=seed)


def tiny_train_config(**kw):
    defaults = dict(batch_size=4, max_epochs=4, patience=30, seed=1)
    defaults.update(kw)
    return TrainConfig(**defaults)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def test_bce_half_everywhere_is_ln2():
    pred = Tensor(np.full((8, 4), 0.5))
    target = np.zeros((8, 4), dtype=np.uint8)
    assert bce_loss(pred, target).item() == pytest.approx(math.log(2), abs=1e-12)


def test_bce_perfect_prediction_is_tiny():
    target = (np.random.default_rng(0).random((16, 4)) > 0.5).astype(np.uint8)
    pred = Tensor(target.astype(np.float64))
    assert bce_loss(pred, target).item() < 1e-6


def test_bce_matches_hand_formula():
    rng = np.random.default_rng(1)
    p = rng.random((2, 2)) * 0.8 + 0.1
    y = (rng.random((2, 2)) > 0.5).astype(np.float64)
    want = 0.0
    for i in range(2):
        for j in range(2):
            want -= y[i, j] * math.log(p[i, j]) + (1 - y[i, j]) * math.log(1 - p[i, j])
    want /= 4
    assert bce_loss(Tensor(p), y).item() == pytest.approx(want, abs=1e-12)


def test_bce_shape_mismatch():
    with pytest.raises(Exception):
        bce_loss(Tensor(np.full((2, 2), 0.5)), np.zeros((2, 3)))


def test_bce_gradient_matches_finite_differences():
    from sedconv.autodiff import finite_difference_check

    rng = np.random.default_rng(2)
    p = Tensor(rng.random((3, 4)) * 0.9 + 0.05, requires_grad=True)
    y = (rng.random((3, 4)) > 0.5).astype(np.uint8)
    f = lambda: bce_loss(p, y)
    assert finite_difference_check(f, [p], h=1e-7) < 1e-6


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------


def test_adam_first_step_closed_form():
    w = Tensor(np.array([1.0]), requires_grad=True)
    loss = (w * 2.0).sum()  # gradient 2
    grads = backward(loss, [w])
    config = tiny_train_config()
    adam_step([w], grads, AdamState(), config)
    # first step: update = -lr * g / (|g| + eps') ~ -lr
    assert w.data[0] == pytest.approx(1.0 - 1e-3, abs=1e-9)


def test_adam_zero_gradient_never_moves():
    w = Tensor(np.array([5.0]), requires_grad=True)
    state = AdamState()
    config = tiny_train_config()
    for _ in range(25):
        grads = backward((w * 0.0).sum(), [w])
        adam_step([w], grads, state, config)
    assert w.data[0] == 5.0


def test_adam_identical_parameters_update_identically():
    a = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    b = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    state = AdamState()
    config = tiny_train_config()
    loss = ((a * 3.0).sum() + (b * 3.0).sum()).sum()
    grads = backward(loss, [a, b])
    adam_step([a, b], grads, state, config)
    assert np.array_equal(a.data, b.data)


def test_adam_decreases_scalar_quadratic():
    for start in (0.5, -0.7, 2.0):
        w = Tensor(np.array([start]), requires_grad=True)
        grads = backward((w * w).sum(), [w])
        adam_step([w], grads, AdamState(), tiny_train_config())
        assert abs(w.data[0]) < abs(start)


# ---------------------------------------------------------------------------
# early stopping
# ---------------------------------------------------------------------------


def run_stopper(losses, patience):
    stopper = EarlyStopping(patience)
    for epoch, loss in enumerate(losses, 1):
        if stopper.update(loss, epoch):
            return epoch, stopper.best_epoch
    return None, stopper.best_epoch


def test_early_stopping_scripted_sequence():
    stop_epoch, best = run_stopper([3.0, 2.0, 4.0, 4.0, 4.0], patience=3)
    assert stop_epoch == 5
    assert best == 2


def test_early_stopping_monotonic_improvement_never_fires():
    losses = [1.0 / (i + 1) for i in range(50)]
    stop_epoch, best = run_stopper(losses, patience=30)
    assert stop_epoch is None
    assert best == 50


def test_early_stopping_patience_30_exact():
    # one improvement, then exactly 30 flat epochs -> stop at epoch 31
    stop_epoch, best = run_stopper([1.0] + [1.0] * 30, patience=30)
    assert stop_epoch == 31
    assert best == 1
    # 29 flat epochs then an improvement resets the streak
    losses = [1.0] + [1.0] * 29 + [0.5] + [0.5] * 29
    stop_epoch, best = run_stopper(losses, patience=30)
    assert stop_epoch is None
    assert best == 31


def test_early_stopping_equal_loss_is_not_improvement():
    stop_epoch, best = run_stopper([2.0, 2.0, 2.0], patience=2)
    assert stop_epoch == 3
    assert best == 1


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def test_fit_records_and_restores_best_epoch(tmp_path):
    train, val, test = tiny_splits()
    model = tiny_model(seed=2)
    ckpt = tmp_path / "best.ckpt"
    record = fit(model, train, val, tiny_train_config(max_epochs=5), test_split=test,
                 checkpoint_path=ckpt)
    assert len(record.epochs) <= 5
    best = record.best_epoch
    assert 1 <= best <= len(record.epochs)
    assert record.epochs[best - 1].val_loss == min(e.val_loss for e in record.epochs)

    # restored parameters reproduce the recorded best validation loss exactly
    reval = training._mean_loss(model, val.samples, 4)
    assert reval == record.epochs[best - 1].val_loss

    # checkpoint holds the restored (best) parameters bit-for-bit
    _, stored = models.read_checkpoint(ckpt)
    for name, value in model.state_arrays():
        arr = value.data if isinstance(value, Tensor) else value
        assert np.array_equal(stored[name], arr), name

    assert record.test_f1 is not None and record.test_er is not None


def test_fit_is_bit_reproducible():
    train, val, _ = tiny_splits()
    records = []
    for _ in range(2):
        model = tiny_model(seed=7)
        records.append(fit(model, train, val, tiny_train_config(max_epochs=3, seed=5)))
    a, b = records
    assert [e.train_loss for e in a.epochs] == [e.train_loss for e in b.epochs]
    assert [e.val_loss for e in a.epochs] == [e.val_loss for e in b.epochs]
    assert a.best_epoch == b.best_epoch


def test_fit_reduces_training_loss():
    train, val, _ = tiny_splits()
    model = tiny_model(seed=3)
    record = fit(model, train, val, tiny_train_config(max_epochs=8, learning_rate=3e-3))
    assert record.epochs[-1].train_loss < record.epochs[0].train_loss


def test_fit_rejects_empty_split():
    train, val, _ = tiny_splits()
    empty = data.DatasetSplit("train", [])
    with pytest.raises(ConfigError):
        fit(tiny_model(), empty, val, tiny_train_config())


def test_fit_aborts_on_nan_with_diagnostic():
    train, val, _ = tiny_splits()
    model = tiny_model(seed=4)
    model.classifier.affine.weight.data[0, 0] = np.nan
    with pytest.raises(NumericsError, match="epoch 1"):
        fit(model, train, val, tiny_train_config())


def test_fit_early_stops_on_plateau():
    train, val, _ = tiny_splits()
    model = tiny_model(seed=5)
    # learning rate 0 -> no parameter changes -> identical val losses -> the
    # streak grows every epoch after the first
    record = fit(model, train, val, tiny_train_config(max_epochs=50, patience=2, learning_rate=0.0))
    assert len(record.epochs) == 3  # epoch 1 sets best, epochs 2-3 exhaust patience
    assert record.best_epoch == 1


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


TINY_DWS_POOLING = ((1, 2), (1, 2), (1, 3))  # 12 feature bands -> width 1


def test_repeat_single_repetition_has_zero_std():
    splits = tiny_splits()
    config = models.ModelConfig(
        variant="dws", channels=2, classes=3, input_frames=32, input_features=12,
        dropout=0.0, pooling_plan=TINY_DWS_POOLING,
    )
    rows = repeat_experiment([config], splits, tiny_train_config(max_epochs=2), repetitions=1)
    assert rows[0].status == "ok", rows[0].error
    assert rows[0].f1_std == 0.0
    assert rows[0].er_std == 0.0


def test_repeat_mean_std_match_two_pass_oracle():
    values = [0.61, 0.64, 0.59, 0.66]
    mean, std = training._mean_std(values)
    want_mean = sum(values) / len(values)
    want_std = math.sqrt(sum((v - want_mean) ** 2 for v in values) / len(values))
    assert mean == pytest.approx(want_mean, abs=1e-12)
    assert std == pytest.approx(want_std, abs=1e-12)


def test_repeat_failing_cell_is_isolated():
    splits = tiny_splits()
    good = models.ModelConfig(
        variant="dws", channels=2, classes=3, input_frames=32, input_features=12,
        dropout=0.0, pooling_plan=TINY_DWS_POOLING,
    )
    bad = models.ModelConfig(
        variant="dnd", channels=2, classes=3, input_frames=32, input_features=4, dropout=0.0
    )
    rows = repeat_experiment([bad, good], splits, tiny_train_config(max_epochs=1), repetitions=1)
    assert rows[0].status == "FAILED"
    assert "feature width" in rows[0].error
    assert rows[1].status == "ok"
    assert math.isfinite(rows[1].f1_mean)


def test_repeat_rejects_empty_grid():
    with pytest.raises(ConfigError, match="no grid points"):
        repeat_experiment([], tiny_splits(), tiny_train_config(), repetitions=1)


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------


def test_run_record_round_trip(tmp_path):
    record = RunRecord(
        epochs=[
            training.EpochRecord(0.7, 0.71, 1.25),
            training.EpochRecord(0.5, 0.52, 1.5),
        ],
        best_epoch=2,
        test_f1=0.81,
        test_er=0.33,
    )
    path = tmp_path / "run.txt"
    save_run_record(path, record)
    loaded = load_run_record(path)
    assert loaded.best_epoch == 2
    assert loaded.test_f1 == 0.81
    assert loaded.test_er == 0.33
    assert [e.train_loss for e in loaded.epochs] == [0.7, 0.5]
    assert [e.seconds for e in loaded.epochs] == [1.25, 1.5]


def test_evaluate_returns_metrics_in_range():
    train, _, test = tiny_splits()
    model = tiny_model(seed=6)
    f1, er = evaluate(model, test.samples, batch_size=4)
    assert 0.0 <= f1 <= 1.0
    assert er >= 0.0
