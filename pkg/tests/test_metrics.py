import numpy as np
import pytest

from sedconv import metrics
from sedconv.errors import NoReferenceError, ShapeError

from reference_impls import naive_frame_metrics


# ---------------------------------------------------------------------------
# binarize
# ---------------------------------------------------------------------------


def test_binarize_strict_at_threshold():
    probs = np.array([[0.5, 0.51, 0.49]])
    assert np.array_equal(metrics.binarize(probs), [[0, 1, 0]])


def test_binarize_all_half_matrix_is_zero():
    assert metrics.binarize(np.full((4, 4), 0.5)).sum() == 0


def test_binarize_rejects_out_of_range():
    with pytest.raises(ShapeError):
        metrics.binarize(np.array([[1.2]]))
    with pytest.raises(ShapeError):
        metrics.binarize(np.array([[-0.1]]))


# ---------------------------------------------------------------------------
# f1
# ---------------------------------------------------------------------------


def test_f1_perfect_prediction():
    ref = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    assert metrics.f1_score(ref, ref) == 1.0


def test_f1_hand_case():
    ref = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    pred = np.array([[1, 1], [0, 0]], dtype=np.uint8)
    assert metrics.f1_score(pred, ref) == 0.5


def test_f1_all_zero_prediction():
    ref = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    pred = np.zeros_like(ref)
    assert metrics.f1_score(pred, ref) == 0.0


def test_f1_degenerate_both_empty():
    zeros = np.zeros((3, 4), dtype=np.uint8)
    assert metrics.f1_score(zeros, zeros) == 1.0


def test_f1_shape_mismatch():
    with pytest.raises(ShapeError):
        metrics.f1_score(np.zeros((2, 2), dtype=np.uint8), np.zeros((2, 3), dtype=np.uint8))


def test_f1_rejects_non_binary():
    with pytest.raises(ShapeError):
        metrics.f1_score(np.full((2, 2), 2), np.zeros((2, 2), dtype=np.uint8))


# ---------------------------------------------------------------------------
# error rate
# ---------------------------------------------------------------------------


def test_error_rate_perfect():
    ref = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    assert metrics.error_rate(ref, ref) == 0.0


def test_error_rate_hand_case():
    ref = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    pred = np.array([[1, 1], [0, 0]], dtype=np.uint8)
    # frame 1: one insertion; frame 2: one deletion; two references
    assert metrics.error_rate(pred, ref) == 1.0


def test_error_rate_all_deletions():
    ref = np.array([[1, 1], [1, 0]], dtype=np.uint8)
    assert metrics.error_rate(np.zeros_like(ref), ref) == 1.0


def test_error_rate_no_reference_is_distinguished():
    with pytest.raises(NoReferenceError):
        metrics.error_rate(np.ones((2, 2), dtype=np.uint8), np.zeros((2, 2), dtype=np.uint8))


def test_error_rate_bounded_when_fp_below_fn():
    rng = np.random.default_rng(0)
    for _ in range(20):
        ref = (rng.random((16, 8)) > 0.5).astype(np.uint8)
        pred = ref.copy()
        # knock out some actives: only deletions, never insertions
        mask = rng.random((16, 8)) > 0.6
        pred[mask] = 0
        if ref.sum() == 0:
            continue
        er = metrics.error_rate(pred, ref)
        assert 0.0 <= er <= 1.0


def test_metrics_invariant_to_class_permutation():
    rng = np.random.default_rng(1)
    ref = (rng.random((32, 16)) > 0.8).astype(np.uint8)
    pred = (rng.random((32, 16)) > 0.8).astype(np.uint8)
    perm = rng.permutation(16)
    assert metrics.f1_score(pred, ref) == metrics.f1_score(pred[:, perm], ref[:, perm])
    assert metrics.error_rate(pred, ref) == metrics.error_rate(pred[:, perm], ref[:, perm])


def test_metrics_match_bruteforce_oracle_randomized():
    rng = np.random.default_rng(2)
    for _ in range(200):
        density = rng.random() * 0.6 + 0.1
        ref = (rng.random((32, 16)) < density).astype(np.uint8)
        pred = (rng.random((32, 16)) < density).astype(np.uint8)
        want_f1, want_er = naive_frame_metrics(pred, ref)
        assert metrics.f1_score(pred, ref) == want_f1
        if want_er is None:
            with pytest.raises(NoReferenceError):
                metrics.error_rate(pred, ref)
        else:
            assert metrics.error_rate(pred, ref) == want_er


def test_concat_frames():
    a = (np.ones((2, 3)), np.zeros((2, 3)))
    b = (np.zeros((3, 3)), np.ones((3, 3)))
    preds, refs = metrics.concat_frames([a, b])
    assert preds.shape == (5, 3)
    assert refs.shape == (5, 3)
    assert preds[:2].all() and not preds[2:].any()
