"""Frame-wise F1 score and error rate for multi-label activity matrices.

Both metrics run over binarized [frames, classes] matrices and treat every
(frame, class) decision equally (micro-average).  The error rate uses the
per-frame substitution/deletion/insertion decomposition: substitutions pair
up false negatives with false positives inside one frame, the leftovers are
deletions or insertions, and the sum is normalized by the number of active
reference entries.
"""

import numpy as np

from .errors import NoReferenceError, ShapeError


def binarize(probabilities, threshold=0.5):
    """1 where the value strictly exceeds the threshold, else 0."""
    probs = np.asarray(probabilities)
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise ShapeError("probabilities must lie in [0, 1]")
    return (probs > threshold).astype(np.uint8)


def _check_binary_pair(pred, ref):
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise ShapeError(f"prediction shape {pred.shape} != reference shape {ref.shape}")
    if pred.ndim != 2:
        raise ShapeError(f"expected [frames, classes] matrices, got {pred.shape}")
    for name, m in (("prediction", pred), ("reference", ref)):
        if m.size and not np.isin(m, (0, 1)).all():
            raise ShapeError(f"{name} matrix is not binary")
    return pred.astype(np.int64), ref.astype(np.int64)


def frame_counts(pred, ref):
    """(TP, FP, FN, N_ref) pooled over all frames and classes."""
    pred, ref = _check_binary_pair(pred, ref)
    tp = int(((pred == 1) & (ref == 1)).sum())
    fp = int(((pred == 1) & (ref == 0)).sum())
    fn = int(((pred == 0) & (ref == 1)).sum())
    return tp, fp, fn, int(ref.sum())


def f1_score(pred, ref):
    """2*TP / (2*TP + FP + FN); defined as 1.0 when both sides are empty."""
    tp, fp, fn, _ = frame_counts(pred, ref)
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def error_rate(pred, ref):
    """Per-frame (substitutions + deletions + insertions) / active references."""
    pred, ref = _check_binary_pair(pred, ref)
    n_ref = int(ref.sum())
    if n_ref == 0:
        raise NoReferenceError("error rate is undefined: reference has no active entries")
    fn_t = ((pred == 0) & (ref == 1)).sum(axis=1)
    fp_t = ((pred == 1) & (ref == 0)).sum(axis=1)
    subs = np.minimum(fn_t, fp_t).sum()
    dels = np.maximum(fn_t - fp_t, 0).sum()
    ins = np.maximum(fp_t - fn_t, 0).sum()
    return float(subs + dels + ins) / n_ref


def concat_frames(pairs):
    """Stack (pred, ref) pairs along the frame axis for split-level metrics."""
    preds = np.concatenate([np.asarray(p) for p, _ in pairs], axis=0)
    refs = np.concatenate([np.asarray(r) for _, r in pairs], axis=0)
    return preds, refs
