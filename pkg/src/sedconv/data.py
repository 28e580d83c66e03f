"""Synthetic polyphonic sound-event data and the feature-file format.

The generator fabricates mixtures the same shape as real feature extracts:
each class owns a fixed spectral prototype (a smooth bump over the feature
bands), events are placed with exponential inter-onset gaps and bounded
durations, frame-level polyphony is clamped, and the features of a frame are
the sum of the prototypes active in it plus seeded noise.  Everything is
deterministic given the seed.

Feature files (``SEDFEAT1``) carry already-extracted features:

    8 bytes   magic "SEDFEAT1"
    4 x u32   little-endian: num_samples, T, N, C
    per sample: T*N little-endian float32 features,
                then T*C bytes of {0, 1} targets
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError, ShapeError

MAGIC = b"SEDFEAT1"

DEFAULT_FRAMES_PER_MIXTURE = 2048
DEFAULT_CLASSES = 16
DEFAULT_FEATURES = 40
DEFAULT_CHUNK = 1024
DEFAULT_OVERLAP = 0.5


@dataclass
class SequenceSample:
    """One training pair: [T, N] float features, [T, C] binary targets."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.targets.ndim != 2:
            raise ShapeError("features and targets must both be 2D")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ShapeError(
                f"features have {self.features.shape[0]} frames, "
                f"targets have {self.targets.shape[0]}"
            )

    @property
    def frames(self):
        return self.features.shape[0]


@dataclass
class DatasetSplit:
    partition: str  # train | validation | test
    samples: list


def class_prototypes(classes, num_features, seed):
    """Fixed per-class spectral bumps, deterministic in the seed.

    Each class gets a Gaussian bump centred on its own band with a
    class-specific width, so single-class frames correlate most strongly
    with their own prototype.
    """
    rng = np.random.default_rng([seed, 101])
    bands = np.arange(num_features, dtype=np.float64)
    centers = (np.arange(classes) + 0.5) * num_features / classes
    protos = np.empty((classes, num_features), dtype=np.float64)
    for c in range(classes):
        width = 1.0 + 1.5 * rng.random()
        protos[c] = np.exp(-0.5 * ((bands - centers[c]) / width) ** 2)
    return protos


def _event_track(rng, frames, mean_gap, dur_lo, dur_hi):
    """Candidate (onset, offset) intervals for one class."""
    intervals = []
    t = 0.0
    while True:
        t += rng.exponential(mean_gap)
        onset = int(t)
        duration = int(rng.integers(dur_lo, dur_hi + 1))
        if onset + duration > frames:
            break
        intervals.append((onset, onset + duration))
        t = float(onset + duration)
    return intervals


def synthesize_mixture(
    seed,
    mixture_index,
    frames=DEFAULT_FRAMES_PER_MIXTURE,
    classes=DEFAULT_CLASSES,
    num_features=DEFAULT_FEATURES,
    max_polyphony=5,
    mean_gap=260.0,
    duration_range=(40, 180),
    noise_level=0.08,
):
    """One full-length mixture: (features [frames, N], targets [frames, C])."""
    rng = np.random.default_rng([seed, 1 + mixture_index])
    targets = np.zeros((frames, classes), dtype=np.uint8)
    polyphony = np.zeros(frames, dtype=np.int64)

    events = []
    for c in range(classes):
        for onset, offset in _event_track(rng, frames, mean_gap, *duration_range):
            events.append((onset, offset, c))
    events.sort()
    for onset, offset, c in events:
        if polyphony[onset:offset].max(initial=0) >= max_polyphony:
            continue  # would exceed the polyphony cap somewhere: drop event
        targets[onset:offset, c] = 1
        polyphony[onset:offset] += 1

    protos = class_prototypes(classes, num_features, seed)
    features = targets.astype(np.float64) @ protos
    features += noise_level * rng.standard_normal((frames, num_features))
    # Quantize to the file format's precision so save/load round-trips exactly.
    features = features.astype(np.float32).astype(np.float64)
    return features, targets


def chunk_sequences(features, targets, frames=DEFAULT_CHUNK, overlap=DEFAULT_OVERLAP):
    """Cut one long sequence into fixed-length windows.

    Windows start every ``frames * (1 - overlap)`` source frames; a final
    partial window is dropped.
    """
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must be in [0, 1), got {overlap}")
    if features.shape[0] != targets.shape[0]:
        raise ShapeError("features and targets must cover the same frames")
    hop = max(1, int(round(frames * (1.0 - overlap))))
    total = features.shape[0]
    samples = []
    start = 0
    while start + frames <= total:
        samples.append(
            SequenceSample(
                features[start : start + frames].copy(),
                targets[start : start + frames].copy(),
            )
        )
        start += hop
    return samples


def split_counts(num_mixtures):
    """60/20/20 split by mixture count."""
    train = (num_mixtures * 3) // 5
    val = num_mixtures // 5
    return train, val, num_mixtures - train - val


def synthesize_dataset(
    num_mixtures=20,
    classes=DEFAULT_CLASSES,
    max_polyphony=5,
    seed=0,
    frames_per_mixture=DEFAULT_FRAMES_PER_MIXTURE,
    num_features=DEFAULT_FEATURES,
    chunk_frames=DEFAULT_CHUNK,
    overlap=DEFAULT_OVERLAP,
    mean_gap=260.0,
    duration_range=(40, 180),
    noise_level=0.08,
):
    """Deterministic train/validation/test splits, disjoint by mixture."""
    if num_mixtures < 5:
        raise ConfigError(f"need at least 5 mixtures for a 60/20/20 split, got {num_mixtures}")
    if not 1 <= max_polyphony <= classes:
        raise ConfigError(
            f"max_polyphony must be in [1, {classes}] for {classes} classes, got {max_polyphony}"
        )
    if frames_per_mixture < chunk_frames:
        raise ConfigError(
            f"mixtures of {frames_per_mixture} frames are shorter than one {chunk_frames}-frame chunk"
        )

    per_mixture = []
    for m in range(num_mixtures):
        features, targets = synthesize_mixture(
            seed,
            m,
            frames=frames_per_mixture,
            classes=classes,
            num_features=num_features,
            max_polyphony=max_polyphony,
            mean_gap=mean_gap,
            duration_range=duration_range,
            noise_level=noise_level,
        )
        per_mixture.append(chunk_sequences(features, targets, chunk_frames, overlap))

    n_train, n_val, _ = split_counts(num_mixtures)
    splits = (
        DatasetSplit("train", [s for chunks in per_mixture[:n_train] for s in chunks]),
        DatasetSplit("validation", [s for chunks in per_mixture[n_train : n_train + n_val] for s in chunks]),
        DatasetSplit("test", [s for chunks in per_mixture[n_train + n_val :] for s in chunks]),
    )
    return splits


# ---------------------------------------------------------------------------
# SEDFEAT1 files
# ---------------------------------------------------------------------------


def save_features(path, samples):
    if not samples:
        raise ConfigError("refusing to write an empty feature file")
    t_len, n = samples[0].features.shape
    c = samples[0].targets.shape[1]
    for s in samples:
        if s.features.shape != (t_len, n) or s.targets.shape != (t_len, c):
            raise ShapeError("all samples in one file must share T, N, C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", len(samples), t_len, n, c))
        for s in samples:
            fh.write(np.ascontiguousarray(s.features, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(s.targets, dtype=np.uint8).tobytes())


def load_features(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise DataFormatError(f"bad magic {blob[:8]!r}, expected {MAGIC!r}", offset=0)
    offset = len(MAGIC)
    if len(blob) < offset + 16:
        raise DataFormatError(
            f"truncated header: expected {offset + 16} bytes, file has {len(blob)}", offset=offset
        )
    num, t_len, n, c = struct.unpack_from("<IIII", blob, offset)
    offset += 16

    feat_bytes = t_len * n * 4
    targ_bytes = t_len * c
    samples = []
    for i in range(num):
        end = offset + feat_bytes + targ_bytes
        if len(blob) < end:
            raise DataFormatError(
                f"truncated in sample {i}: expected {end} bytes, file has {len(blob)}",
                offset=offset,
            )
        features = (
            np.frombuffer(blob, dtype="<f4", count=t_len * n, offset=offset)
            .reshape(t_len, n)
            .astype(np.float64)
        )
        targets = np.frombuffer(
            blob, dtype=np.uint8, count=t_len * c, offset=offset + feat_bytes
        ).reshape(t_len, c)
        bad = np.nonzero(targets > 1)
        if bad[0].size:
            first = offset + feat_bytes + bad[0][0] * c + bad[1][0]
            raise DataFormatError(
                f"target byte is {targets[bad[0][0], bad[1][0]]}, not 0/1", offset=int(first)
            )
        samples.append(SequenceSample(features, targets.copy()))
        offset = end
    if offset != len(blob):
        raise DataFormatError(
            f"{len(blob) - offset} trailing bytes after {num} samples", offset=offset
        )
    return samples


def load_generator_config(path):
    """Plain-text key=value generator parameters; '#' starts a comment."""
    pairs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataFormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            pairs[key.strip()] = value.strip()
    return pairs
