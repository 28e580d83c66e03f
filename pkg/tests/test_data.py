import numpy as np
import pytest

from sedconv import data
from sedconv.errors import ConfigError, DataFormatError, ShapeError


def small_dataset(**kw):
    defaults = dict(
        num_mixtures=5, classes=4, max_polyphony=2, seed=3,
        frames_per_mixture=256, num_features=12, chunk_frames=128,
    )
    defaults.update(kw)
    return data.synthesize_dataset(**defaults)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------


def test_generation_is_deterministic():
    a = small_dataset()
    b = small_dataset()
    for split_a, split_b in zip(a, b):
        assert len(split_a.samples) == len(split_b.samples)
        for sa, sb in zip(split_a.samples, split_b.samples):
            assert np.array_equal(sa.features, sb.features)
            assert np.array_equal(sa.targets, sb.targets)


def test_different_seed_changes_data():
    a = small_dataset(seed=3)
    b = small_dataset(seed=4)
    assert not np.array_equal(a[0].samples[0].features, b[0].samples[0].features)


def test_polyphony_cap_respected():
    for polyphony in (1, 2, 5):
        splits = small_dataset(max_polyphony=polyphony, classes=8)
        for split in splits:
            for sample in split.samples:
                assert sample.targets.sum(axis=1).max() <= polyphony


def test_targets_are_binary_and_shaped():
    train, val, test = small_dataset()
    for split in (train, val, test):
        for sample in split.samples:
            assert sample.features.shape == (128, 12)
            assert sample.targets.shape == (128, 4)
            assert set(np.unique(sample.targets)) <= {0, 1}


def test_split_sizes_60_20_20():
    assert data.split_counts(20) == (12, 4, 4)
    assert data.split_counts(5) == (3, 1, 1)
    train, val, test = small_dataset(num_mixtures=10)
    # 256-frame mixtures, 128-frame chunks, 50% overlap -> 3 chunks each
    assert len(train.samples) == 6 * 3
    assert len(val.samples) == 2 * 3
    assert len(test.samples) == 2 * 3


def test_splits_disjoint_by_mixture():
    # No feature row of a test chunk appears anywhere in the train split.
    train, _, test = small_dataset(noise_level=0.2)
    train_rows = {row.tobytes() for s in train.samples for row in s.features}
    test_rows = {row.tobytes() for s in test.samples for row in s.features}
    assert not (train_rows & test_rows)


def test_single_class_frames_correlate_with_own_prototype():
    classes, features = 6, 24
    protos = data.class_prototypes(classes, features, seed=11)
    feats, targs = data.synthesize_mixture(
        11, 0, frames=2048, classes=classes, num_features=features,
        max_polyphony=3, noise_level=0.05,
    )
    checked = 0
    for t in range(feats.shape[0]):
        active = np.nonzero(targs[t])[0]
        if len(active) != 1:
            continue
        correlations = [
            float(np.corrcoef(feats[t], protos[c])[0, 1]) for c in range(classes)
        ]
        assert int(np.argmax(correlations)) == active[0]
        checked += 1
    assert checked > 50


def test_generator_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        small_dataset(num_mixtures=4)
    with pytest.raises(ConfigError):
        small_dataset(max_polyphony=0)
    with pytest.raises(ConfigError):
        small_dataset(max_polyphony=9)  # > classes
    with pytest.raises(ConfigError):
        small_dataset(frames_per_mixture=64)  # shorter than one chunk


# ---------------------------------------------------------------------------
# chunking
# ---------------------------------------------------------------------------


def test_chunk_starts_every_half_window():
    feats = np.arange(2048 * 3, dtype=np.float64).reshape(2048, 3)
    targs = np.zeros((2048, 2), dtype=np.uint8)
    targs[:, 0] = np.arange(2048) % 2
    chunks = data.chunk_sequences(feats, targs, frames=1024, overlap=0.5)
    assert len(chunks) == 3
    for k, start in enumerate((0, 512, 1024)):
        assert np.array_equal(chunks[k].features, feats[start : start + 1024])
        assert np.array_equal(chunks[k].targets, targs[start : start + 1024])


def test_chunk_exact_length_gives_one():
    feats = np.zeros((1024, 4))
    targs = np.zeros((1024, 2), dtype=np.uint8)
    assert len(data.chunk_sequences(feats, targs)) == 1


def test_chunk_short_source_gives_none():
    feats = np.zeros((1023, 4))
    targs = np.zeros((1023, 2), dtype=np.uint8)
    assert data.chunk_sequences(feats, targs) == []


def test_chunk_rejects_bad_overlap():
    feats = np.zeros((100, 2))
    targs = np.zeros((100, 1), dtype=np.uint8)
    with pytest.raises(ConfigError):
        data.chunk_sequences(feats, targs, frames=10, overlap=1.0)


def test_chunk_alignment_property():
    rng = np.random.default_rng(12)
    feats = rng.standard_normal((700, 5))
    targs = (rng.random((700, 3)) > 0.5).astype(np.uint8)
    chunks = data.chunk_sequences(feats, targs, frames=256, overlap=0.5)
    starts = [0, 128, 256, 384]
    assert len(chunks) == len(starts)
    for chunk, start in zip(chunks, starts):
        for t in (0, 100, 255):
            assert np.array_equal(chunk.targets[t], targs[start + t])


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    train, _, _ = small_dataset()
    path = tmp_path / "train.sedfeat"
    data.save_features(path, train.samples)
    loaded = data.load_features(path)
    assert len(loaded) == len(train.samples)
    for a, b in zip(train.samples, loaded):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.targets, b.targets)


def test_save_twice_is_byte_identical(tmp_path):
    train, _, _ = small_dataset()
    p1, p2 = tmp_path / "a.sedfeat", tmp_path / "b.sedfeat"
    data.save_features(p1, train.samples)
    data.save_features(p2, train.samples)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.sedfeat"
    path.write_bytes(b"SEDFEATX" + b"\x00" * 16)
    with pytest.raises(DataFormatError, match="magic"):
        data.load_features(path)


def test_truncation_reports_expected_vs_actual(tmp_path):
    train, _, _ = small_dataset()
    path = tmp_path / "t.sedfeat"
    data.save_features(path, train.samples)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 100])
    with pytest.raises(DataFormatError) as err:
        data.load_features(path)
    message = str(err.value)
    assert "expected" in message and "byte offset" in message


def test_non_binary_target_byte_rejected_with_offset(tmp_path):
    train, _, _ = small_dataset()
    path = tmp_path / "t.sedfeat"
    data.save_features(path, train.samples)
    blob = bytearray(path.read_bytes())
    t_len, n, c = 128, 12, 4
    first_target = len(data.MAGIC) + 16 + t_len * n * 4
    blob[first_target] = 7
    path.write_bytes(bytes(blob))
    with pytest.raises(DataFormatError) as err:
        data.load_features(path)
    assert err.value.offset == first_target
    assert "7" in str(err.value)


def test_features_survive_float32_round_trip(tmp_path):
    # generator emits float32-representable values, so equality is exact
    train, _, _ = small_dataset()
    sample = train.samples[0]
    assert np.array_equal(sample.features, sample.features.astype(np.float32).astype(np.float64))


def test_generator_config_parsing(tmp_path):
    path = tmp_path / "gen.cfg"
    path.write_text("mixtures=8\nseed=5  # comment\n\n# full-line comment\nchunk=64\n")
    pairs = data.load_generator_config(path)
    assert pairs == {"mixtures": "8", "seed": "5", "chunk": "64"}
    bad = tmp_path / "bad.cfg"
    bad.write_text("mixtures 8\n")
    with pytest.raises(DataFormatError):
        data.load_generator_config(bad)


def test_sample_invariant_checks():
    with pytest.raises(ShapeError):
        data.SequenceSample(np.zeros((4, 3)), np.zeros((5, 2), dtype=np.uint8))
