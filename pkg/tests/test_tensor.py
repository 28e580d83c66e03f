import numpy as np
import pytest

from sedconv.errors import ShapeError
from sedconv.tensor import Tensor, no_grad, reshape, scale, transpose

from reference_impls import reshape_channels_to_frames


def test_reshape_row_major_identity():
    t = Tensor(np.arange(1, 7).reshape(2, 3))
    r = t.reshape((3, 2))
    assert r.shape == (3, 2)
    assert np.array_equal(r.data.reshape(-1), t.data.reshape(-1))


def test_reshape_rejects_product_mismatch():
    t = Tensor(np.zeros((256, 1024, 4)))
    # note: (256, 1024, 4) -> (1024, 1024) is actually size-preserving
    # (both are 2**20 elements), so it must be accepted ...
    assert t.reshape((1024, 1024)).shape == (1024, 1024)
    # ... while a genuine product mismatch is rejected.
    with pytest.raises(ShapeError):
        t.reshape((1024, 1023))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))).reshape((7,))


def test_channel_to_frame_reshape_matches_hand_loop():
    # [K_o, T, W] -> [T, K_o*W] goes through a transpose then a reshape.
    x = np.arange(1, 13, dtype=float).reshape(2, 3, 2)
    t = Tensor(x)
    got = t.transpose((1, 0, 2)).reshape((3, 4))
    expected = reshape_channels_to_frames(x)
    assert np.array_equal(got.data, expected)
    assert np.array_equal(expected, [[1, 2, 7, 8], [3, 4, 9, 10], [5, 6, 11, 12]])


def test_reshape_round_trip_exact():
    rng = np.random.default_rng(0)
    t = Tensor(rng.standard_normal((4, 6)))
    back = t.reshape((8, 3)).reshape(t.shape)
    assert np.array_equal(back.data, t.data)


def test_elementwise_add_sub_mul():
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 4.0])
    assert np.array_equal((a + b).data, [4.0, 6.0])
    assert np.array_equal((a - a).data, [0.0, 0.0])
    assert np.array_equal((a * 0.0).data, [0.0, 0.0])
    assert np.array_equal(scale(b, 2.0).data, [6.0, 8.0])
    assert np.array_equal((-a).data, [-1.0, -2.0])
    assert np.array_equal((1.0 - a).data, [0.0, -1.0])


def test_elementwise_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]) + Tensor([[1.0], [2.0]])


def test_sub_random_self_is_zero():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((5, 7)))
    assert np.array_equal((x - x).data, np.zeros((5, 7)))


def test_elementwise_commutes_with_reshape():
    rng = np.random.default_rng(2)
    a = Tensor(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal((3, 4)))
    lhs = (a + b).reshape((6, 2))
    rhs = a.reshape((6, 2)) + b.reshape((6, 2))
    assert np.array_equal(lhs.data, rhs.data)


def test_finite_outputs_on_finite_inputs():
    rng = np.random.default_rng(3)
    a = Tensor(rng.standard_normal((10, 10)) * 1e6)
    b = Tensor(rng.standard_normal((10, 10)) * 1e6)
    for out in (a + b, a - b, a * b, scale(a, 1e-3), a.reshape((100,)), a.sum()):
        assert np.isfinite(out.data).all()


def test_no_grad_blocks_recording():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = a * 2.0
    assert not out.requires_grad
    assert out._backward is None
    tracked = a * 2.0
    assert tracked.requires_grad


def test_transpose_rejects_bad_axes():
    t = Tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        transpose(t, (0, 0))


def test_dtype_option():
    t = Tensor([1.0, 2.0], dtype=np.float32)
    assert t.dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64
