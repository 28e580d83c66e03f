"""Dense n-dimensional arrays with reverse-mode differentiation hooks.

A :class:`Tensor` wraps a row-major numpy array (float64 by default, float32
as an option).  Tensors produced by operations are treated as immutable; the
only sanctioned mutation is the in-place parameter update performed by the
optimizer, which requires exclusive access to the tensor.

Every operation that participates in differentiation records itself on its
result: the result tensor keeps references to its parent tensors, a backward
rule, and a global sequence number.  The chain of these records *is* the
computation record that :func:`sedconv.autodiff.backward` replays.
"""

import itertools
import threading

import numpy as np

from .errors import ShapeError

DEFAULT_DTYPE = np.float64

_SEQ = itertools.count()

_grad_state = threading.local()


def grad_enabled():
    return getattr(_grad_state, "enabled", True)


class no_grad:
    """Context manager that disables recording of backward rules.

    Used for evaluation passes where building the graph would only
    waste memory.
    """

    def __enter__(self):
        self._prev = grad_enabled()
        _grad_state.enabled = False
        return self

    def __exit__(self, *exc):
        _grad_state.enabled = self._prev
        return False


class Tensor:
    """Row-major dense array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = next(_SEQ)

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self):
        """Copy of the stored values as a plain array."""
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------

    def is_leaf(self):
        return not self._parents

    # -- shape ops -----------------------------------------------------

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self):
        return tensor_sum(self)

    # -- arithmetic ----------------------------------------------------
    # Element-wise only; the sole broadcast allowed is a python scalar.

    def __add__(self, other):
        return _elementwise_binary("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _elementwise_binary("sub", self, other)

    def __rsub__(self, other):
        return _elementwise_binary("rsub", self, other)

    def __mul__(self, other):
        return _elementwise_binary("mul", self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return _elementwise_binary("mul", self, -1.0)


def make_node(data, parents, backward):
    """Wrap ``data`` as a Tensor recording ``backward`` when tracking is on.

    ``backward(grad_out)`` must return one gradient array (or None) per
    parent, in order.
    """
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward if track else None
    out._seq = next(_SEQ)
    return out


def _coerce_operand(a, b):
    """Validate the (tensor, tensor-or-scalar) operand pair."""
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise ShapeError(f"elementwise shapes differ: {a.shape} vs {b.shape}")
        return b, True
    if np.isscalar(b):
        return float(b), False
    raise TypeError(f"unsupported operand type {type(b).__name__}")


def _elementwise_binary(op, a, b):
    b, b_is_tensor = _coerce_operand(a, b)
    bdata = b.data if b_is_tensor else b
    if op == "add":
        data = a.data + bdata
        grads = (lambda g: g, lambda g: g)
    elif op == "sub":
        data = a.data - bdata
        grads = (lambda g: g, lambda g: -g)
    elif op == "rsub":
        data = bdata - a.data
        grads = (lambda g: -g, lambda g: g)
    elif op == "mul":
        data = a.data * bdata
        grads = (lambda g: g * bdata, lambda g: g * a.data)
    else:  # pragma: no cover
        raise ValueError(op)

    if b_is_tensor:
        parents = (a, b)

        def backward(g):
            return grads[0](g), grads[1](g)

    else:
        parents = (a,)

        def backward(g):
            return (grads[0](g),)

    return make_node(data, parents, backward)


def scale(t, factor):
    """Multiply every element by a scalar."""
    return _elementwise_binary("mul", t, factor)


def reshape(t, shape):
    """Reinterpret the flat row-major data under a new shape."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeError(f"reshape dimensions must be positive, got {shape}")
    if int(np.prod(shape)) != t.size:
        raise ShapeError(
            f"cannot reshape {t.shape} (size {t.size}) to {shape} (size {int(np.prod(shape))})"
        )
    old_shape = t.shape

    def backward(g):
        return (g.reshape(old_shape),)

    return make_node(t.data.reshape(shape), (t,), backward)


def transpose(t, axes):
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise ShapeError(f"axes {axes} are not a permutation of {t.ndim} dimensions")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return make_node(np.ascontiguousarray(t.data.transpose(axes)), (t,), backward)


def tensor_sum(t):
    """Sum of all elements, as a scalar tensor."""
    shape = t.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.asarray(t.data.sum()), (t,), backward)
