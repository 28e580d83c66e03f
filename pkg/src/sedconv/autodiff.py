"""Reverse-mode differentiation over recorded operations.

The record of executed operations lives on the result tensors themselves
(:mod:`sedconv.tensor` attaches parents, a backward rule, and a creation
sequence number to every tracked result).  :func:`backward` replays that
record from a scalar loss and returns a :class:`GradientSet`.

Gradients are accumulated in a fixed order (reverse creation order), so
repeated calls on the same graph are bit-identical.
"""

import numpy as np

from .errors import GraphError
from .tensor import Tensor


class GradientSet:
    """Mapping from parameter tensors to gradient arrays of the same shape."""

    def __init__(self):
        self._grads = {}  # id(tensor) -> (tensor, grad array)

    def _put(self, tensor, grad):
        self._grads[id(tensor)] = (tensor, grad)

    def __contains__(self, tensor):
        return id(tensor) in self._grads

    def __len__(self):
        return len(self._grads)

    def grad(self, tensor):
        try:
            return self._grads[id(tensor)][1]
        except KeyError:
            raise GraphError("tensor has no recorded gradient") from None

    def items(self):
        return [(t, g) for t, g in self._grads.values()]


def _reachable_nodes(loss):
    """All tensors the loss depends on, with their creation order intact."""
    seen = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen[id(node)] = node
        stack.extend(node._parents)
    # Creation order is a valid topological order: parents exist before
    # their results.
    return sorted(seen.values(), key=lambda n: n._seq)


def backward(loss, params=None):
    """Differentiate a recorded scalar ``loss``.

    Returns gradients for every reachable leaf tensor that requires them,
    or exactly for ``params`` when given.  Gradients accumulate additively
    when a tensor feeds the loss through several paths.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    if loss.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is not connected to any tensor requiring gradients")

    nodes = _reachable_nodes(loss)
    grads = {id(loss): np.ones_like(loss.data)}

    for node in reversed(nodes):
        if node._backward is None:
            continue  # leaf: keep its accumulated gradient for collection
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            # Rebinding instead of += keeps aliased arrays intact (a rule
            # may hand the same array to several parents).
            grads[id(parent)] = pg if acc is None else acc + pg

    result = GradientSet()
    if params is None:
        for node in nodes:
            if node.is_leaf() and node.requires_grad and id(node) in grads:
                result._put(node, grads[id(node)])
    else:
        reachable = {id(n) for n in nodes}
        for i, p in enumerate(params):
            if id(p) not in reachable:
                raise GraphError(f"parameter {i} is detached from the loss graph")
            result._put(p, grads.get(id(p), np.zeros_like(p.data)))
    return result


def finite_difference_check(f, params, h=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic zero-argument callable returning a scalar
    loss tensor that depends on ``params``.  Relative error per element is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``.
    """
    first = f()
    second = f()
    if not np.array_equal(first.data, second.data):
        raise GraphError("f is not deterministic: repeated evaluations differ")

    analytic = backward(first, params)
    worst = 0.0
    for p in params:
        ag = analytic.grad(p)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = float(ag.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
