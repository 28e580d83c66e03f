"""Forward and backward rules for every layer in the model family.

Convolutions are cross-correlations by default (the index arithmetic used
throughout the model definitions); setting ``flip=True`` on a kernel flips
it spatially, giving the textbook convolution.  Dense and dilated
convolutions share one core routine, so a dilation of (1, 1) is bit-identical
to the plain convolution.

All operations are pure functions of (input, parameters, rng state) and
build one node each on the differentiation record.  Inputs may be given
per-sample (``[C, H, W]``) or batched (``[B, C, H, W]``); the result rank
matches the input rank.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .tensor import DEFAULT_DTYPE, Tensor, make_node

TRAIN = "train"
EVAL = "eval"


def _check_mode(mode):
    if mode not in (TRAIN, EVAL):
        raise ConfigError(f"mode must be '{TRAIN}' or '{EVAL}', got {mode!r}")


def _pair(value, name):
    try:
        a, b = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a pair of integers, got {value!r}") from None
    return a, b


def stable_sigmoid(x):
    """Logistic function without overflow for large |x|."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass
class DenseConvKernel:
    """Full 2D convolution: one [K_i, K_h, K_w] kernel per output channel."""

    weights: Tensor  # [K_o, K_i, K_h, K_w]
    bias: Tensor  # [K_o]
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    flip: bool = False

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"dense conv weights must be 4D, got {self.weights.shape}")
        ko, _, kh, kw = self.weights.shape
        if kh < 1 or kw < 1:
            raise ShapeError(f"kernel dims must be >= 1, got {kh}x{kw}")
        if self.bias.shape != (ko,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({ko},)")
        self.stride = _pair(self.stride, "stride")
        self.padding = _pair(self.padding, "padding")
        if min(self.stride) < 1:
            raise ConfigError(f"stride must be positive, got {self.stride}")
        if min(self.padding) < 0:
            raise ConfigError(f"padding must be non-negative, got {self.padding}")


@dataclass
class DepthwiseSeparableKernel:
    """Spatial per-channel stage followed by a 1x1 cross-channel stage.

    ``dilation`` applies to the spatial stage only (used when this kernel
    serves as the temporal module of the fully separable model).
    """

    spatial: Tensor  # [K_i, K_h, K_w]
    pointwise: Tensor  # [K_o, K_i]
    bias_spatial: Tensor  # [K_i]
    bias_pointwise: Tensor  # [K_o]
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    dilation: tuple = (1, 1)
    flip: bool = False

    def __post_init__(self):
        if self.spatial.ndim != 3 or self.pointwise.ndim != 2:
            raise ShapeError("spatial must be [K_i,K_h,K_w] and pointwise [K_o,K_i]")
        ki = self.spatial.shape[0]
        if self.pointwise.shape[1] != ki:
            raise ShapeError(
                f"pointwise inner dim {self.pointwise.shape[1]} != spatial channels {ki}"
            )
        if self.bias_spatial.shape != (ki,):
            raise ShapeError(f"bias_spatial shape {self.bias_spatial.shape} != ({ki},)")
        ko = self.pointwise.shape[0]
        if self.bias_pointwise.shape != (ko,):
            raise ShapeError(f"bias_pointwise shape {self.bias_pointwise.shape} != ({ko},)")
        self.stride = _pair(self.stride, "stride")
        self.padding = _pair(self.padding, "padding")
        self.dilation = _pair(self.dilation, "dilation")
        if min(self.stride) < 1 or min(self.dilation) < 1:
            raise ConfigError("stride and dilation must be positive")


@dataclass
class DilatedConvKernel:
    """Dense convolution whose taps are spread ``dilation`` elements apart.

    Unit stride; padding applies before the spread taps are read.
    """

    weights: Tensor  # [K'_o, K'_i, K'_h, K'_w]
    bias: Tensor  # [K'_o]
    dilation: tuple = (1, 1)
    padding: tuple = (0, 0)
    flip: bool = False

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"dilated conv weights must be 4D, got {self.weights.shape}")
        ko = self.weights.shape[0]
        if self.bias.shape != (ko,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({ko},)")
        self.dilation = _pair(self.dilation, "dilation")
        self.padding = _pair(self.padding, "padding")
        if min(self.dilation) < 1:
            raise ConfigError(f"dilation rates must be >= 1, got {self.dilation}")
        if min(self.padding) < 0:
            raise ConfigError(f"padding must be non-negative, got {self.padding}")


@dataclass
class GruParams:
    """Gated recurrent unit: three input matrices, three recurrent matrices,
    one bias vector per gate."""

    w_update: Tensor  # [H_out, H_in]
    w_reset: Tensor
    w_cand: Tensor
    u_update: Tensor  # [H_out, H_out]
    u_reset: Tensor
    u_cand: Tensor
    b_update: Tensor  # [H_out]
    b_reset: Tensor
    b_cand: Tensor

    def __post_init__(self):
        h_out, h_in = self.w_update.shape
        for name in ("w_reset", "w_cand"):
            if getattr(self, name).shape != (h_out, h_in):
                raise ShapeError(f"{name} shape mismatch")
        for name in ("u_update", "u_reset", "u_cand"):
            if getattr(self, name).shape != (h_out, h_out):
                raise ShapeError(f"{name} must be [H_out, H_out]")
        for name in ("b_update", "b_reset", "b_cand"):
            if getattr(self, name).shape != (h_out,):
                raise ShapeError(f"{name} must be [H_out]")

    @property
    def input_size(self):
        return self.w_update.shape[1]

    @property
    def hidden_size(self):
        return self.w_update.shape[0]


@dataclass
class AffineClassifier:
    """Affine transform shared across time frames, before the sigmoid."""

    weight: Tensor  # [C, F_in]
    bias: Tensor  # [C]

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"classifier weight must be 2D, got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("classifier bias length must match output classes")


@dataclass
class BatchNormParams:
    """Per-channel normalization with learnable affine and running statistics."""

    gamma: Tensor  # [channels]
    beta: Tensor  # [channels]
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    def __post_init__(self):
        c = self.gamma.shape[0]
        if self.beta.shape != (c,) or self.running_mean.shape != (c,) or self.running_var.shape != (c,):
            raise ShapeError("batch-norm parameter shapes must all be [channels]")
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError(f"momentum must be in (0,1), got {self.momentum}")
        if np.any(self.running_var < 0):
            raise ConfigError("running_var must be non-negative")

    @classmethod
    def create(cls, channels, momentum=0.1, epsilon=1e-5, dtype=DEFAULT_DTYPE):
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            epsilon=epsilon,
        )

    @property
    def channels(self):
        return self.gamma.shape[0]


# ---------------------------------------------------------------------------
# convolution core
# ---------------------------------------------------------------------------


def _batchify(data, kind):
    if data.ndim == 3:
        return data[None], True
    if data.ndim == 4:
        return data, False
    raise ShapeError(f"{kind} input must be [C,H,W] or [B,C,H,W], got {data.shape}")


def conv_output_size(length, kernel, stride=1, padding=0, dilation=1):
    """Output length along one axis (floor semantics)."""
    effective = (kernel - 1) * dilation + 1
    padded = length + 2 * padding
    if padded < effective:
        raise ShapeError(
            f"effective kernel {effective} exceeds padded length {padded}"
        )
    return (padded - effective) // stride + 1


def _tap_slices(i, j, stride, dilation, oh, ow):
    sh, sw = stride
    dh, dw = dilation
    return (
        slice(i * dh, i * dh + sh * (oh - 1) + 1, sh),
        slice(j * dw, j * dw + sw * (ow - 1) + 1, sw),
    )


def _conv_core(xd, w, bias, stride, padding, dilation, flip):
    """Shared dense/dilated convolution over [B, Ci, H, W] arrays.

    Returns (out, backward) where backward maps the output gradient to
    (dx, dweights, dbias).  Implemented as a loop over the Kh*Kw kernel
    taps; each tap is one matrix contraction over the channel axis.
    """
    b, ci, h, wdt = xd.shape
    ko, kci, kh, kw = w.shape
    if ci != kci:
        raise ShapeError(f"input has {ci} channels, kernel expects {kci}")
    ph, pw = padding
    oh = conv_output_size(h, kh, stride[0], ph, dilation[0])
    ow = conv_output_size(wdt, kw, stride[1], pw, dilation[1])

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    wf = w[:, :, ::-1, ::-1] if flip else w

    acc = np.zeros((b, oh, ow, ko), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            hs, ws = _tap_slices(i, j, stride, dilation, oh, ow)
            acc += np.tensordot(xp[:, :, hs, ws], wf[:, :, i, j], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(0, 3, 1, 2)) + bias.reshape(1, -1, 1, 1)

    def backward(g):
        dbias = g.sum(axis=(0, 2, 3))
        dwf = np.empty_like(wf)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                hs, ws = _tap_slices(i, j, stride, dilation, oh, ow)
                sl = xp[:, :, hs, ws]
                dwf[:, :, i, j] = np.tensordot(g, sl, axes=([0, 2, 3], [0, 2, 3]))
                contrib = np.tensordot(g, wf[:, :, i, j], axes=([1], [0]))
                dxp[:, :, hs, ws] += contrib.transpose(0, 3, 1, 2)
        dx = dxp[:, :, ph : ph + h, pw : pw + wdt]
        dw = dwf[:, :, ::-1, ::-1] if flip else dwf
        return dx, dw, dbias

    return out, backward


def _dense_conv_node(x, weights, bias, stride, padding, dilation, flip, kind):
    xd, squeeze = _batchify(x.data, kind)
    out4, back4 = _conv_core(xd, weights.data, bias.data, stride, padding, dilation, flip)

    def backward(g):
        dx, dw, db = back4(g[None] if squeeze else g)
        return (dx[0] if squeeze else dx), dw, db

    return make_node(out4[0] if squeeze else out4, (x, weights, bias), backward)


def conv2d(x, kernel: DenseConvKernel):
    """Dense 2D convolution: sums over channels and both kernel axes."""
    return _dense_conv_node(
        x, kernel.weights, kernel.bias, kernel.stride, kernel.padding, (1, 1), kernel.flip, "conv2d"
    )


def dilated_conv2d(x, kernel: DilatedConvKernel):
    """Dense convolution with taps spread ``dilation`` elements apart.

    With dilation (1, 1) this is exactly :func:`conv2d`.
    """
    return _dense_conv_node(
        x, kernel.weights, kernel.bias, (1, 1), kernel.padding, kernel.dilation, kernel.flip, "dilated_conv2d"
    )


def depthwise_conv(x, kernel: DepthwiseSeparableKernel):
    """Per-channel spatial stage: channel c of the output depends only on
    channel c of the input."""
    xd, squeeze = _batchify(x.data, "depthwise_conv")
    b, ci, h, wdt = xd.shape
    ws = kernel.spatial.data
    if ci != ws.shape[0]:
        raise ShapeError(f"input has {ci} channels, depthwise kernel expects {ws.shape[0]}")
    _, kh, kw = ws.shape
    ph, pw = kernel.padding
    oh = conv_output_size(h, kh, kernel.stride[0], ph, kernel.dilation[0])
    ow = conv_output_size(wdt, kw, kernel.stride[1], pw, kernel.dilation[1])

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    wsf = ws[:, ::-1, ::-1] if kernel.flip else ws

    out = np.zeros((b, ci, oh, ow), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            hs, wsl = _tap_slices(i, j, kernel.stride, kernel.dilation, oh, ow)
            out += xp[:, :, hs, wsl] * wsf[:, i, j].reshape(1, -1, 1, 1)
    out += kernel.bias_spatial.data.reshape(1, -1, 1, 1)

    def backward(g):
        g4 = g[None] if squeeze else g
        dbias = g4.sum(axis=(0, 2, 3))
        dwsf = np.empty_like(wsf)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                hs, wsl = _tap_slices(i, j, kernel.stride, kernel.dilation, oh, ow)
                dwsf[:, i, j] = (g4 * xp[:, :, hs, wsl]).sum(axis=(0, 2, 3))
                dxp[:, :, hs, wsl] += g4 * wsf[:, i, j].reshape(1, -1, 1, 1)
        dx = dxp[:, :, ph : ph + h, pw : pw + wdt]
        dws = dwsf[:, ::-1, ::-1] if kernel.flip else dwsf
        return (dx[0] if squeeze else dx), dws, dbias

    result = out[0] if squeeze else out
    return make_node(result, (x, kernel.spatial, kernel.bias_spatial), backward)


def pointwise_conv(x, kernel: DepthwiseSeparableKernel):
    """1x1 cross-channel stage: mixes channels, leaves spatial dims alone."""
    xd, squeeze = _batchify(x.data, "pointwise_conv")
    wz = kernel.pointwise.data
    if xd.shape[1] != wz.shape[1]:
        raise ShapeError(f"input has {xd.shape[1]} channels, pointwise kernel expects {wz.shape[1]}")

    mixed = np.tensordot(xd, wz, axes=([1], [1]))  # [B, H, W, K_o]
    out = np.ascontiguousarray(mixed.transpose(0, 3, 1, 2))
    out += kernel.bias_pointwise.data.reshape(1, -1, 1, 1)

    def backward(g):
        g4 = g[None] if squeeze else g
        dbias = g4.sum(axis=(0, 2, 3))
        dwz = np.tensordot(g4, xd, axes=([0, 2, 3], [0, 2, 3]))
        dx = np.tensordot(g4, wz, axes=([1], [0])).transpose(0, 3, 1, 2)
        return (dx[0] if squeeze else np.ascontiguousarray(dx)), dwz, dbias

    result = out[0] if squeeze else out
    return make_node(result, (x, kernel.pointwise, kernel.bias_pointwise), backward)


def dws_conv(x, kernel: DepthwiseSeparableKernel):
    """Depthwise stage feeding the pointwise stage."""
    return pointwise_conv(depthwise_conv(x, kernel), kernel)


# ---------------------------------------------------------------------------
# pooling, normalization, activations, dropout
# ---------------------------------------------------------------------------


def maxpool2d(x, pool, stride=None):
    """Non-overlapping max pooling with floor truncation of ragged edges.

    Ties route the gradient to the first maximal element in row-major scan
    order within the window.
    """
    qh, qw = _pair(pool, "pool")
    if stride is not None and _pair(stride, "stride") != (qh, qw):
        raise ConfigError("pooling stride must equal the pool shape")
    xd, squeeze = _batchify(x.data, "maxpool2d")
    b, c, h, wdt = xd.shape
    if qh > h or qw > wdt:
        raise ShapeError(f"pool {qh}x{qw} larger than input {h}x{wdt}")
    oh, ow = h // qh, wdt // qw

    cropped = xd[:, :, : oh * qh, : ow * qw]
    win = cropped.reshape(b, c, oh, qh, ow, qw).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(b, c, oh, ow, qh * qw)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        g4 = g[None] if squeeze else g
        dflat = np.zeros((b, c, oh, ow, qh * qw), dtype=g4.dtype)
        np.put_along_axis(dflat, idx[..., None], g4[..., None], axis=-1)
        dwin = dflat.reshape(b, c, oh, ow, qh, qw).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros_like(xd)
        dx[:, :, : oh * qh, : ow * qw] = dwin.reshape(b, c, oh * qh, ow * qw)
        return (dx[0] if squeeze else dx),

    result = out[0] if squeeze else out
    return make_node(np.ascontiguousarray(result), (x,), backward)


def batchnorm2d(x, params: BatchNormParams, mode):
    """Per-channel normalization over the (batch, height, width) axes.

    Train mode normalizes by current batch statistics (population variance)
    and folds them into the running statistics; eval mode normalizes by the
    running statistics.
    """
    _check_mode(mode)
    xd, squeeze = _batchify(x.data, "batchnorm2d")
    b, c, h, wdt = xd.shape
    if b == 0:
        raise ShapeError("batch normalization over an empty batch")
    if c != params.channels:
        raise ShapeError(f"input has {c} channels, batch-norm expects {params.channels}")
    gamma = params.gamma.data
    beta = params.beta.data

    if mode == TRAIN:
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        params.running_mean *= 1.0 - params.momentum
        params.running_mean += params.momentum * mean
        params.running_var *= 1.0 - params.momentum
        params.running_var += params.momentum * var
    else:
        mean = params.running_mean
        var = params.running_var

    inv = 1.0 / np.sqrt(var + params.epsilon)
    xhat = (xd - mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    out = gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)

    def backward(g):
        g4 = g[None] if squeeze else g
        dgamma = (g4 * xhat).sum(axis=(0, 2, 3))
        dbeta = g4.sum(axis=(0, 2, 3))
        dxhat = g4 * gamma.reshape(1, -1, 1, 1)
        if mode == TRAIN:
            # Exact derivatives through the batch statistics.
            m = b * h * wdt
            s1 = dxhat.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
            dx = (inv.reshape(1, -1, 1, 1) / m) * (m * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv.reshape(1, -1, 1, 1)
        return (dx[0] if squeeze else dx), dgamma, dbeta

    result = out[0] if squeeze else out
    return make_node(result, (x, params.gamma, params.beta), backward)


def relu(x):
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make_node(np.maximum(x.data, 0.0), (x,), backward)


def sigmoid(x):
    out = stable_sigmoid(x.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return make_node(out, (x,), backward)


def tanh(x):
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return make_node(out, (x,), backward)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(kind, x):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}; choose from {sorted(_ACTIVATIONS)}") from None
    return fn(x)


def dropout(x, p, mode, rng=None):
    """Inverted dropout: survivors are scaled by 1/(1-p), eval is identity."""
    _check_mode(mode)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if mode == EVAL or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs an explicit rng")
    draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
    keep = (rng.random(x.shape, dtype=draw_dtype) >= p).astype(x.dtype) / (1.0 - p)

    def backward(g):
        return (g * keep,)

    return make_node(x.data * keep, (x,), backward)


# ---------------------------------------------------------------------------
# recurrence and classifier
# ---------------------------------------------------------------------------


def _batchify_seq(data, kind, feat):
    if data.ndim == 2:
        data = data[None]
        squeeze = True
    elif data.ndim == 3:
        squeeze = False
    else:
        raise ShapeError(f"{kind} input must be [T,{feat}] or [B,T,{feat}], got {data.shape}")
    return data, squeeze


def gru_forward(x, params: GruParams, h0=None):
    """Unidirectional gated recurrence over the time axis.

    Gates: z = sig(x W_z' + h U_z' + b_z), r likewise, candidate
    n = tanh(x W_n' + (r*h) U_n' + b_n), and h_t = (1-z)*h_{t-1} + z*n.
    The reset gate multiplies the previous state before the recurrent
    affine.  Backward is an iterative loop over the stored per-step
    intermediates, so long sequences cannot hit recursion limits.
    """
    xd, squeeze = _batchify_seq(x.data, "gru_forward", "H_in")
    b, t_len, h_in = xd.shape
    if h_in != params.input_size:
        raise ShapeError(f"sequence features {h_in} != GRU input size {params.input_size}")
    h_size = params.hidden_size

    wz, wr, wn = params.w_update.data, params.w_reset.data, params.w_cand.data
    uz, ur, un = params.u_update.data, params.u_reset.data, params.u_cand.data
    bz, br, bn = params.b_update.data, params.b_reset.data, params.b_cand.data

    if h0 is None:
        h = np.zeros((b, h_size), dtype=xd.dtype)
    else:
        h0d = h0.data if isinstance(h0, Tensor) else np.asarray(h0, dtype=xd.dtype)
        if h0d.shape != (h_size,):
            raise ShapeError(f"h0 must be [{h_size}], got {h0d.shape}")
        h = np.broadcast_to(h0d, (b, h_size)).astype(xd.dtype)

    zs = np.empty((t_len, b, h_size), dtype=xd.dtype)
    rs = np.empty_like(zs)
    ns = np.empty_like(zs)
    hs = np.empty((t_len + 1, b, h_size), dtype=xd.dtype)
    hs[0] = h

    # Pre-transpose so each step is a plain right-multiplication.
    wzT, wrT, wnT = wz.T, wr.T, wn.T
    uzT, urT, unT = uz.T, ur.T, un.T
    for t in range(t_len):
        xt = xd[:, t]
        z = stable_sigmoid(xt @ wzT + h @ uzT + bz)
        r = stable_sigmoid(xt @ wrT + h @ urT + br)
        n = np.tanh(xt @ wnT + (r * h) @ unT + bn)
        h = (1.0 - z) * h + z * n
        zs[t], rs[t], ns[t], hs[t + 1] = z, r, n, h

    out = np.ascontiguousarray(hs[1:].transpose(1, 0, 2))

    def backward(g):
        g3 = g[None] if squeeze else g
        gT = g3.transpose(1, 0, 2)
        dwz, dwr, dwn = np.zeros_like(wz), np.zeros_like(wr), np.zeros_like(wn)
        duz, dur, dun = np.zeros_like(uz), np.zeros_like(ur), np.zeros_like(un)
        dbz, dbr, dbn = np.zeros_like(bz), np.zeros_like(br), np.zeros_like(bn)
        dx = np.zeros_like(xd)
        dh = np.zeros((b, h_size), dtype=xd.dtype)
        for t in range(t_len - 1, -1, -1):
            dh = dh + gT[t]
            z, r, n, hp = zs[t], rs[t], ns[t], hs[t]
            xt = xd[:, t]
            d_az = dh * (n - hp) * z * (1.0 - z)
            d_an = dh * z * (1.0 - n * n)
            d_rh = d_an @ un
            d_ar = d_rh * hp * r * (1.0 - r)
            dwz += d_az.T @ xt
            dwr += d_ar.T @ xt
            dwn += d_an.T @ xt
            duz += d_az.T @ hp
            dur += d_ar.T @ hp
            dun += d_an.T @ (r * hp)
            dbz += d_az.sum(axis=0)
            dbr += d_ar.sum(axis=0)
            dbn += d_an.sum(axis=0)
            dx[:, t] = d_az @ wz + d_ar @ wr + d_an @ wn
            dh = dh * (1.0 - z) + d_az @ uz + d_ar @ ur + d_rh * r
        return (
            (dx[0] if squeeze else dx),
            dwz, dwr, dwn, duz, dur, dun, dbz, dbr, dbn,
        )

    parents = (
        x,
        params.w_update, params.w_reset, params.w_cand,
        params.u_update, params.u_reset, params.u_cand,
        params.b_update, params.b_reset, params.b_cand,
    )
    return make_node(out[0] if squeeze else out, parents, backward)


def classify(x, params: AffineClassifier):
    """Frame-shared affine transform followed by a sigmoid."""
    xd, squeeze = _batchify_seq(x.data, "classify", "F_in")
    w = params.weight.data
    if xd.shape[-1] != w.shape[1]:
        raise ShapeError(f"frame features {xd.shape[-1]} != classifier input {w.shape[1]}")
    y = stable_sigmoid(xd @ w.T + params.bias.data)

    def backward(g):
        g3 = g[None] if squeeze else g
        ds = g3 * y * (1.0 - y)
        dx = ds @ w
        dw = np.tensordot(ds, xd, axes=([0, 1], [0, 1]))
        db = ds.sum(axis=(0, 1))
        return (dx[0] if squeeze else dx), dw, db

    return make_node(y[0] if squeeze else y, (x, params.weight, params.bias), backward)
