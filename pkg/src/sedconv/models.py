"""Model grid assembly, complexity accounting, and checkpointing.

Four variants share one skeleton: three convolutional blocks, a temporal
module, and a frame-shared sigmoid classifier.

* ``base``: dense convolutions + gated recurrence over time
* ``dws``:  depthwise separable convolutions + gated recurrence
* ``dil``:  dense convolutions + dilated convolution over time
* ``dnd``:  depthwise separable convolutions everywhere, including the
  dilated temporal module (its convolution is depthwise separable as well,
  which is what keeps the variant's parameter count a small fraction of the
  baseline's)

The baseline pooling plan collapses the feature axis to width 1, which
cannot feed a valid temporal convolution of width >= 3.  The dil/dnd
variants therefore default to a gentler plan that leaves width 10; every
complexity report carries a note whenever that substitution is active.
"""

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .errors import ConfigError, DataFormatError, ShapeError
from .ops import (
    EVAL,
    AffineClassifier,
    BatchNormParams,
    DenseConvKernel,
    DepthwiseSeparableKernel,
    DilatedConvKernel,
    GruParams,
    _check_mode,
    conv_output_size,
)
from .tensor import Tensor

VARIANTS = ("base", "dws", "dil", "dnd")
DIL_KERNEL_SIZES = (3, 5, 7)
DILATION_RATES = (1, 10, 50, 100)

BASE_POOLING = ((1, 5), (1, 4), (1, 2))
DIL_POOLING = ((1, 2), (1, 2), (1, 1))

POOLING_NOTE = (
    "temporal variants pool the feature axis to width {width} instead of 1 "
    "so kernels up to 7 wide fit without feature padding"
)

# Reference full-scale parameter totals for each grid point, used by the
# analyzer to flag accounting drift (> 15%).
REFERENCE_PARAM_TOTALS = {
    ("base", None): 3.68e6,
    ("dws", None): 0.62e6,
    ("dil", 3): 3.81e6,
    ("dil", 5): 3.81e6,
    ("dil", 7): 3.64e6,
    ("dnd", 3): 0.74e6,
    ("dnd", 5): 0.74e6,
    ("dnd", 7): 0.58e6,
}


def compute_time_padding(kernel_h, dilation_h):
    """Zero padding that keeps the time axis length under unit stride.

    floor(kernel/2) * dilation: 1*d for kernel 3, 2*d for 5, 3*d for 7,
    5*d for 11.
    """
    kernel_h = int(kernel_h)
    if kernel_h < 3 or kernel_h % 2 == 0:
        raise ConfigError(f"temporal kernel height must be odd and >= 3, got {kernel_h}")
    if dilation_h < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation_h}")
    return (kernel_h // 2) * int(dilation_h)


@dataclass
class ModelConfig:
    """One point of the experiment grid."""

    variant: str
    channels: int = 256
    cnn_kernel: tuple = (5, 5)
    cnn_padding: tuple = (2, 2)
    pooling_plan: tuple = None  # default depends on variant
    dil_kernel: int = 3  # square temporal kernel edge
    dilation_time: int = 1
    dilation_feature: int = 1
    dropout: float = 0.25
    classes: int = 16
    input_frames: int = 1024
    input_features: int = 40
    dtype: str = "float64"

    def __post_init__(self):
        self.cnn_kernel = ops._pair(self.cnn_kernel, "cnn_kernel")
        self.cnn_padding = ops._pair(self.cnn_padding, "cnn_padding")
        if isinstance(self.dil_kernel, (tuple, list)):
            kh, kw = ops._pair(self.dil_kernel, "dil_kernel")
            if kh != kw:
                raise ConfigError(f"temporal kernel must be square, got ({kh}, {kw})")
            self.dil_kernel = kh
        if self.pooling_plan is not None:
            self.pooling_plan = tuple(ops._pair(p, "pooling entry") for p in self.pooling_plan)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("channels", "classes", "input_frames", "input_features"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")
        try:
            width = self.feature_width_after_blocks()
        except ShapeError as exc:
            raise ConfigError(
                f"pooling plan {self.effective_pooling_plan()} collapses the "
                f"{self.input_features}-band feature axis below the kernel size: {exc}"
            ) from exc
        if width < 1:
            raise ConfigError(
                f"pooling plan {self.effective_pooling_plan()} reduces the feature axis to zero width"
            )
        if self.uses_dilation:
            if self.dil_kernel not in DIL_KERNEL_SIZES:
                raise ConfigError(
                    f"temporal kernel {self.dil_kernel} not allowed; choose from {DIL_KERNEL_SIZES}"
                )
            if self.dilation_time not in DILATION_RATES:
                raise ConfigError(
                    f"time dilation {self.dilation_time} not allowed; choose from {DILATION_RATES}"
                )
            if self.dilation_feature != 1:
                raise ConfigError("feature-axis dilation is fixed to 1")
            if width < self.dil_kernel:
                raise ConfigError(
                    f"feature width after pooling is {width}, smaller than the temporal "
                    f"kernel width {self.dil_kernel}; widen the pooling plan "
                    f"(default for dil/dnd is {DIL_POOLING})"
                )
        return self

    @property
    def uses_dilation(self):
        return self.variant in ("dil", "dnd")

    @property
    def separable(self):
        return self.variant in ("dws", "dnd")

    def effective_pooling_plan(self):
        if self.pooling_plan is not None:
            return self.pooling_plan
        return DIL_POOLING if self.uses_dilation else BASE_POOLING

    def feature_width_after_blocks(self):
        """Feature-axis width of the last block's output."""
        width = self.input_features
        kh, kw = self.cnn_kernel
        ph, pw = self.cnn_padding
        for _, qw in self.effective_pooling_plan():
            width = conv_output_size(width, kw, 1, pw) // qw
        return width

    def numpy_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


@dataclass
class LayerComplexity:
    name: str
    parameters: int
    parameters_no_bias: int
    macs: int


def _bn_rows(name, channels):
    return LayerComplexity(name, 2 * channels, 0, 0)


class _ConvBlock:
    """conv -> relu -> batchnorm -> maxpool -> dropout."""

    def __init__(self, name, kernel, bn, pool, drop_p):
        self.name = name
        self.kernel = kernel
        self.bn = bn
        self.pool = pool
        self.drop_p = drop_p

    @property
    def separable(self):
        return isinstance(self.kernel, DepthwiseSeparableKernel)

    def params(self):
        k = self.kernel
        if self.separable:
            yield f"{self.name}.dws.spatial", k.spatial
            yield f"{self.name}.dws.bias_spatial", k.bias_spatial
            yield f"{self.name}.dws.pointwise", k.pointwise
            yield f"{self.name}.dws.bias_pointwise", k.bias_pointwise
        else:
            yield f"{self.name}.conv.weight", k.weights
            yield f"{self.name}.conv.bias", k.bias
        yield f"{self.name}.bn.gamma", self.bn.gamma
        yield f"{self.name}.bn.beta", self.bn.beta

    def forward(self, x, mode, rng):
        if self.separable:
            x = ops.dws_conv(x, self.kernel)
        else:
            x = ops.conv2d(x, self.kernel)
        x = ops.relu(x)
        x = ops.batchnorm2d(x, self.bn, mode)
        x = ops.maxpool2d(x, self.pool)
        return ops.dropout(x, self.drop_p, mode, rng)

    def complexity(self, in_chw):
        ci, h, w = in_chw
        k = self.kernel
        rows = []
        if self.separable:
            _, kh, kw = k.spatial.shape
            oh = conv_output_size(h, kh, k.stride[0], k.padding[0])
            ow = conv_output_size(w, kw, k.stride[1], k.padding[1])
            ko = k.pointwise.shape[0]
            weights = ci * kh * kw + ci * ko
            biases = ci + ko
            macs = ci * kh * kw * oh * ow + ci * ko * oh * ow
            rows.append(LayerComplexity(f"{self.name}.dws", weights + biases, weights, macs))
        else:
            ko, _, kh, kw = k.weights.shape
            oh = conv_output_size(h, kh, k.stride[0], k.padding[0])
            ow = conv_output_size(w, kw, k.stride[1], k.padding[1])
            weights = ko * ci * kh * kw
            macs = ko * ci * kh * kw * oh * ow
            rows.append(LayerComplexity(f"{self.name}.conv", weights + ko, weights, macs))
        rows.append(_bn_rows(f"{self.name}.bn", self.bn.channels))
        qh, qw = self.pool
        return rows, (ko, oh // qh, ow // qw)


class _GruModule:
    def __init__(self, name, gru):
        self.name = name
        self.gru = gru

    def params(self):
        g = self.gru
        for field_name in (
            "w_update", "w_reset", "w_cand",
            "u_update", "u_reset", "u_cand",
            "b_update", "b_reset", "b_cand",
        ):
            yield f"{self.name}.{field_name}", getattr(g, field_name)

    def forward(self, x):
        return ops.gru_forward(x, self.gru)

    def complexity(self, frames):
        g = self.gru
        h_in, h_out = g.input_size, g.hidden_size
        weights = 3 * (h_out * h_in + h_out * h_out)
        macs = weights * frames
        return [LayerComplexity(self.name, weights + 3 * h_out, weights, macs)]


class _DilatedModule:
    """Temporal convolution: (dilated conv) -> relu -> batchnorm."""

    def __init__(self, name, kernel, bn):
        self.name = name
        self.kernel = kernel
        self.bn = bn

    @property
    def separable(self):
        return isinstance(self.kernel, DepthwiseSeparableKernel)

    def params(self):
        k = self.kernel
        if self.separable:
            yield f"{self.name}.dws.spatial", k.spatial
            yield f"{self.name}.dws.bias_spatial", k.bias_spatial
            yield f"{self.name}.dws.pointwise", k.pointwise
            yield f"{self.name}.dws.bias_pointwise", k.bias_pointwise
        else:
            yield f"{self.name}.conv.weight", k.weights
            yield f"{self.name}.conv.bias", k.bias
        yield f"{self.name}.bn.gamma", self.bn.gamma
        yield f"{self.name}.bn.beta", self.bn.beta

    def forward(self, x, mode):
        if self.separable:
            x = ops.dws_conv(x, self.kernel)
        else:
            x = ops.dilated_conv2d(x, self.kernel)
        x = ops.relu(x)
        return ops.batchnorm2d(x, self.bn, mode)

    def complexity(self, in_chw):
        ci, h, w = in_chw
        k = self.kernel
        rows = []
        if self.separable:
            _, kh, kw = k.spatial.shape
            dh, dw = k.dilation
            ph, pw = k.padding
            oh = conv_output_size(h, kh, 1, ph, dh)
            ow = conv_output_size(w, kw, 1, pw, dw)
            ko = k.pointwise.shape[0]
            weights = ci * kh * kw + ci * ko
            biases = ci + ko
            macs = ci * kh * kw * oh * ow + ci * ko * oh * ow
            rows.append(LayerComplexity(f"{self.name}.dws", weights + biases, weights, macs))
        else:
            ko, _, kh, kw = k.weights.shape
            dh, dw = k.dilation
            ph, pw = k.padding
            oh = conv_output_size(h, kh, 1, ph, dh)
            ow = conv_output_size(w, kw, 1, pw, dw)
            weights = ko * ci * kh * kw
            macs = ko * ci * kh * kw * oh * ow
            rows.append(LayerComplexity(f"{self.name}.conv", weights + ko, weights, macs))
        rows.append(_bn_rows(f"{self.name}.bn", self.bn.channels))
        return rows, (ko, oh, ow)


class _ClassifierModule:
    def __init__(self, name, affine):
        self.name = name
        self.affine = affine

    def params(self):
        yield f"{self.name}.weight", self.affine.weight
        yield f"{self.name}.bias", self.affine.bias

    def forward(self, x):
        return ops.classify(x, self.affine)

    def complexity(self, frames):
        c, f_in = self.affine.weight.shape
        return [LayerComplexity(self.name, c * f_in + c, c * f_in, c * f_in * frames)]


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


class Model:
    """A built grid point: maps ``[T, N]`` features to ``[T, C]`` activity
    probabilities (and ``[B, T, N]`` to ``[B, T, C]``)."""

    def __init__(self, config, blocks, temporal, classifier):
        self.config = config
        self.blocks = blocks
        self.temporal = temporal
        self.classifier = classifier

    @property
    def dtype(self):
        return self.config.numpy_dtype()

    def parameters(self):
        """Ordered (name, tensor) pairs of every trainable parameter."""
        out = []
        for block in self.blocks:
            out.extend(block.params())
        out.extend(self.temporal.params())
        out.extend(self.classifier.params())
        return out

    def param_tensors(self):
        return [t for _, t in self.parameters()]

    def param_dict(self):
        return dict(self.parameters())

    def batchnorm_state(self):
        """(name, running array) pairs; saved with checkpoints."""
        out = []
        for block in self.blocks:
            out.append((f"{block.name}.bn.running_mean", block.bn.running_mean))
            out.append((f"{block.name}.bn.running_var", block.bn.running_var))
        if isinstance(self.temporal, _DilatedModule):
            out.append((f"{self.temporal.name}.bn.running_mean", self.temporal.bn.running_mean))
            out.append((f"{self.temporal.name}.bn.running_var", self.temporal.bn.running_var))
        return out

    def state_arrays(self):
        return list(self.parameters()) + [
            (name, arr) for name, arr in self.batchnorm_state()
        ]

    def forward(self, x, mode=EVAL, rng=None):
        _check_mode(mode)
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x), dtype=self.dtype)
        if x.ndim == 2:
            squeeze = True
            t_len, n = x.shape
            out = self._forward4(x.reshape((1, 1, t_len, n)), mode, rng)
            return out.reshape(out.shape[1:])
        if x.ndim == 3:
            b, t_len, n = x.shape
            return self._forward4(x.reshape((b, 1, t_len, n)), mode, rng)
        raise ShapeError(f"model input must be [T,N] or [B,T,N], got {x.shape}")

    def _forward4(self, x, mode, rng):
        n = x.shape[3]
        if n != self.config.input_features:
            raise ShapeError(
                f"input has {n} features, model was built for {self.config.input_features}"
            )
        for block in self.blocks:
            x = block.forward(x, mode, rng)
        if isinstance(self.temporal, _DilatedModule):
            x = self.temporal.forward(x, mode)
            h = _flatten_time(x)
        else:
            h = _flatten_time(x)
            h = self.temporal.forward(h)
        return self.classifier.forward(h)


def _flatten_time(x):
    """[B, C, T, W] -> [B, T, C*W], channel index major within a frame."""
    b, c, t_len, w = x.shape
    return x.transpose((0, 2, 1, 3)).reshape((b, t_len, c * w))


def _uniform(rng, shape, fan_in, dtype):
    bound = float(np.sqrt(1.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


def build_model(config: ModelConfig, seed=0):
    """Initialize one grid point with fan-in-scaled uniform weights."""
    config.validate()
    rng = np.random.default_rng(seed)
    dtype = config.numpy_dtype()
    ch = config.channels
    kh, kw = config.cnn_kernel

    blocks = []
    in_ch = 1
    for bi, pool in enumerate(config.effective_pooling_plan(), 1):
        if config.separable:
            kernel = DepthwiseSeparableKernel(
                spatial=_uniform(rng, (in_ch, kh, kw), kh * kw, dtype),
                bias_spatial=_uniform(rng, (in_ch,), kh * kw, dtype),
                pointwise=_uniform(rng, (ch, in_ch), in_ch, dtype),
                bias_pointwise=_uniform(rng, (ch,), in_ch, dtype),
                stride=(1, 1),
                padding=config.cnn_padding,
            )
        else:
            fan_in = in_ch * kh * kw
            kernel = DenseConvKernel(
                weights=_uniform(rng, (ch, in_ch, kh, kw), fan_in, dtype),
                bias=_uniform(rng, (ch,), fan_in, dtype),
                stride=(1, 1),
                padding=config.cnn_padding,
            )
        bn = BatchNormParams.create(ch, dtype=dtype)
        blocks.append(_ConvBlock(f"block{bi}", kernel, bn, pool, config.dropout))
        in_ch = ch

    width = config.feature_width_after_blocks()

    if config.uses_dilation:
        dk = config.dil_kernel
        pad_t = compute_time_padding(dk, config.dilation_time)
        dilation = (config.dilation_time, config.dilation_feature)
        if config.variant == "dnd":
            kernel = DepthwiseSeparableKernel(
                spatial=_uniform(rng, (ch, dk, dk), dk * dk, dtype),
                bias_spatial=_uniform(rng, (ch,), dk * dk, dtype),
                pointwise=_uniform(rng, (ch, ch), ch, dtype),
                bias_pointwise=_uniform(rng, (ch,), ch, dtype),
                stride=(1, 1),
                padding=(pad_t, 0),
                dilation=dilation,
            )
        else:
            fan_in = ch * dk * dk
            kernel = DilatedConvKernel(
                weights=_uniform(rng, (ch, ch, dk, dk), fan_in, dtype),
                bias=_uniform(rng, (ch,), fan_in, dtype),
                dilation=dilation,
                padding=(pad_t, 0),
            )
        temporal = _DilatedModule("temporal", kernel, BatchNormParams.create(ch, dtype=dtype))
        cls_width = ch * (width - dk + 1)
    else:
        h_size = ch * width
        temporal = _GruModule(
            "temporal.gru",
            GruParams(
                w_update=_uniform(rng, (h_size, h_size), h_size, dtype),
                w_reset=_uniform(rng, (h_size, h_size), h_size, dtype),
                w_cand=_uniform(rng, (h_size, h_size), h_size, dtype),
                u_update=_uniform(rng, (h_size, h_size), h_size, dtype),
                u_reset=_uniform(rng, (h_size, h_size), h_size, dtype),
                u_cand=_uniform(rng, (h_size, h_size), h_size, dtype),
                b_update=_uniform(rng, (h_size,), h_size, dtype),
                b_reset=_uniform(rng, (h_size,), h_size, dtype),
                b_cand=_uniform(rng, (h_size,), h_size, dtype),
            ),
        )
        cls_width = ch * width

    classifier = _ClassifierModule(
        "classifier",
        AffineClassifier(
            weight=_uniform(rng, (config.classes, cls_width), cls_width, dtype),
            bias=_uniform(rng, (config.classes,), cls_width, dtype),
        ),
    )
    return Model(config, blocks, temporal, classifier)


# ---------------------------------------------------------------------------
# complexity accounting
# ---------------------------------------------------------------------------


@dataclass
class ComplexityReport:
    layers: list
    notes: list = field(default_factory=list)

    def total_parameters(self, include_bias=True):
        if include_bias:
            return sum(row.parameters for row in self.layers)
        return sum(row.parameters_no_bias for row in self.layers)

    @property
    def total_macs(self):
        return sum(row.macs for row in self.layers)

    def layer(self, name):
        for row in self.layers:
            if row.name == name:
                return row
        raise KeyError(name)


def _walk_complexity(model, frames):
    config = model.config
    rows = []
    chw = (1, frames, config.input_features)
    for block in model.blocks:
        block_rows, chw = block.complexity(chw)
        rows.extend(block_rows)
    if isinstance(model.temporal, _DilatedModule):
        t_rows, chw = model.temporal.complexity(chw)
        rows.extend(t_rows)
        out_frames = chw[1]
    else:
        rows.extend(model.temporal.complexity(chw[1]))
        out_frames = chw[1]
    rows.extend(model.classifier.complexity(out_frames))

    notes = []
    if config.uses_dilation and config.effective_pooling_plan() != BASE_POOLING:
        notes.append(POOLING_NOTE.format(width=config.feature_width_after_blocks()))
    return ComplexityReport(rows, notes)


def count_parameters(model):
    """Exact per-layer parameter counts.

    ``report.total_parameters(include_bias=False)`` counts only the
    multiplicative weights (kernels, gate matrices, classifier weight),
    reproducing the closed-form layer formulas; the default also counts
    biases and the normalization affine terms.
    """
    return _walk_complexity(model, model.config.input_frames)


def count_macs(model, input_shape=None):
    """Multiply-accumulate counts per layer for one input sequence.

    Convolutions and affine maps are counted with their closed forms;
    pooling, activations, and normalization contribute none.
    """
    if input_shape is None:
        frames = model.config.input_frames
    else:
        frames, features = input_shape
        if features != model.config.input_features:
            raise ShapeError(
                f"input features {features} != model features {model.config.input_features}"
            )
    return _walk_complexity(model, frames)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SEDCKPT1"

_CONFIG_FIELDS = (
    "variant", "channels", "cnn_kernel", "cnn_padding", "pooling_plan",
    "dil_kernel", "dilation_time", "dilation_feature", "dropout",
    "classes", "input_frames", "input_features", "dtype",
)


def config_to_lines(config):
    lines = []
    for name in _CONFIG_FIELDS:
        value = getattr(config, name)
        if name == "pooling_plan":
            value = "default" if value is None else ";".join(f"{a},{b}" for a, b in value)
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{name}={value}")
    return lines


def config_from_mapping(pairs):
    kwargs = {}
    for name in _CONFIG_FIELDS:
        if name not in pairs:
            raise DataFormatError(f"checkpoint config is missing {name!r}")
        raw = pairs[name]
        if name in ("variant", "dtype"):
            kwargs[name] = raw
        elif name == "dropout":
            kwargs[name] = float(raw)
        elif name in ("cnn_kernel", "cnn_padding"):
            kwargs[name] = tuple(int(v) for v in raw.split(","))
        elif name == "pooling_plan":
            if raw == "default":
                kwargs[name] = None
            else:
                kwargs[name] = tuple(tuple(int(v) for v in p.split(",")) for p in raw.split(";"))
        else:
            kwargs[name] = int(raw)
    return ModelConfig(**kwargs)


def save_checkpoint(path, model):
    """Write config and parameters; the round trip is bit-exact."""
    entries = model.state_arrays()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        for line in config_to_lines(model.config):
            fh.write(line.encode("ascii") + b"\n")
        fh.write(b"\n")
        fh.write(struct.pack("<I", len(entries)))
        for name, value in entries:
            arr = value.data if isinstance(value, Tensor) else value
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path):
    """Parse a checkpoint into (config, {name: float64 array})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    stream = io.BytesIO(blob)
    magic = stream.read(len(CHECKPOINT_MAGIC) + 1)
    if magic != CHECKPOINT_MAGIC + b"\n":
        raise DataFormatError(f"bad checkpoint magic {magic[:8]!r}", offset=0)
    pairs = {}
    while True:
        offset = stream.tell()
        line = stream.readline()
        if not line.endswith(b"\n"):
            raise DataFormatError("checkpoint header truncated", offset=offset)
        if line == b"\n":
            break
        key, sep, value = line[:-1].decode("ascii").partition("=")
        if not sep:
            raise DataFormatError(f"malformed header line {line!r}", offset=offset)
        pairs[key] = value
    config = config_from_mapping(pairs)

    def read_exact(n, what):
        offset = stream.tell()
        chunk = stream.read(n)
        if len(chunk) != n:
            raise DataFormatError(
                f"checkpoint truncated reading {what}: expected {n} bytes, got {len(chunk)}",
                offset=offset,
            )
        return chunk

    (count,) = struct.unpack("<I", read_exact(4, "record count"))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", read_exact(2, "name length"))
        name = read_exact(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", read_exact(1, "rank"))
        shape = tuple(
            struct.unpack("<I", read_exact(4, f"dim of {name}"))[0] for _ in range(ndim)
        )
        n_items = int(np.prod(shape)) if shape else 1
        raw = read_exact(8 * n_items, f"data of {name}")
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return config, params


def load_checkpoint(path):
    """Rebuild the model a checkpoint describes and restore its state."""
    config, params = read_checkpoint(path)
    model = build_model(config, seed=0)
    restore_state(model, params)
    return model


def restore_state(model, params):
    for name, value in model.state_arrays():
        if name not in params:
            raise DataFormatError(f"checkpoint is missing parameter {name!r}")
        arr = value.data if isinstance(value, Tensor) else value
        stored = params[name]
        if stored.shape != arr.shape:
            raise DataFormatError(
                f"parameter {name!r} has shape {stored.shape}, expected {arr.shape}"
            )
        np.copyto(arr, stored)
