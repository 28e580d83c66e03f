"""Sound event detection with separable and dilated convolutions.

A self-contained stack: a small tensor substrate with reverse-mode
differentiation, the layer zoo (dense, depthwise separable, and dilated
convolutions, gated recurrence, normalization, pooling), the four-variant
model grid with parameter/MAC accounting, a synthetic data generator, the
frame-wise evaluation metrics, and the training loop.
"""

__version__ = "0.1.0"

from .autodiff import GradientSet, backward, finite_difference_check
from .data import DatasetSplit, SequenceSample, chunk_sequences, load_features, save_features, synthesize_dataset
from .errors import (
    ConfigError,
    DataFormatError,
    GraphError,
    NoReferenceError,
    NumericsError,
    SedconvError,
    ShapeError,
)
from .metrics import binarize, error_rate, f1_score
from .models import (
    ComplexityReport,
    Model,
    ModelConfig,
    build_model,
    compute_time_padding,
    count_macs,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .ops import (
    AffineClassifier,
    BatchNormParams,
    DenseConvKernel,
    DepthwiseSeparableKernel,
    DilatedConvKernel,
    GruParams,
    batchnorm2d,
    classify,
    conv2d,
    depthwise_conv,
    dilated_conv2d,
    dropout,
    dws_conv,
    gru_forward,
    maxpool2d,
    pointwise_conv,
    relu,
    sigmoid,
    tanh,
)
from .tensor import Tensor, no_grad, reshape, scale, transpose
from .training import RunRecord, TrainConfig, adam_step, bce_loss, evaluate, fit, repeat_experiment
