"""From-scratch CNN engine and train/eval harness for classifying PV solar
panel surface images as normal/faulty (binary) or normal/cracked/dusty/
shadowed (4-class), including the reduced-depth ablation and two reference
baseline architectures."""

from .data import (
    ArraySet,
    BINARY_LABELS,
    Dataset,
    FAULT_SUBTYPES,
    MULTICLASS_LABELS,
    Sample,
    augment,
    bilinear_resize,
    compute_norm_stats,
    decode_and_resize,
    denormalize,
    hflip,
    load_manifest,
    materialize,
    normalize,
    relabel_binary,
    stratified_split,
    write_manifest,
)
from .errors import (
    ArchMismatchError,
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    NumericError,
    PVFaultError,
    ShapeError,
)
from .gradcheck import GradcheckReport, model_gradcheck, numerical_gradient
from .layers import (
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    ReLU,
    cross_entropy,
    softmax,
    softmax_cross_entropy_grad,
)
from .models import ARCH_IDS, Model, build_model, load_checkpoint, save_checkpoint
from .ops import (
    ConvGeometry,
    conv2d,
    conv2d_backward,
    conv_output_extent,
    matmul,
    maxpool2d,
    maxpool2d_backward,
)
from .training import (
    Adam,
    EpochRecord,
    EvalReport,
    MetricsLog,
    SGDMomentum,
    TrainConfig,
    emit_curves,
    evaluate,
    parse_metrics_csv,
    train,
)

__version__ = "0.1.0"
