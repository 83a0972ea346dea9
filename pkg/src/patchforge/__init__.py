"""patchforge: single-image generative retargeting.

Train on one image; synthesize outputs of any size, aspect ratio, or
homography while preserving the image's multi-scale patch statistics.
"""

from .errors import (
    ChecksumError,
    ConfigError,
    DegenerateTransform,
    NonFiniteLoss,
    PatchforgeError,
    ShapeError,
)
from .geometry import (
    Homography,
    OutputGeometry,
    compose,
    from_corners,
    identity,
    invert,
    warp,
)
from .generator import Generator, GeneratorConfig, count_receptive_field
from .discriminator import (
    Discriminator,
    DiscriminatorConfig,
    scale_weight_schedule,
)
from .training import (
    CurriculumRanges,
    LossReport,
    TrainConfig,
    TrainState,
    build_models,
    dequantize,
    lsgan_d_loss,
    lsgan_g_loss,
    reconst_loss,
    sample_transform,
    train,
    train_step,
)
from .spectral import power_iteration, spectral_normalize
from .metrics import (
    PatchMetricConfig,
    bidirectional_report,
    coherence,
    completeness,
)
from .checkpoint import (
    Checkpoint,
    load_checkpoint,
    restore_generator,
    restore_state,
    save_checkpoint,
)
from .inference import SynthesisEngine, SynthesisRequest

__version__ = "0.1.0"
