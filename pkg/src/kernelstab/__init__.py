"""Stable epsilon-kernels of dynamic point sets."""

from .anchors import AnchorFrame, FatnessReport, beta_d, fatness_ratio, select_anchors
from .epochs import EpochCore, EpochEngine
from .errors import (
    BadEpsilon,
    BadParams,
    DegenerateSpan,
    DuplicateId,
    EmptySet,
    KernelStabError,
    NotSubset,
    OutOfBox,
    ParseError,
    UnknownId,
    UnsupportedDimension,
    VerificationFailed,
)
from .experiments import (
    Instance,
    RatioReport,
    gen_cyclic_perturbed,
    gen_sphere,
    greedy_kernel,
    ratio_experiment,
)
from .fixed import ChangeLog, GridKernel, PhiKernel, snapped_nn
from .geometry import (
    DirectionNet,
    Point,
    PointSet,
    VerifyResult,
    build_direction_net,
    directional_width,
    extreme_point,
    verify_kernel,
)
from .layered import DeamortQueue, LayerStack
from .pipeline import Pipeline, PipelineConfig, StabilityStats, pipeline_new

__version__ = "0.1.0"
