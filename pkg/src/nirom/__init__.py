"""Non-intrusive reduced-order modelling with POD and neural surrogates.

Pipeline: simulate a full-order thermal model under static or dynamic
parameter sampling, compress the snapshots with POD, and learn the reduced
dynamics with a direct MLP or a Runge-Kutta neural network.
"""

__version__ = "0.1.0"

from .errors import (
    NiromError,
    InvalidModelError,
    NumericInputError,
    DomainError,
    ShapeError,
    UsageError,
    DivisionGuardError,
    StiffnessError,
    RolloutError,
    TrainingDivergence,
    ConfigError,
    ProvenanceError,
    MissingInputError,
)
from .fom import (
    FomModel,
    Trajectory,
    build_gap_radiation,
    build_heat_sink,
    build_model,
    build_synthetic_nonlinear,
    initial_state,
    integrate_batch,
    integrate_reference,
    rhs,
)
from .pod import (
    ReducedBasis,
    SnapshotSet,
    assemble_snapshot_matrix,
    compute_pod,
    lift,
    project,
    reprojection_error,
)
from .sampling import (
    ParameterSignal,
    ParameterSpace,
    eval_signal,
    sample_dps,
    sample_sps,
)
from .surrogate import (
    SurrogateNet,
    TrainingConfig,
    forward_direct,
    forward_direct_with_tau,
    forward_rknn,
    loss_and_gradients,
    rollout,
    train,
)

__all__ = [
    "__version__",
    "NiromError",
    "InvalidModelError",
    "NumericInputError",
    "DomainError",
    "ShapeError",
    "UsageError",
    "DivisionGuardError",
    "StiffnessError",
    "RolloutError",
    "TrainingDivergence",
    "ConfigError",
    "ProvenanceError",
    "MissingInputError",
    "FomModel",
    "Trajectory",
    "build_gap_radiation",
    "build_heat_sink",
    "build_model",
    "build_synthetic_nonlinear",
    "initial_state",
    "integrate_batch",
    "integrate_reference",
    "rhs",
    "ReducedBasis",
    "SnapshotSet",
    "assemble_snapshot_matrix",
    "compute_pod",
    "lift",
    "project",
    "reprojection_error",
    "ParameterSignal",
    "ParameterSpace",
    "eval_signal",
    "sample_dps",
    "sample_sps",
    "SurrogateNet",
    "TrainingConfig",
    "forward_direct",
    "forward_direct_with_tau",
    "forward_rknn",
    "loss_and_gradients",
    "rollout",
    "train",
]
