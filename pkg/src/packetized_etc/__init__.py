"""Rates and LQ loss of event-triggered packetized dead-beat control over erasure channels."""
from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    EtcError,
    MultiInputUnsupported,
    NegativeMassDifference,
    NotControllable,
    NotNilpotent,
    SingularA,
    ToleranceNotMet,
    UnstableArgument,
    UnstableConfiguration,
    VanishingMass,
)
from .gaussian import (
    GaussianVector,
    QmcOptions,
    Rectangle,
    TruncatedMoments,
    delta_covariance,
    exterior_truncated_moments,
    mvn_rectangle_prob,
    rect_truncated_moments,
    truncation_ladder,
    xi_covariance,
)
from .markov import (
    TriggeredChain,
    TriggerParams,
    crossing_probs_scalar,
    crossing_probs_vector,
    rate_scalar_lossless,
    rate_scalar_lossy,
    rate_vector_lossless,
    rate_vector_lossy,
    stationary_distribution_scalar,
)
from .model import (
    CostWeights,
    DeadBeatController,
    LinearSystem,
    control_sequence,
    controllability_index,
    lyap_solve,
    synthesize_deadbeat_gain,
    validate_deadbeat_gain,
)
from .performance import (
    LossBreakdown,
    PerformanceReport,
    analyze,
    loss_scalar_lossless,
    loss_scalar_lossy,
    loss_vector_lossless,
    loss_vector_lossy,
)
from .simulator import SimConfig, SimResult, simulate, simulate_nonpacketized

__version__ = "0.1.0"
