"""Simulator for state-independent quantum key distribution with temporal CHSH checks."""

from .bloch import (
    BlochVector,
    EnsembleState,
    Observable,
    Rotation,
    apply_rotation,
    collapse,
    conditional_probability,
    outcome_probability,
)
from .chsh import (
    ChshValue,
    MeasurementSettings,
    chsh_value,
    chsh_with_intercept,
    correlator,
    correlator_from_state,
    correlator_three,
    optimal_settings,
    pseudo_projection_trace,
)
from .classical import BinaryMatrix, BitString, HashSpec, distill_key, matvec, xor
from .protocol import SessionConfig, SessionReport, run_session, toy_config
from .sampling import ChshEstimate, CorrelatorEstimate, RngStream, estimate_chsh, estimate_correlator
from .transport import EveStrategy

__version__ = "0.1.0"
