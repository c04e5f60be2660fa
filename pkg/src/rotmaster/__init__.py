"""Rotational dynamics of cold dimers under off-resonant light.

Builds the reduced rotational master equation (stimulated and spontaneous
Raman scattering on a truncated rigid-rotor ladder) and solves it either
directly for the density matrix or by quantum-trajectory unraveling.  A
small companion module estimates vibrational heating and the interaction
times for which the rotational model stays valid.
"""

__version__ = "0.1.0"

from .angmom import PureState, RotBasis, basis_state, build_basis, build_J, cg, coherent_state
from .coupling import (
    CouplingSet,
    FieldComponent,
    FieldConfig,
    build_coupling,
    build_H_eff,
    build_H_R,
    build_jumps,
    direction_cosine,
    kerr_field,
)
from .errors import (
    LeakageError,
    NumericalAbort,
    PositivityError,
    RotmasterError,
    TraceDriftError,
    TruncationError,
    ValidationError,
)
from .lindblad import linear_expectations, propagate, rhs
from .observables import ObservableRecord, ObservableSeries, observables
from .scenario import Scenario, load_scenario, parse_scenario, preset
from .trajectories import (
    EnsembleResult,
    TrajectoryRecord,
    ensemble_average,
    evolve_no_jump,
    run_ensemble,
    run_trajectory,
    sample_jump_time,
    select_jump_channel,
)
from .vibvalidity import VibRateModel, closed_form_moments, fc_overlap, integrate_rate_eq, max_valid_time
