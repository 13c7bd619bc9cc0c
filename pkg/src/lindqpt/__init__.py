"""Dissipative dynamical quantum phase transitions: Liouvillian and trajectory tools."""

from .errors import (
    CapacityError,
    DegeneratePointError,
    DomainError,
    LindqptError,
    NumericError,
    TimestepTooLargeError,
    UnsupportedModelError,
)
from .fockspace import OccupationBasis, build_basis, operator_matrix
from .liouvillian import (
    LiouvillianMatrix,
    VectorizedDensity,
    block_decompose,
    build_liouvillian,
    gap,
    restrict_weak_symmetry,
    spectrum,
    steady_state,
)
from .propagator import backflow_first_order, evolve_exact, evolve_nonhermitian

__version__ = "0.1.0"
