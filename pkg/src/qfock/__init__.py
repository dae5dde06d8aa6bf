"""q-deformed quantum stochastic calculus on finite truncations of the q-Fock space."""

from .fock_core import (FockVector, QConstants, TruncationConfig, TruncationError,
                        estimate_constants, q_inner, q_norm)
from .fock_ops import (FockOperator, ParameterError, annihilation, creation, gamma, gauge,
                       q_adjoint, q_operator_norm)

__version__ = "0.1.0"

__all__ = [
    "FockVector", "QConstants", "TruncationConfig", "TruncationError", "estimate_constants",
    "q_inner", "q_norm", "FockOperator", "ParameterError", "annihilation", "creation",
    "gamma", "gauge", "q_adjoint", "q_operator_norm", "__version__",
]
