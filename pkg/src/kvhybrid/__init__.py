"""Koopman-van Hove classical dynamics, hybrid quantum-classical wave equations
and the closure model for positive hybrid densities, on a periodic phase-space grid."""

from .closure import ClosureModel, DegenerateDensity, EhrenfestModel, MeanFieldModel, Phi
from .dynamics import IntegratorConfig, NonFiniteState, run
from .hybrid import HybridHamiltonian
from .phasespace import PhaseSpaceGrid, Polynomial
from .spin2 import SpinHamiltonian, SpinModel, SpinState

__version__ = "0.1.0"

__all__ = [
    "ClosureModel", "DegenerateDensity", "EhrenfestModel", "HybridHamiltonian", "IntegratorConfig",
    "MeanFieldModel", "NonFiniteState", "PhaseSpaceGrid", "Phi", "Polynomial", "SpinHamiltonian",
    "SpinModel", "SpinState", "run",
]
