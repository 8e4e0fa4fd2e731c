"""Numerical toolkit for smooth rigidity experiments with Anosov maps of tori.

Hyperbolic toral automorphisms and their trigonometric perturbations,
periodic orbit catalogs, shadowing conjugacies, stable and unstable
leaves, periodic cycle functionals and Livshits-type obstruction tests.
"""

__version__ = "0.1.0"

from .errors import AnosovLabError, InvalidInput, NumericalFailure
from .torus_maps import FourierMode, PerturbedMap

__all__ = ["AnosovLabError", "FourierMode", "InvalidInput", "NumericalFailure",
           "PerturbedMap", "__version__"]
