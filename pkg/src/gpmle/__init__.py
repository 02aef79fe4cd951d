"""Gaussian-process covariance-parameter estimation and asymptotics harness.

Library layers, bottom up: special functions (``specfun``), covariance
families (``covariance``), dense Gaussian linear algebra (``gausslin``),
design generation and exact simulation (``simulate``), maximum likelihood
(``mle``), replicated Monte Carlo experiments (``harness``), report figures
(``figures``), and the command-line front end (``cli``).
"""

from .covariance import Family, KernelSpec, ParamBounds, ParamVector, microergodic
from .gausslin import CholFactor, CholPolicy, NotPositiveDefiniteError
from .mle import FisherMatrix, FitError, FitResult, fit_full
from .simulate import Design, FixedDesignMode, Regime, SeedSpec

__all__ = [
    "Family",
    "KernelSpec",
    "ParamBounds",
    "ParamVector",
    "microergodic",
    "CholFactor",
    "CholPolicy",
    "NotPositiveDefiniteError",
    "FisherMatrix",
    "FitError",
    "FitResult",
    "fit_full",
    "Design",
    "FixedDesignMode",
    "Regime",
    "SeedSpec",
]

__version__ = "0.1.0"
