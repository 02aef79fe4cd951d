"""Special functions for the Matern covariance family.

Provides the modified Bessel function of the second kind K_nu and the
log-gamma function, with input validation matching the parameter ranges
used elsewhere in the package (nu in (0, 5], argument in (0, 100]).

Half-integer orders (1/2, 3/2, 5/2, ...) use the exact closed forms

    K_{m+1/2}(x) = sqrt(pi / (2x)) * exp(-x)
                   * sum_{k=0}^{m} (m+k)! / (k! (m-k)!) * (2x)^{-k},

which are cheap, vectorize well, and are exact up to rounding.  All other
orders are evaluated through the exponentially scaled routine
``scipy.special.kve`` to avoid premature underflow of exp(-x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as _sp


@dataclass(frozen=True)
class BesselAccuracy:
    """Accuracy contract for ``bessel_k`` over its declared domain."""

    rel_tol: float = 1e-10
    nu_max: float = 5.0
    x_max: float = 100.0

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be > 0")


ACCURACY = BesselAccuracy()

_HALF_INT_TOL = 1e-12


def _is_half_integer(nu: float) -> bool:
    return abs(nu - (math.floor(nu) + 0.5)) < _HALF_INT_TOL


def _bessel_k_half_integer(m: int, x: np.ndarray) -> np.ndarray:
    # Closed form for order m + 1/2: sum_k (m+k)!/(k!(m-k)!) (2x)^{-k},
    # coefficients built by the ratio recurrence a_k = a_{k-1} (m+k)(m-k+1)/k.
    poly = np.ones_like(x)
    coef = 1.0
    inv2x = 1.0 / (2.0 * x)
    power = np.ones_like(x)
    for k in range(1, m + 1):
        coef *= (m + k) * (m - k + 1) / k
        power = power * inv2x
        poly = poly + coef * power
    return np.sqrt(np.pi / (2.0 * x)) * np.exp(-x) * poly


def bessel_k(nu: float, x):
    """Modified Bessel function of the second kind K_nu(x).

    Accepts a scalar or array ``x``; returns a float for scalar input and
    an ndarray otherwise.  Strictly positive and strictly decreasing in x.

    Raises ValueError if ``nu <= 0``, any ``x <= 0``, or inputs are not
    finite.
    """
    if not math.isfinite(nu) or nu <= 0.0:
        raise ValueError(f"bessel_k: order must be finite and > 0, got nu={nu!r}")
    scalar = np.isscalar(x) or getattr(x, "ndim", None) == 0
    xs = np.asarray(x, dtype=float)
    if xs.size and (not np.all(np.isfinite(xs)) or np.any(xs <= 0.0)):
        raise ValueError("bessel_k: argument must be finite and > 0")

    if _is_half_integer(nu):
        out = _bessel_k_half_integer(int(math.floor(nu)), xs)
    else:
        out = _sp.kve(nu, xs) * np.exp(-xs)
    return float(out) if scalar else out


def log_gamma(x):
    """Natural log of the gamma function, for x > 0.

    Scalar in, float out; array in, ndarray out.
    """
    scalar = np.isscalar(x) or getattr(x, "ndim", None) == 0
    xs = np.asarray(x, dtype=float)
    if xs.size and (not np.all(np.isfinite(xs)) or np.any(xs <= 0.0)):
        raise ValueError("log_gamma: argument must be finite and > 0")
    if scalar:
        return math.lgamma(float(xs))
    return _sp.gammaln(xs)
