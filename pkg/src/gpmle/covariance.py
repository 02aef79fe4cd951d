"""Stationary isotropic covariance families and their parameter derivatives.

Three families over lag norm r = ||u - v||, parameterized by a variance
sigma2 and an inverse-length scale alpha:

    exponential  k(r) = sigma2 * exp(-alpha * r)
    gaussian     k(r) = sigma2 * exp(-alpha^2 * r^2)
    matern       k(r) = sigma2 * 2^(1-nu)/Gamma(nu) * (alpha r)^nu K_nu(alpha r)

The Matern smoothness nu is a fixed structural constant, never estimated.
Matern with nu = 1/2 coincides with the exponential family.  At r = 0 every
family evaluates to sigma2 (continuity extension for Matern).

Spectral densities use the convention k(u) = integral k_hat(w) e^{i w.u} dw,
i.e. k_hat is the Fourier transform of k with the (2 pi)^-d factor absorbed
into k_hat.  For the gaussian family this gives
k_hat(w) = sigma2 * (4 pi alpha^2)^(-d/2) * exp(-||w||^2 / (4 alpha^2)).

Kernel and gradient evaluations accept scalar or ndarray lags and are
vectorized; values with magnitude below 1e-300 are flushed to exact zero so
assembled covariance matrices stay exactly symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special as _sp

from .specfun import bessel_k, log_gamma

UNDERFLOW_FLOOR = 1e-300


class Family(str, Enum):
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"
    MATERN = "matern"


@dataclass(frozen=True)
class KernelSpec:
    """Covariance family plus its fixed structural constants."""

    family: Family
    nu: float | None = None

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        if fam is Family.MATERN:
            if self.nu is None or not math.isfinite(self.nu) or self.nu <= 0:
                raise ValueError("matern kernel requires nu > 0")
        elif self.nu is not None:
            raise ValueError(f"nu is only meaningful for the matern family, got {fam.value}")

    @property
    def smoothness(self) -> float | None:
        """Effective smoothness: nu for matern, 1/2 for exponential, None for gaussian."""
        if self.family is Family.MATERN:
            return self.nu
        if self.family is Family.EXPONENTIAL:
            return 0.5
        return None


@dataclass(frozen=True)
class ParamVector:
    """Covariance parameter theta = (sigma2, alpha), both strictly positive."""

    sigma2: float
    alpha: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError(f"sigma2 must be finite and > 0, got {self.sigma2!r}")
        if not (math.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be finite and > 0, got {self.alpha!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma2, self.alpha], dtype=float)


@dataclass(frozen=True)
class ParamBounds:
    """Optimization box for theta: alpha in [alpha_inf, alpha_sup], sigma2 clamped."""

    alpha_inf: float = 0.1
    alpha_sup: float = 10.0
    sigma2_lo: float = 1e-12
    sigma2_hi: float = 1e12

    def __post_init__(self):
        if not (0 < self.alpha_inf < self.alpha_sup < math.inf):
            raise ValueError(
                "alpha bounds must satisfy 0 < alpha_inf < alpha_sup < inf, "
                f"got [{self.alpha_inf!r}, {self.alpha_sup!r}]"
            )
        if not (0 < self.sigma2_lo < self.sigma2_hi):
            raise ValueError("sigma2 clamp range must satisfy 0 < lo < hi")


def _matern_prefactor(nu: float) -> float:
    return math.exp((1.0 - nu) * math.log(2.0) - log_gamma(nu))


def _flush_underflow(values: np.ndarray) -> np.ndarray:
    np.putmask(values, np.abs(values) < UNDERFLOW_FLOOR, 0.0)
    return values


def kernel_value(spec: KernelSpec, theta: ParamVector, r):
    """Evaluate k_theta at lag norm(s) r >= 0.  Scalar in, float out."""
    scalar = np.isscalar(r) or getattr(r, "ndim", None) == 0
    rs = np.asarray(r, dtype=float)
    if rs.size and (np.any(rs < 0) or not np.all(np.isfinite(rs))):
        raise ValueError("lag norms must be finite and >= 0")
    z = theta.alpha * rs

    if spec.family is Family.EXPONENTIAL:
        out = theta.sigma2 * np.exp(-z)
    elif spec.family is Family.GAUSSIAN:
        out = theta.sigma2 * np.exp(-(z * z))
    else:
        out = _matern_value(spec.nu, theta.sigma2, z)

    out = _flush_underflow(np.asarray(out))
    return float(out) if scalar else out


def _matern_value(nu: float, sigma2: float, z: np.ndarray) -> np.ndarray:
    if nu == 0.5:
        return sigma2 * np.exp(-z)
    if nu == 1.5:
        return sigma2 * (1.0 + z) * np.exp(-z)
    if nu == 2.5:
        return sigma2 * (1.0 + z + z * z / 3.0) * np.exp(-z)

    out = np.full_like(z, sigma2, dtype=float)
    pos = z > 0
    if np.any(pos):
        zp = z[pos]
        # Oversized arguments underflow the kernel to zero; skip the Bessel
        # call there so (z^nu) * K_nu never produces inf * 0.
        live = zp < 700.0
        vals = np.zeros_like(zp)
        if np.any(live):
            zl = zp[live]
            vals[live] = (
                sigma2
                * _matern_prefactor(nu)
                * np.power(zl, nu)
                * bessel_k(nu, zl)
            )
        out[pos] = vals
    return out


def kernel_grad(spec: KernelSpec, theta: ParamVector, r):
    """Gradient (dk/dsigma2, dk/dalpha) at lag norm(s) r.

    dk/dsigma2 = k / sigma2 exactly.  dk/dalpha uses the analytic form from
    d/dz [z^nu K_nu(z)] = -z^nu K_{nu-1}(z); at r = 0 it is 0 because the
    continuity extension k(0) = sigma2 does not depend on alpha.

    Returns a pair of floats for scalar r, a pair of arrays otherwise.
    """
    scalar = np.isscalar(r) or getattr(r, "ndim", None) == 0
    rs = np.asarray(r, dtype=float)
    if rs.size and (np.any(rs < 0) or not np.all(np.isfinite(rs))):
        raise ValueError("lag norms must be finite and >= 0")
    z = theta.alpha * rs

    if spec.family is Family.EXPONENTIAL:
        ez = np.exp(-z)
        d_sigma2 = ez
        d_alpha = -theta.sigma2 * rs * ez
    elif spec.family is Family.GAUSSIAN:
        ez = np.exp(-(z * z))
        d_sigma2 = ez
        d_alpha = -2.0 * theta.alpha * rs * rs * theta.sigma2 * ez
    else:
        d_sigma2 = _matern_value(spec.nu, 1.0, z)
        d_alpha = _matern_alpha_grad(spec.nu, theta.sigma2, rs, z)

    d_sigma2 = _flush_underflow(np.asarray(d_sigma2))
    d_alpha = _flush_underflow(np.asarray(d_alpha))
    if scalar:
        return float(d_sigma2), float(d_alpha)
    return d_sigma2, d_alpha


def _matern_alpha_grad(nu: float, sigma2: float, rs: np.ndarray, z: np.ndarray) -> np.ndarray:
    ez = np.exp(-np.minimum(z, 745.0))
    if nu == 0.5:
        return -sigma2 * rs * ez
    if nu == 1.5:
        return -sigma2 * rs * z * ez
    if nu == 2.5:
        return -sigma2 * rs * z * (1.0 + z) / 3.0 * ez

    out = np.zeros_like(z)
    pos = (z > 0) & (z < 700.0)
    if np.any(pos):
        zp = z[pos]
        # K_{nu-1}: scipy handles zero and negative orders (K_{-m} = K_m).
        k_prev = _sp.kve(nu - 1.0, zp) * np.exp(-zp)
        out[pos] = -sigma2 * _matern_prefactor(nu) * rs[pos] * np.power(zp, nu) * k_prev
    return out


def spectral_density(spec: KernelSpec, theta: ParamVector, omega_norm, d: int):
    """Spectral density k_hat at frequency norm(s) omega_norm, dimension d in {1,2,3}."""
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d!r}")
    scalar = np.isscalar(omega_norm) or getattr(omega_norm, "ndim", None) == 0
    w = np.asarray(omega_norm, dtype=float)
    if w.size and (np.any(w < 0) or not np.all(np.isfinite(w))):
        raise ValueError("frequency norms must be finite and >= 0")

    a2 = theta.alpha * theta.alpha
    if spec.family is Family.GAUSSIAN:
        out = theta.sigma2 * (4.0 * math.pi * a2) ** (-d / 2.0) * np.exp(-(w * w) / (4.0 * a2))
    else:
        nu = 0.5 if spec.family is Family.EXPONENTIAL else spec.nu
        const = (
            theta.sigma2
            * math.exp(log_gamma(nu + d / 2.0) - log_gamma(nu))
            * theta.alpha ** (2.0 * nu)
            / math.pi ** (d / 2.0)
        )
        out = const * (a2 + w * w) ** (-(nu + d / 2.0))
    return float(out) if scalar else out


def microergodic(theta: ParamVector, nu: float) -> float:
    """The consistently estimable combination sigma2 * alpha^(2 nu)."""
    if not (math.isfinite(nu) and nu > 0):
        raise ValueError(f"nu must be finite and > 0, got {nu!r}")
    return theta.sigma2 * theta.alpha ** (2.0 * nu)
