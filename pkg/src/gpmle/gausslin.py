"""Dense symmetric linear algebra for Gaussian likelihoods.

Covariance assembly, Cholesky factorization with an explicit jitter policy,
triangular solves, Gaussian quadratic-form moments, extreme eigenvalues and
the Gershgorin row-sum bound.  Everything is dense float64, intended for
matrices up to a few thousand points.

All likelihood code factors through :func:`chol`; explicit matrix inverses
appear only in test oracles.  Eigenvalue extremes are computed with LAPACK's
``syevr`` driver (tridiagonal reduction followed by MRRR), exposed through
``scipy.linalg.eigh``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg as la
from scipy.linalg.lapack import dpotrf

from .covariance import KernelSpec, ParamVector, kernel_value, kernel_grad

if TYPE_CHECKING:
    from .simulate import Design

# Diagonal jitter ladder, as multiples of the mean diagonal entry.  The
# starting rung and cap are deliberate: fixed-domain Matern matrices go
# singular in float64 and any regularization must be visible in reports.
JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class CholPolicy(str, Enum):
    STRICT = "strict"
    JITTER = "jitter"


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky failure; ``pivot`` is the 1-based index of the failing minor."""

    def __init__(self, message: str, pivot: int):
        super().__init__(message)
        self.pivot = pivot


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular factor of a (possibly jittered) covariance matrix."""

    lower: np.ndarray
    logdet: float
    jitter_used: float

    @property
    def n(self) -> int:
        return self.lower.shape[0]


def build_cov(spec: KernelSpec, theta: ParamVector, design: "Design") -> np.ndarray:
    """Covariance matrix [k_theta(||s_i - s_j||)]_{ij} for the design points.

    Exactly symmetric by construction (the kernel sees only the symmetric
    distance matrix).  Raises ValueError when design points coincide.
    """
    if design.n >= 2 and design.min_sep <= 0.0:
        raise ValueError("design points must be pairwise distinct")
    return kernel_value(spec, theta, design.dists)


def build_cov_grads(spec: KernelSpec, theta: ParamVector, design: "Design") -> tuple[np.ndarray, np.ndarray]:
    """Entrywise parameter gradients (dR/dsigma2, dR/dalpha) of the covariance matrix."""
    if design.n >= 2 and design.min_sep <= 0.0:
        raise ValueError("design points must be pairwise distinct")
    return kernel_grad(spec, theta, design.dists)


def chol(cov: np.ndarray, policy: CholPolicy = CholPolicy.STRICT) -> CholFactor:
    """Cholesky factorization with the configured positive-definiteness policy.

    STRICT raises :class:`NotPositiveDefiniteError` naming the failing pivot.
    JITTER retries with diagonal jitter from :data:`JITTER_LADDER` (scaled by
    the mean diagonal) and records the amount actually added.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {cov.shape}")

    c, info = dpotrf(cov, lower=1, clean=1, overwrite_a=0)
    if info == 0:
        return CholFactor(lower=c, logdet=2.0 * float(np.sum(np.log(np.diag(c)))), jitter_used=0.0)
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of the Cholesky routine")
    if policy is CholPolicy.STRICT:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite: leading minor of order {info} failed", pivot=int(info)
        )

    mean_diag = float(np.mean(np.diag(cov)))
    last_pivot = int(info)
    for level in JITTER_LADDER:
        eps = level * mean_diag
        c, info = dpotrf(cov + eps * np.eye(cov.shape[0]), lower=1, clean=1, overwrite_a=0)
        if info == 0:
            return CholFactor(lower=c, logdet=2.0 * float(np.sum(np.log(np.diag(c)))), jitter_used=eps)
        last_pivot = int(info)
    raise NotPositiveDefiniteError(
        "matrix is not positive definite even with maximum jitter "
        f"{JITTER_LADDER[-1]:g} * mean(diag); leading minor of order {last_pivot} failed",
        pivot=last_pivot,
    )


def quad_form_inv(factor: CholFactor, y: np.ndarray) -> float:
    """y^T R^{-1} y via one triangular solve; nonnegative."""
    y = np.asarray(y, dtype=float)
    if y.shape != (factor.n,):
        raise ValueError(f"expected a vector of length {factor.n}, got shape {y.shape}")
    z = la.solve_triangular(factor.lower, y, lower=True)
    return float(z @ z)


def solve(factor: CholFactor, b: np.ndarray) -> np.ndarray:
    """R^{-1} b for a vector or matrix right-hand side."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.n:
        raise ValueError(f"leading dimension must be {factor.n}, got shape {b.shape}")
    return la.cho_solve((factor.lower, True), b)


def qf_mean(a: np.ndarray, sigma: np.ndarray) -> float:
    """E[V^T A V] = tr(A cov(V)) for a centered Gaussian V with cov(V) = sigma."""
    a = np.asarray(a, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if a.shape != sigma.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"shape mismatch: A {a.shape} vs cov {sigma.shape}")
    return float(np.sum(a * sigma.T))


def qf_cov(a: np.ndarray, b: np.ndarray, sigma: np.ndarray) -> float:
    """cov(V^T A V, V^T B V) = 2 tr(A cov(V) B cov(V)), with A, B symmetrized."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if not (a.shape == b.shape == sigma.shape) or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"shape mismatch: A {a.shape}, B {b.shape}, cov {sigma.shape}")
    a_sym = 0.5 * (a + a.T)
    b_sym = 0.5 * (b + b.T)
    m1 = a_sym @ sigma
    m2 = b_sym @ sigma
    return 2.0 * float(np.sum(m1 * m2.T))


def eig_extremes(cov: np.ndarray) -> tuple[float, float]:
    """(smallest, largest) eigenvalue of a symmetric matrix."""
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    if n == 1:
        return float(cov[0, 0]), float(cov[0, 0])
    lo = la.eigh(cov, eigvals_only=True, subset_by_index=[0, 0])[0]
    hi = la.eigh(cov, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0]
    return float(lo), float(hi)


def gershgorin_upper(cov: np.ndarray) -> float:
    """Row-sum upper bound on the largest eigenvalue: max_i sum_j |R_ij|."""
    cov = np.asarray(cov, dtype=float)
    return float(np.max(np.sum(np.abs(cov), axis=1)))
