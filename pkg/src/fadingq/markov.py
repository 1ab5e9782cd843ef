"""Truncated embedded Markov chain, used as an independent check on the series.

The queue length after departures evolves as L' = max(L - 1, 0) + T with
T ~ Poisson(theta).  States are cut at N; the last column absorbs the
Poisson tail so every row stays exactly stochastic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .analytic import check_theta, service_pmf
from .exceptions import ConvergenceError, DomainError
from .special import lambert_w_minus1_conjugate, regularized_gamma_lower

__all__ = ["TruncatedChain", "build_chain", "stationary_solve", "gth_solve", "power_iterate"]

DIRECT_SOLVE_MAX_N = 2000


@dataclass(frozen=True)
class TruncatedChain:
    theta: float
    dimension_N: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def P(self):
        return self.matrix


def _suggest_n(theta, tail_tol):
    r = 1.0 / lambert_w_minus1_conjugate(theta)
    return int(math.ceil(math.log(tail_tol * (1 - r) / (1 - theta)) / math.log(r))) + 1


def build_chain(theta, N, tail_tol=None):
    """Row-stochastic (N+1)x(N+1) transition matrix of the departure-epoch chain.

    P[0, j] = p_j and P[i, j] = p_{j-i+1} for i >= 1; column N carries
    Pr{T >= N - i + 1} (row 0: Pr{T >= N}).  When ``tail_tol`` is given, N must
    be large enough that the geometric stationary tail beyond N is below it.
    """
    theta = check_theta(theta)
    N = int(N)
    if N < 10:
        raise DomainError("truncated chain needs N >= 10")
    if tail_tol is not None:
        need = _suggest_n(theta, tail_tol)
        if N < need:
            raise DomainError(
                f"N={N} too small for tail tolerance {tail_tol:g}; use N >= {need}"
            )
    pmf = np.array([service_pmf(theta, k) for k in range(N + 1)])
    P = np.zeros((N + 1, N + 1))
    P[0, :N] = pmf[:N]
    P[0, N] = regularized_gamma_lower(N, theta)
    for i in range(1, N + 1):
        width = N - i + 1  # columns i-1 .. N-1
        P[i, i - 1:N] = pmf[:width]
        P[i, N] = regularized_gamma_lower(width, theta)
    return TruncatedChain(theta=theta, dimension_N=N, matrix=P)


def gth_solve(P):
    """Stationary vector of a row-stochastic matrix by Grassmann-Taksar-Heyman
    elimination (subtraction-free, so tiny probabilities keep full relative accuracy)."""
    A = np.array(P, dtype=float, copy=True)
    n = A.shape[0]
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    x = np.zeros(n)
    x[0] = 1.0
    for k in range(1, n):
        x[k] = x[:k] @ A[:k, k]
    return x / math.fsum(x)


def power_iterate(P, tol, max_iter=1_000_000):
    """Power iteration from the uniform vector.

    Stops when ||x P - x||_inf < tol and the L1 step ||x P - x||_1 < tol / 10.
    The Poisson rows underflow to exact zeros far from the diagonal, so the
    product runs on a sparse copy.
    """
    PT = sparse.csr_matrix(np.asarray(P).T)
    n = PT.shape[0]
    x = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        y = PT @ x
        y /= y.sum()
        step = np.abs(y - x)
        x = y
        if step.max() < tol and step.sum() < tol / 10:
            return x
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")


def stationary_solve(chain: TruncatedChain, tol=1e-10):
    """Solve pi P = pi, sum(pi) = 1.

    Direct GTH elimination for N <= 2000, power iteration from the uniform
    vector otherwise.  The infinity-norm residual is checked against ``tol``.
    """
    if tol > 1e-8:
        raise DomainError("stationary_solve tolerance must be <= 1e-8")
    P = chain.matrix
    if chain.dimension_N <= DIRECT_SOLVE_MAX_N:
        pi = gth_solve(P)
    else:
        pi = power_iterate(P, tol)
    residual = np.max(np.abs(pi @ P - pi))
    if residual >= tol:
        raise ConvergenceError(f"stationary residual {residual:.3g} exceeds {tol:g}")
    return pi
