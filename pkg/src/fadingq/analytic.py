"""Closed-form queueing results for the discretized D/G/1 queue.

Packets of ``Lp`` nats arrive one per block; per-block service is
exponential with mean ``nu``, so the integer service time of a packet is
Poisson(theta) with theta = Lp / nu.  Everything here is a function of theta
alone and is measured in packets or blocks.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .exceptions import ConvergenceError, DomainError, UnstableLoadError
from .special import (
    exp_neg_over,
    integrate_adaptive,
    lambert_w_minus1_conjugate,
    log_poisson_term,
    regularized_gamma_lower,
    regularized_gamma_upper,
)

__all__ = [
    "THETA_MIN",
    "THETA_MAX",
    "ServiceDistribution",
    "StationaryDistribution",
    "DelayBreakdown",
    "VestigeModel",
    "check_theta",
    "service_pmf",
    "service_pgf",
    "stationary_pgf",
    "phi_series",
    "stationary_distribution",
    "mean_queue_length",
    "decay_rate",
    "singularity",
    "vestige_integrals",
    "mean_vestige",
    "mean_vestige_by_components",
    "vestige_cdf_v0",
    "vestige_uk_cdf",
    "vestige_vk_cdf",
    "mean_delay",
    "delay_closed_form",
]

THETA_MIN = 1e-6
THETA_MAX = 1.0 - 1e-6

QUAD_REL_TOL = 1e-13
# inner Borel-type sums stop once a term is this small relative to the partial sum
SERIES_REL_CUTOFF = 1e-16
SERIES_TERM_BUDGET = 2_000_000
SERIES_CHUNK = 1024


def check_theta(theta):
    """Validate a load for the stationary formulas and return it as float."""
    theta = float(theta)
    if theta >= 1.0:
        raise UnstableLoadError(
            f"theta={theta!r} >= 1: the queue is unstable and has no stationary law"
        )
    if not (THETA_MIN <= theta <= THETA_MAX):
        raise DomainError(
            f"theta={theta!r} outside the supported window [{THETA_MIN}, {THETA_MAX}]"
        )
    return theta


# -- service time -----------------------------------------------------------


def service_pmf(theta, k):
    """Pr{T = k} = exp(-theta) theta^k / k!, evaluated in log space."""
    if not theta > 0:
        raise DomainError("theta must be positive")
    if int(k) != k or k < 0:
        raise DomainError("k must be a nonnegative integer")
    return math.exp(log_poisson_term(int(k), float(theta)))


def service_pgf(theta, z):
    """G(z) = E[z^T] = exp(theta (z - 1))."""
    if isinstance(z, complex):
        return cmath.exp(theta * (z - 1))
    return math.exp(theta * (z - 1))


@dataclass(frozen=True)
class ServiceDistribution:
    """Poisson law of the integer service time T (blocks)."""

    theta: float

    def __post_init__(self):
        check_theta(self.theta)

    def pmf(self, k):
        return service_pmf(self.theta, k)

    def pgf(self, z):
        return service_pgf(self.theta, z)

    @property
    def mean(self):
        return self.theta

    def tail(self, k):
        """Pr{T >= k}."""
        if k <= 0:
            return 1.0
        return regularized_gamma_lower(k, self.theta)


# -- stationary queue length ------------------------------------------------


def singularity(theta):
    """Dominant singularity z* > 1 of the stationary PGF."""
    return lambert_w_minus1_conjugate(check_theta(theta))


def decay_rate(theta):
    """Geometric tail rate 1/z* of the stationary queue length."""
    return 1.0 / singularity(theta)


def mean_queue_length(theta):
    """E[L] = theta (2 - theta) / (2 (1 - theta)) packets."""
    theta = check_theta(theta)
    return theta * (2.0 - theta) / (2.0 * (1.0 - theta))


def stationary_pgf(theta, z):
    """L(z) = (1 - theta)(1 - z) / (1 - z exp(theta (1 - z))) for |z| < z*.

    Real or complex ``z``.  Near z = 1 the removable singularity is replaced
    by its first-order expansion (1 - theta) / ((1 - theta) - theta (1 - theta/2)(z - 1)).
    """
    theta = check_theta(theta)
    zstar = lambert_w_minus1_conjugate(theta)
    if abs(z) >= zstar:
        raise DomainError(
            f"|z|={abs(z)!r} is outside the disc of convergence; the PGF has a pole at "
            f"z*={zstar!r} (lower-branch Lambert W singularity)"
        )
    w = z - 1
    if abs(w) < 1e-8:
        return (1 - theta) / ((1 - theta) - theta * (1 - theta / 2) * w)
    # 1 - z e^{-theta w} = -expm1(log z - theta w); avoids cancellation near z = 1
    if isinstance(z, complex):
        return (1 - theta) * (1 - z) / (1 - z * cmath.exp(-theta * w))
    if z > 0:
        return (1 - theta) * w / math.expm1(math.log1p(w) - theta * w)
    return (1 - theta) * (1 - z) / (1 - z * math.exp(-theta * w))


def _term_ratio_bound(theta, k, j):
    # sup of t_{j+1}/t_j over j' >= j; the ratio tends to theta e^(1-theta) from above
    # for k >= 2 and is decreasing there, so max(f(j), limit) bounds the tail ratio.
    f = theta * math.exp(-theta) * (j + 1) / (j + k + 1) * math.exp((j + k) * math.log1p(1.0 / j))
    return max(f, theta * math.exp(1.0 - theta))


def _phi_inner(theta, k):
    """Return (S, R, n): S = sum_{j>=1} (j theta)^(k+j) e^(-j theta) / (k+j)!,
    R a bound on the neglected remainder, n the number of terms used."""
    log_theta = math.log(theta)
    chunk_sums = []
    start = 1
    while True:
        j = np.arange(start, start + SERIES_CHUNK, dtype=float)
        n = k + j
        logt = n * (np.log(j) + log_theta) - j * theta - gammaln(n + 1.0)
        t = np.exp(logt)
        chunk_sums.append(math.fsum(t))
        partial = math.fsum(chunk_sums)
        last_j = start + SERIES_CHUNK - 1
        last = float(t[-1])
        ratio = _term_ratio_bound(theta, k, last_j)
        if ratio < 1.0 and last < SERIES_REL_CUTOFF * partial and t[-1] <= t[-2]:
            remainder = last * ratio / (1.0 - ratio)
            return partial, remainder, last_j
        start += SERIES_CHUNK
        if start > SERIES_TERM_BUDGET:
            raise ConvergenceError(
                f"phi series for theta={theta!r}, k={k} did not converge within "
                f"{SERIES_TERM_BUDGET} terms"
            )


def phi_series(theta, n_max):
    """phi_k = (1 - theta) sum_{j>=1} (j theta)^(k+j) e^(-j theta) / (k+j)!  for k = 0..n_max.

    phi_k is the stationary tail mass Pr{L > k}.  Returns (phi, remainder)
    arrays; remainder[k] bounds the truncation error of phi[k].
    """
    theta = check_theta(theta)
    phi = np.empty(n_max + 1)
    rem = np.empty(n_max + 1)
    for k in range(n_max + 1):
        s, r, _ = _phi_inner(theta, k)
        phi[k] = (1.0 - theta) * s
        rem[k] = (1.0 - theta) * r
    return phi, rem


def _geometric_truncation(theta, tail_tol, zstar):
    r = 1.0 / zstar
    # smallest N with (1 - theta) r^N / (1 - r) < tail_tol
    n = math.log(tail_tol * (1.0 - r) / (1.0 - theta)) / math.log(r)
    return max(int(math.floor(n)) + 1, 1)


def pi_from_phi(phi, sign=-1.0):
    """pi_k = phi_{k-1} + sign * phi_k with phi_{-1} = 1.

    ``sign=+1`` is the fault-injection hook used to check that the
    verification suite detects a corrupted series.
    """
    head = np.concatenate(([1.0], phi[:-1]))
    return head + sign * phi


@dataclass(frozen=True)
class StationaryDistribution:
    """Stationary queue length law pi_0..pi_N with its truncation certificate.

    The same law holds at departure epochs and at block boundaries.
    """

    theta: float
    probabilities: np.ndarray
    truncation_N: int
    tail_mass_bound: float
    decay_rate: float
    series_remainder: float = 0.0
    phi: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.probabilities.setflags(write=False)
        if self.phi is not None:
            self.phi.setflags(write=False)

    def __len__(self):
        return len(self.probabilities)

    def __getitem__(self, k):
        return self.probabilities[k]

    @property
    def pi(self):
        return self.probabilities

    def total_mass(self):
        return math.fsum(self.probabilities)

    def mean(self):
        return math.fsum(np.arange(len(self.probabilities)) * self.probabilities)

    def pgf(self, z):
        """Truncated power series sum_k pi_k z^k."""
        return sum(p * z**k for k, p in enumerate(self.probabilities))


def stationary_distribution(theta, tail_tol=1e-10):
    """Stationary queue length distribution from the phi series.

    pi_k = phi_{k-1} - phi_k with phi_{-1} = 1.  The vector length N + 1 is
    first chosen from the geometric certificate (1-theta) (1/z*)^N / (1 - 1/z*)
    < tail_tol, then extended until the computed tail phi_N (plus its series
    remainder) is below tail_tol.
    """
    theta = check_theta(theta)
    if not (0.0 < tail_tol <= 1e-3):
        raise DomainError("tail_tol must lie in (0, 1e-3]")
    zstar = lambert_w_minus1_conjugate(theta)
    n = _geometric_truncation(theta, tail_tol, zstar)
    phi, rem = phi_series(theta, n)
    while phi[-1] + rem[-1] > tail_tol:
        extra = max(4, n // 4)
        more_phi = np.empty(extra)
        more_rem = np.empty(extra)
        for i in range(extra):
            s, r, _ = _phi_inner(theta, n + 1 + i)
            more_phi[i] = (1.0 - theta) * s
            more_rem[i] = (1.0 - theta) * r
        phi = np.concatenate((phi, more_phi))
        rem = np.concatenate((rem, more_rem))
        n += extra
        if n > 100_000:
            raise ConvergenceError("stationary distribution truncation exceeded 1e5 states")

    pi = pi_from_phi(phi)
    if abs(pi[0] - (1.0 - theta)) > 1e-10:
        raise ConvergenceError(
            f"pi_0={pi[0]!r} disagrees with 1 - theta={1 - theta!r}; series inaccurate"
        )
    if np.any(pi < -1e-15):
        raise ConvergenceError("negative probabilities from the phi series")
    pi = np.clip(pi, 0.0, None)
    return StationaryDistribution(
        theta=theta,
        probabilities=pi,
        truncation_N=n,
        tail_mass_bound=float(phi[-1] + rem[-1]),
        decay_rate=1.0 / zstar,
        series_remainder=float(rem.max()),
        phi=phi,
    )


# -- vestige time and delay -------------------------------------------------


def vestige_integrals(theta):
    """Return (J0, J1) = (int_0^1 e^{-theta/x} dx, int_0^1 x e^{-theta/x} dx)."""
    theta = check_theta(theta)
    j0 = integrate_adaptive(lambda x: exp_neg_over(theta, x), 0.0, 1.0, QUAD_REL_TOL, fa=0.0)
    j1 = integrate_adaptive(lambda x: x * exp_neg_over(theta, x), 0.0, 1.0, QUAD_REL_TOL, fa=0.0)
    return j0.value, j1.value


def _vestige_integral(theta):
    # I(theta) = int_0^1 (x - 1) e^{-theta/x} dx
    res = integrate_adaptive(
        lambda x: (x - 1.0) * exp_neg_over(theta, x), 0.0, 1.0, QUAD_REL_TOL, fa=0.0
    )
    return res.value


def mean_vestige(theta):
    """E[V] = 1/2 + int_0^1 (x - 1) e^{-theta/x} dx, in blocks."""
    theta = check_theta(theta)
    return 0.5 + _vestige_integral(theta)


def mean_vestige_by_components(theta, parts=False):
    """E[V] assembled by conditioning on the service time.

    E[V] = E[V0-] Pr{T=0} + sum_{k>=1} E[Vk-] Pr{T=k} with
    E[V0-] = 1 - e^theta J0 and the k >= 1 sum equal to 1/2 - e^-theta + J1.
    With ``parts=True`` a dict of the intermediate quantities is returned too.
    """
    theta = check_theta(theta)
    j0, j1 = vestige_integrals(theta)
    p0 = math.exp(-theta)
    ev0 = 1.0 - math.exp(theta) * j0
    rest = 0.5 - p0 + j1
    total = math.fsum((ev0 * p0, rest))
    if parts:
        return total, {"E_V0_minus": ev0, "p0": p0, "sum_k_ge_1": rest, "J0": j0, "J1": j1}
    return total


def vestige_cdf_v0(theta, x, conditioned=False):
    """CDF of the vestige of a packet finished within one block.

    Unconditioned: Pr{V0 <= x} = exp(-theta / x), x > 0.
    Conditioned on V0 < 1: exp(theta (1 - 1/x)) for 0 < x <= 1.
    """
    if not x > 0:
        raise DomainError("vestige CDF needs x > 0")
    if conditioned:
        if x > 1:
            raise DomainError("conditioned vestige lives on (0, 1]")
        return math.exp(theta * (1.0 - 1.0 / x))
    return math.exp(-theta / x)


@dataclass(frozen=True)
class VestigeModel:
    """Scale parameters of the vestige-time sub-model."""

    theta: float
    packet_size: float
    nu: float

    def __post_init__(self):
        if abs(self.theta - self.packet_size / self.nu) > 1e-12 * max(1.0, self.theta):
            raise DomainError("VestigeModel requires theta = packet_size / nu")

    @classmethod
    def from_theta(cls, theta, nu=1.0):
        return cls(theta=theta, packet_size=theta * nu, nu=nu)


def vestige_uk_cdf(model: VestigeModel, k, x, conditioned=False):
    """CDF of the residual packet U_k = Lp - S_k after k blocks.

    F_{U_k}(x) = Q(k, (Lp - x)/nu) for x < Lp.  Conditioned on U_k > 0:
    (Q(k, (Lp - x)/nu) - Q(k, theta)) / P(k, theta) for 0 < x < Lp.
    """
    if int(k) != k or k < 1:
        raise DomainError("k must be a positive integer")
    lp, nu, theta = model.packet_size, model.nu, model.theta
    if x >= lp:
        raise DomainError("U_k lives below the packet size")
    if conditioned and x <= 0:
        raise DomainError("conditioned U_k lives on (0, Lp)")
    q = regularized_gamma_upper(k, (lp - x) / nu)
    if not conditioned:
        return q
    return (q - regularized_gamma_upper(k, theta)) / regularized_gamma_lower(k, theta)


def vestige_vk_cdf(model: VestigeModel, k, x, conditioned=True):
    """CDF of the vestige V_k = U_k+ / s for a packet with service time k >= 1.

    Conditioned on V_k < 1 (i.e. given T = k):
    F(x) = k int_0^1 (1 - t)^(k-1) exp(theta t (1 - 1/x)) dt, 0 < x <= 1.
    Unconditioned (given only U_k > 0) the same integral is scaled by
    Pr{V_k < 1} = e^-theta theta^k / (k! P(k, theta)), valid for 0 < x <= 1.
    """
    if int(k) != k or k < 1:
        raise DomainError("k must be a positive integer")
    if not (0 < x <= 1):
        raise DomainError("V_k CDF implemented on (0, 1]")
    theta = model.theta
    c = theta * (1.0 - 1.0 / x)
    val = k * integrate_adaptive(
        lambda t: (1.0 - t) ** (k - 1) * math.exp(c * t), 0.0, 1.0, 1e-12
    ).value
    if conditioned:
        return val
    below_one = service_pmf(theta, k) / regularized_gamma_lower(k, theta)
    return val * below_one


@dataclass(frozen=True)
class DelayBreakdown:
    """Mean packet delay D = T + W + V (blocks)."""

    theta: float
    mean_service: float
    mean_wait: float
    mean_vestige: float
    mean_delay: float

    def as_dict(self):
        return {
            "theta": self.theta,
            "E_T": self.mean_service,
            "E_W": self.mean_wait,
            "E_V": self.mean_vestige,
            "E_D": self.mean_delay,
        }


def delay_closed_form(theta):
    """E[D] = 1/2 + theta + theta^2 / (2 (1 - theta)) + int_0^1 (x - 1) e^{-theta/x} dx."""
    theta = check_theta(theta)
    return math.fsum((0.5, theta, theta * theta / (2.0 * (1.0 - theta)), _vestige_integral(theta)))


def mean_delay(theta):
    """Mean delay decomposition; E[T] + E[W] is the mean queue length (Little)."""
    theta = check_theta(theta)
    eq = mean_queue_length(theta)
    ev = mean_vestige(theta)
    return DelayBreakdown(
        theta=theta,
        mean_service=theta,
        mean_wait=eq - theta,
        mean_vestige=ev,
        mean_delay=eq + ev,
    )
