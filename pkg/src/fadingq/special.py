"""Special functions and numerical kernels.

Only what the closed forms need: regularized incomplete gamma functions for
integer order, the conjugate root of x*exp(-x) (lower-branch Lambert W) and an
adaptive Simpson integrator that tolerates removable endpoint singularities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from .exceptions import ConvergenceError, DomainError

__all__ = [
    "QuadratureResult",
    "regularized_gamma_upper",
    "regularized_gamma_lower",
    "log_poisson_term",
    "lambert_w_minus1_conjugate",
    "integrate_adaptive",
    "exp_neg_over",
]

DEFAULT_EVAL_BUDGET = 10**6


def log_poisson_term(j, x):
    """Return log(x**j * exp(-x) / j!) for integer j >= 0 and x >= 0."""
    if x == 0.0:
        return 0.0 if j == 0 else -math.inf
    return j * math.log(x) - x - math.lgamma(j + 1)


def _check_order(k):
    if int(k) != k or k < 1:
        raise DomainError(f"incomplete gamma order must be a positive integer, got {k!r}")
    return int(k)


def _poisson_head(k, x):
    # sum_{j<k} x^j e^-x / j!
    return math.fsum(math.exp(log_poisson_term(j, x)) for j in range(k))


def _poisson_tail(k, x):
    # sum_{j>=k} x^j e^-x / j!, terms decay geometrically once j > x
    terms = []
    j = k
    while True:
        t = math.exp(log_poisson_term(j, x))
        terms.append(t)
        if j > x and t <= 1e-18 * max(math.fsum(terms), 1e-300):
            break
        if j > k + 100000 + 10 * x:
            raise ConvergenceError("Poisson tail series did not converge")
        j += 1
    return math.fsum(terms)


def _gamma_pair(k, x):
    """Return (P(k, x), Q(k, x)), computing the smaller one directly."""
    k = _check_order(k)
    if x < 0:
        raise DomainError(f"x must be nonnegative, got {x!r}")
    if x == 0:
        return 0.0, 1.0
    if math.isinf(x):
        return 1.0, 0.0
    # Q is the smaller piece when x lies well above the Poisson median.
    if x > k:
        q = _poisson_head(k, x)
        return 1.0 - q, q
    p = _poisson_tail(k, x)
    return p, 1.0 - p


def regularized_gamma_upper(k, x):
    """Regularized upper incomplete gamma Q(k, x) for integer k >= 1.

    Uses the finite Poisson identity Q(k, x) = sum_{j<k} x^j e^{-x} / j!.
    """
    return _gamma_pair(k, x)[1]


def regularized_gamma_lower(k, x):
    """Regularized lower incomplete gamma P(k, x) = 1 - Q(k, x)."""
    return _gamma_pair(k, x)[0]


def lambert_w_minus1_conjugate(theta, tol=1e-15, max_iter=200):
    """Root z* > 1 of z * exp(theta * (1 - z)) = 1, for 0 < theta < 1.

    Equivalent to z* = -W_{-1}(-theta e^{-theta}) / theta.  Internally solves
    g(x) = ln x - x - (ln theta - theta) = 0 for x > 1 by bisection, then
    polishes with Newton steps; z* = x / theta.
    """
    theta = float(theta)
    if not (0.0 < theta < 1.0):
        if theta == 1.0:
            raise DomainError(
                "theta = 1 is the Lambert W branch point: both roots merge at z* = 1 "
                "and the stationary queue has no geometric decay"
            )
        raise DomainError(f"theta must lie in (0, 1), got {theta!r}")

    c = math.log(theta) - theta

    def g(x):
        return math.log(x) - x - c

    lo, hi = 1.0, 2.0
    while g(hi) > 0:
        lo, hi = hi, 2.0 * hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * hi:
            break
    x = 0.5 * (lo + hi)
    for _ in range(50):
        gx = g(x)
        dg = 1.0 / x - 1.0
        step = gx / dg
        x_new = x - step
        if not (lo <= x_new <= hi):
            break
        x = x_new
        if abs(step) <= tol * x:
            break
    return x / theta


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abs_error_estimate: float
    evaluations: int

    def __post_init__(self):
        if self.abs_error_estimate < 0:
            raise ValueError("abs_error_estimate must be nonnegative")
        if self.evaluations < 1:
            raise ValueError("evaluations must be >= 1")

    def __float__(self):
        return self.value


def exp_neg_over(theta, x):
    """exp(-theta / x) with its limit 0 at x = 0 (theta > 0)."""
    if x <= 0.0:
        return 0.0 if theta > 0 else 1.0
    return math.exp(-theta / x)


def integrate_adaptive(
    f: Callable[[float], float],
    a: float,
    b: float,
    rel_tol: float = 1e-12,
    *,
    fa: Optional[float] = None,
    fb: Optional[float] = None,
    abs_tol: float = 1e-15,
    max_evals: int = DEFAULT_EVAL_BUDGET,
) -> QuadratureResult:
    """Adaptive Simpson quadrature with Richardson correction.

    ``fa``/``fb`` replace f(a)/f(b) when the integrand has a removable
    singularity at an endpoint; only those endpoints are skipped.

    The target absolute error is max(rel_tol * |I|, abs_tol) where |I| is
    taken from a 17-point composite pass.  Raises ConvergenceError when the
    evaluation budget or the floating point resolution of the interval is
    exhausted.
    """
    if not a < b:
        raise DomainError(f"need a < b, got a={a!r}, b={b!r}")

    evals = 0

    def ev(x):
        nonlocal evals
        evals += 1
        y = f(x)
        if not math.isfinite(y):
            raise DomainError(f"integrand is not finite at x={x!r}")
        return y

    # composite pass on 16 panels; also seeds the interval stack
    n0 = 16
    xs = [a + (b - a) * i / n0 for i in range(n0 + 1)]
    ys = [None] * (n0 + 1)
    ys[0] = fa if fa is not None else ev(a)
    ys[-1] = fb if fb is not None else ev(b)
    for i in range(1, n0):
        ys[i] = ev(xs[i])
    rough = (b - a) / (3 * n0) * math.fsum(
        ys[i] * (1 if i in (0, n0) else (4 if i % 2 else 2)) for i in range(n0 + 1)
    )
    target = max(rel_tol * abs(rough), abs_tol)

    stack = []
    for i in range(0, n0, 2):
        x0, x1, x2 = xs[i], xs[i + 1], xs[i + 2]
        whole = (x2 - x0) / 6.0 * (ys[i] + 4 * ys[i + 1] + ys[i + 2])
        stack.append((x0, x2, ys[i], ys[i + 1], ys[i + 2], whole, target * (x2 - x0) / (b - a)))

    pieces = []
    errors = []
    while stack:
        x0, x2, y0, y1, y2, whole, eps = stack.pop()
        x1 = 0.5 * (x0 + x2)
        xl, xr = 0.5 * (x0 + x1), 0.5 * (x1 + x2)
        if not (x0 < xl < x1 < xr < x2):
            raise ConvergenceError(
                f"interval [{x0!r}, {x2!r}] exhausted floating point resolution"
            )
        yl, yr = ev(xl), ev(xr)
        left = (x1 - x0) / 6.0 * (y0 + 4 * yl + y1)
        right = (x2 - x1) / 6.0 * (y1 + 4 * yr + y2)
        delta = left + right - whole
        if abs(delta) <= 15.0 * eps:
            pieces.append(left + right + delta / 15.0)
            errors.append(abs(delta) / 15.0)
        else:
            stack.append((x0, x1, y0, yl, y1, left, 0.5 * eps))
            stack.append((x1, x2, y1, yr, y2, right, 0.5 * eps))
        if evals > max_evals:
            raise ConvergenceError(
                f"adaptive quadrature exceeded its budget of {max_evals} evaluations"
            )
    return QuadratureResult(math.fsum(pieces), math.fsum(errors), max(evals, 1))
