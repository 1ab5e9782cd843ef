import math

import numpy as np
import pytest
from scipy import linalg

from fadingq import analytic as an
from fadingq.exceptions import ConvergenceError, DomainError, UnstableLoadError
from fadingq.markov import build_chain, gth_solve, power_iterate, stationary_solve

PI1_HALF = 0.324360635350064


@pytest.fixture(scope="module")
def chain400():
    return build_chain(0.5, 400)


def test_matrix_structure(chain400):
    P = chain400.P
    np.testing.assert_array_equal(P[0], P[1])
    assert P[3, 1] == 0.0
    assert P[2, 1] == pytest.approx(math.exp(-0.5), abs=1e-16)
    assert np.max(np.abs(P.sum(axis=1) - 1)) <= 1e-12
    for i in range(2, 50):
        assert np.all(P[i, :i - 1] == 0)
    assert np.all(P >= 0)


def test_matrix_read_only(chain400):
    with pytest.raises(ValueError):
        chain400.matrix[0, 0] = 1.0


def test_small_n_rejected():
    with pytest.raises(DomainError):
        build_chain(0.5, 5)


def test_tail_tolerance_suggests_n():
    with pytest.raises(DomainError, match=r"N >= \d+"):
        build_chain(0.9, 20, tail_tol=1e-12)
    build_chain(0.5, 400, tail_tol=1e-12)


def test_unstable_rejected():
    with pytest.raises(UnstableLoadError):
        build_chain(1.1, 50)


def test_solution_head(chain400):
    pi = stationary_solve(chain400)
    assert abs(pi[0] - 0.5) <= 1e-9
    assert pi[1] == pytest.approx(PI1_HALF, abs=1e-12)
    assert math.fsum(pi) == pytest.approx(1.0, abs=1e-15)
    assert np.max(np.abs(pi @ chain400.P - pi)) < 1e-10


def test_gth_matches_dense_solver():
    P = build_chain(0.3, 60).P
    n = P.shape[0]
    A = np.vstack([(P.T - np.eye(n))[:-1], np.ones(n)])
    b = np.zeros(n)
    b[-1] = 1.0
    np.testing.assert_allclose(gth_solve(P), linalg.solve(A, b), atol=1e-14)


def test_power_iteration_agrees():
    P = build_chain(0.5, 80).P
    np.testing.assert_allclose(power_iterate(P, 1e-13), gth_solve(P), atol=1e-11)


def test_power_iteration_budget():
    with pytest.raises(ConvergenceError):
        power_iterate(build_chain(0.9, 200).P, 1e-14, max_iter=3)


def test_large_n_uses_iteration():
    pi = stationary_solve(build_chain(0.3, 2100), 1e-10)
    assert abs(pi[0] - 0.7) <= 1e-9


def test_tolerance_domain(chain400):
    with pytest.raises(DomainError):
        stationary_solve(chain400, 1e-6)


@pytest.mark.parametrize("theta", [0.2, 0.5, 0.8])
def test_series_agreement(theta):
    series = an.stationary_distribution(theta, 1e-10).pi
    oracle = stationary_solve(build_chain(theta, 400), 1e-12)
    assert np.max(np.abs(series - oracle[:len(series)])) <= 1e-8


def test_truncation_insensitivity(chain400):
    a = stationary_solve(build_chain(0.5, 200))[:51]
    b = stationary_solve(chain400)[:51]
    assert np.max(np.abs(a - b)) < 1e-10


def test_tiny_tail_keeps_relative_accuracy(chain400):
    pi = stationary_solve(chain400)
    r = an.decay_rate(0.5)
    # far in the tail the ratio is still the geometric decay rate
    assert pi[201] / pi[200] == pytest.approx(r, rel=1e-3)
