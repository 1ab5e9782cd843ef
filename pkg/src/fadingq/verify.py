"""Cross-verification suite: series vs matrix oracle vs simulators vs closed forms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats as sps

from . import analytic as an
from .markov import build_chain, stationary_solve
from .sim import SimConfig, compare_epochs, run_continuous, run_discrete, total_variation

__all__ = ["Check", "run_checks", "format_table", "tail_slope", "FAULTS"]

FAULTS = ("phi-sign",)


@dataclass(frozen=True)
class Check:
    name: str
    theta: float
    value: float
    bound: float
    passed: bool
    relation: str = "<="

    def row(self):
        return (self.name, f"{self.theta:g}", f"{self.value:.4g}", f"{self.relation} {self.bound:g}",
                "PASS" if self.passed else "FAIL")


def _le(name, theta, value, bound):
    return Check(name, theta, float(value), float(bound), bool(value <= bound))


def _ge(name, theta, value, bound):
    return Check(name, theta, float(value), float(bound), bool(value >= bound), ">=")


def tail_slope(pi, k_lo=10, k_hi=30):
    """Least-squares slope of ln pi_k over k_lo..k_hi."""
    k = np.arange(k_lo, k_hi + 1)
    return float(np.polyfit(k, np.log(pi[k_lo:k_hi + 1]), 1)[0])


def _series_pi(theta, fault, tail_tol=1e-10):
    d = an.stationary_distribution(theta, tail_tol)
    if fault == "phi-sign":
        return an.pi_from_phi(np.asarray(d.phi), sign=+1.0)
    return np.asarray(d.pi)


def chi_square_service(service_times, theta, min_expected=5.0):
    """Chi-square goodness of fit of integer service times to Poisson(theta).

    Bins with small expected counts are merged into a final tail bin.
    """
    n = len(service_times)
    counts = np.bincount(service_times)
    obs, exp = [], []
    k = 0
    while True:
        e = n * an.service_pmf(theta, k)
        tail_e = n * an.ServiceDistribution(theta).tail(k + 1) if theta < 1 else 0.0
        if e < min_expected or tail_e < min_expected:
            obs.append(counts[k:].sum())
            exp.append(n * an.ServiceDistribution(theta).tail(k))
            break
        obs.append(counts[k] if k < len(counts) else 0)
        exp.append(e)
        k += 1
    obs = np.array(obs, dtype=float)
    exp = np.array(exp)
    exp *= n / exp.sum()
    res = sps.chisquare(obs, exp)
    return float(res.statistic), float(res.pvalue)


def run_checks(thetas=(0.2, 0.5, 0.8), num_blocks=1_000_000, seed=20240601,
               fault: Optional[str] = None, chain_n=400):
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    checks = []
    for theta in thetas:
        theta = an.check_theta(theta)
        pi = _series_pi(theta, fault)
        oracle = stationary_solve(build_chain(theta, chain_n), 1e-12)
        n = len(pi)
        checks.append(_le("series pi0 = 1 - theta", theta, abs(pi[0] - (1 - theta)), 1e-10))
        checks.append(_le("matrix pi0 = 1 - theta", theta, abs(oracle[0] - (1 - theta)), 1e-9))
        checks.append(_le("series vs matrix sup-norm", theta, np.max(np.abs(pi - oracle[:n])), 1e-8))
        checks.append(_le("normalization |sum pi - 1|", theta, abs(math.fsum(pi) - 1), 1e-8))
        checks.append(_le("mean queue vs Little", theta,
                          abs(math.fsum(np.arange(n) * pi) - an.mean_queue_length(theta)), 1e-6))

        bd = an.mean_delay(theta)
        checks.append(_le("E[D] closed form = E[T]+E[W]+E[V]", theta,
                          abs(an.delay_closed_form(theta) - (bd.mean_service + bd.mean_wait + bd.mean_vestige)),
                          1e-12))
        checks.append(_le("E[V] two routes agree", theta,
                          abs(an.mean_vestige(theta) - an.mean_vestige_by_components(theta)), 1e-10))

        cont = run_continuous(SimConfig(theta=theta, num_blocks=num_blocks, seed=seed))
        disc = run_discrete(SimConfig(theta=theta, engine="discrete", num_blocks=num_blocks, seed=seed + 1))
        m = cont.metrics()
        checks.append(_le("sim E[D] |z| (3 sigma)", theta,
                          abs(m["mean_delay"] - bd.mean_delay) / m["mean_delay_se"], 3.0))
        checks.append(_le("sim E[V] |z| (3 sigma)", theta,
                          abs(m["mean_vestige"] - bd.mean_vestige) / m["mean_vestige_se"], 3.0))
        _, p = chi_square_service(cont.service_times, theta)
        checks.append(_ge("service time ~ Poisson chi2 p", theta, p, 0.01))
        checks.append(_le("continuous vs discrete TV", theta,
                          total_variation(cont.queue_length_histogram_departure,
                                          disc.queue_length_histogram_departure), 0.01))
        checks.append(_le("departure vs boundary TV", theta, compare_epochs(cont).tv,
                          0.015 if theta >= 0.8 else 0.01))
        checks.append(_le("sim departure histogram vs pi TV", theta,
                          total_variation(cont.queue_length_histogram_departure, pi), 0.01))

        if abs(theta - 0.5) < 1e-12:
            phi, _ = an.phi_series(theta, 31)
            tail = an.pi_from_phi(phi, sign=+1.0 if fault == "phi-sign" else -1.0)
            slope = tail_slope(tail)
            target = -math.log(an.singularity(theta))
            checks.append(_le("tail slope rel. error vs -ln z*", theta, abs(slope / target - 1), 0.05))

            ex = run_continuous(SimConfig(theta=theta, capacity_mode="exact", rho=0.01,
                                          num_blocks=num_blocks, seed=seed + 2))
            gap = abs(ex.metrics()["mean_queue_departure"] / an.mean_queue_length(theta) - 1)
            checks.append(_le("exact capacity rho=0.01 mean queue rel. gap", theta, gap, 0.03))
    return checks


def format_table(checks):
    rows = [("check", "theta", "value", "bound", "result")] + [c.row() for c in checks]
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)) for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
