"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (visible without ``-s``) and then
asserts, so a failing criterion is reported by pytest as well.
"""

import math
import time

import numpy as np
import pytest

from fadingq import analytic as an
from fadingq.cli import main
from fadingq.markov import build_chain, stationary_solve
from fadingq.sim import SimConfig, compare_epochs, run_continuous, total_variation
from fadingq.verify import chi_square_service, tail_slope

GRID_9 = [round(0.1 * i, 1) for i in range(1, 10)]
GRID_99 = np.linspace(0.01, 0.99, 99)
# mpmath (30 digits): 0.75 + 1/2 + int_0^1 (x - 1) e^{-1/(2x)} dx
ED_HALF = 1.144960501950625


@pytest.fixture
def report(capsys):
    def _report(n, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title} | {detail}")
        assert ok, detail
    return _report


def test_criterion_01_zero_state(report):
    t0 = time.perf_counter()
    series_err = matrix_err = 0.0
    for theta in GRID_9:
        series_err = max(series_err, abs(an.stationary_distribution(theta).pi[0] - (1 - theta)))
        matrix_err = max(matrix_err, abs(stationary_solve(build_chain(theta, 400))[0] - (1 - theta)))
    elapsed = time.perf_counter() - t0
    ok = series_err <= 1e-10 and matrix_err <= 1e-9 and elapsed < 5
    report(1, "pi0 = 1 - theta (series, matrix)", ok,
           f"series {series_err:.2e} <= 1e-10, matrix {matrix_err:.2e} <= 1e-9, {elapsed:.2f} s < 5 s")


def test_criterion_02_oracle_equivalence(report):
    t0 = time.perf_counter()
    sup = 0.0
    for theta in (0.2, 0.5, 0.8):
        pi = an.stationary_distribution(theta).pi
        oracle = stationary_solve(build_chain(theta, 400), 1e-12)
        sup = max(sup, float(np.max(np.abs(pi - oracle[:len(pi)]))))
    elapsed = time.perf_counter() - t0
    report(2, "series vs matrix oracle (N=400)", sup <= 1e-8 and elapsed < 30,
           f"sup-norm {sup:.2e} <= 1e-8, {elapsed:.2f} s < 30 s")


def test_criterion_03_normalization_and_mean(report):
    mass_err = mean_err = 0.0
    for theta in GRID_9:
        d = an.stationary_distribution(theta)
        mass_err = max(mass_err, abs(d.total_mass() - 1))
        mean_err = max(mean_err, abs(d.mean() - an.mean_queue_length(theta)))
    report(3, "sum pi = 1 and sum k pi_k = Little mean", mass_err <= 1e-8 and mean_err <= 1e-6,
           f"|sum - 1| {mass_err:.2e} <= 1e-8, |mean error| {mean_err:.2e} <= 1e-6")


def test_criterion_04_delay(report):
    t0 = time.perf_counter()
    ident = 0.0
    for theta in GRID_99:
        bd = an.mean_delay(theta)
        ident = max(ident, abs(an.delay_closed_form(theta) - (bd.mean_service + bd.mean_wait + bd.mean_vestige)))
    ed = an.mean_delay(0.5).mean_delay
    m = run_continuous(SimConfig(theta=0.5, num_blocks=1_000_000, seed=20240601)).metrics()
    z = abs(m["mean_delay"] - ed) / m["mean_delay_se"]
    elapsed = time.perf_counter() - t0
    ok = ident <= 1e-12 and abs(ed - ED_HALF) <= 1e-9 and z <= 3 and m["packets"] >= 900_000 and elapsed < 60
    report(4, "E[D] = E[T]+E[W]+E[V]; simulation at theta=0.5", ok,
           f"identity {ident:.1e} <= 1e-12, E[D]={ed:.7f}, sim {m['mean_delay']:.5f} "
           f"(z={z:.2f} <= 3, {m['packets']} packets), {elapsed:.1f} s < 60 s")


def test_criterion_05_vestige(report, cont_runs):
    route_err = max(abs(an.mean_vestige(t) - an.mean_vestige_by_components(t)) for t in GRID_99)
    ev_max = max(an.mean_vestige(t) for t in GRID_99)
    zs = []
    for theta in (0.2, 0.5, 0.8):
        m = cont_runs[theta].metrics()
        zs.append(abs(m["mean_vestige"] - an.mean_vestige(theta)) / m["mean_vestige_se"])
    ok = route_err <= 1e-10 and ev_max < 0.5 and max(zs) <= 3
    report(5, "vestige routes agree, E[V] < 0.5, simulated E[V]", ok,
           f"routes {route_err:.1e} <= 1e-10, max E[V] {ev_max:.4f} < 0.5, "
           f"z = {', '.join(f'{z:.2f}' for z in zs)} <= 3")


def test_criterion_06_memoryless(report, cont_runs, disc_runs):
    st = cont_runs[0.5]
    _, p = chi_square_service(st.service_times, 0.5)
    tv = total_variation(st.queue_length_histogram_departure, disc_runs[0.5].queue_length_histogram_departure)
    ok = p > 0.01 and tv < 0.01 and len(st.service_times) >= 900_000
    report(6, "service times ~ Poisson; continuous vs discrete", ok,
           f"chi2 p {p:.3f} > 0.01 ({len(st.service_times)} packets), TV {tv:.4f} < 0.01")


def test_criterion_07_epochs(report, cont_runs):
    bounds = {0.2: 0.01, 0.5: 0.01, 0.8: 0.015}
    tvs = {t: compare_epochs(cont_runs[t]).tv for t in bounds}
    ok = all(tvs[t] < b for t, b in bounds.items())
    report(7, "departure vs block-boundary histograms", ok,
           ", ".join(f"theta={t}: TV {tvs[t]:.2e} < {b}" for t, b in bounds.items()))


def test_criterion_08_tail(report):
    phi, _ = an.phi_series(0.5, 31)
    slope = tail_slope(an.pi_from_phi(phi), 10, 30)
    target = -math.log(an.singularity(0.5))
    rel = abs(slope / target - 1)
    report(8, "ln pi_k slope vs -ln z*", rel <= 0.05,
           f"slope {slope:.5f}, -ln z* {target:.5f}, rel. error {rel:.2e} <= 0.05")


def test_criterion_09_figures(report, tmp_path, capsys):
    code = main(["sweep", "--out-dir", str(tmp_path)])
    capsys.readouterr()
    delay = np.loadtxt(tmp_path / "delay_vs_theta.csv", delimiter=",", skiprows=2)
    ed = delay[:, 4]
    increasing = bool(np.all(np.diff(ed) > 0))
    diverging = an.mean_delay(1 - 1e-4).mean_delay > 1e3
    pis = {t: np.loadtxt(tmp_path / f"pi_vs_k_theta{t}.csv", delimiter=",", skiprows=2)[:, 1]
           for t in ("0.2", "0.5", "0.8")}
    n = min(len(p) for p in pis.values())
    ordered = bool(np.all(pis["0.8"][3:n] > pis["0.5"][3:n]) and np.all(pis["0.5"][3:n] > pis["0.2"][3:n]))
    ok = code == 0 and increasing and diverging and ordered and np.all(delay[:, 3] < 0.5)
    report(9, "sweep monotone, pi_k ordered by theta for k >= 3", ok,
           f"E[D] increasing {increasing}, E[D](1-1e-4) > 1e3 {diverging}, pi ordered on k=3..{n - 1} {ordered}")


def test_criterion_10_low_snr(report):
    target = an.mean_queue_length(0.5)
    gaps = {}
    for rho in (0.01, 1.0):
        st = run_continuous(SimConfig(theta=0.5, capacity_mode="exact", rho=rho,
                                      num_blocks=1_000_000, seed=20240603))
        gaps[rho] = st.metrics()["mean_queue_departure"] / target - 1
    report(10, "exact capacity vs low-SNR mean queue", abs(gaps[0.01]) <= 0.03,
           f"rho=0.01 gap {gaps[0.01]:+.2%} (|gap| <= 3%); rho=1 gap {gaps[1.0]:+.1%} (diagnostic)")
