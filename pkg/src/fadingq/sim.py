"""Monte Carlo block simulator with two engines.

``continuous`` follows the physical queue: one packet of Lp nats arrives at
each block boundary, the channel offers s_n nats in block n and packets are
drained FIFO.  ``discrete`` draws the integer service times T ~ Poisson(theta)
directly and evolves the departure-epoch chain.

Timeline convention: packet i arrives at boundary i (end of block i-1) and
may be served during block i.  A packet that finishes inside block b is
counted as leaving at the start of block b, so the boundary sample for block
m is taken after the departures of block m and before the next arrival.

Both engines are vectorized: the FIFO recurrence reduces to running maxima
of cumulative service, which is exact for a work-conserving single server.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .analytic import service_pmf
from .channel import ChannelParams, TrafficParams, _service_from_uniform, block_uniforms
from .exceptions import ConfigurationError

__all__ = [
    "SimConfig",
    "SimStats",
    "EpochComparison",
    "ReplicationSummary",
    "HIST_CAP",
    "default_warmup",
    "run_continuous",
    "run_discrete",
    "run",
    "compare_epochs",
    "total_variation",
    "batch_means",
    "replicate",
]

HIST_CAP = 10_000
ENGINES = ("continuous", "discrete")
SERVICE_STREAM = 0


def default_warmup(theta, num_blocks):
    """max(1e4, 10 / (1 - theta)^2) blocks, capped at a tenth of the run."""
    if theta < 1:
        w = max(10_000, math.ceil(10.0 / (1.0 - theta) ** 2))
    else:
        w = 10_000
    if w >= num_blocks:
        w = num_blocks // 10
    return w


@dataclass(frozen=True)
class SimConfig:
    theta: Optional[float] = None
    engine: str = "continuous"
    capacity_mode: str = "low_snr"
    num_blocks: int = 1_000_000
    warmup_blocks: Optional[int] = None
    seed: int = 0
    replications: int = 1
    rho: Optional[float] = None
    channel: Optional[ChannelParams] = None
    traffic: Optional[TrafficParams] = None

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigurationError(f"engine must be one of {ENGINES}")
        if self.capacity_mode not in ("low_snr", "exact"):
            raise ConfigurationError("capacity_mode must be 'low_snr' or 'exact'")
        if self.traffic is not None:
            if self.channel is None:
                raise ConfigurationError("traffic parameters need a channel")
            if self.theta is not None and abs(self.theta - self.traffic.theta) > 1e-12:
                raise ConfigurationError("theta disagrees with traffic.theta")
            object.__setattr__(self, "theta", self.traffic.theta)
        if self.channel is not None and self.rho is None:
            object.__setattr__(self, "rho", self.channel.rho)
        if self.theta is None or not self.theta > 0:
            raise ConfigurationError("a positive theta (or traffic parameters) is required")
        if self.capacity_mode == "exact" and self.rho is None:
            raise ConfigurationError("exact capacity mode needs rho or a channel")
        if self.num_blocks < 2:
            raise ConfigurationError("num_blocks must be at least 2")
        if self.warmup_blocks is None:
            object.__setattr__(self, "warmup_blocks", default_warmup(self.theta, self.num_blocks))
        if not (0 <= self.warmup_blocks < self.num_blocks):
            raise ConfigurationError("need num_blocks > warmup_blocks >= 0")
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")

    @property
    def nu(self):
        return self.channel.nu if self.channel is not None else 1.0

    @property
    def packet_size(self):
        return self.traffic.packet_size if self.traffic is not None else self.theta * self.nu

    def echo(self):
        d = {
            "engine": self.engine,
            "capacity_mode": self.capacity_mode,
            "theta": self.theta,
            "rho": self.rho,
            "nu_nats": self.nu,
            "packet_size_nats": self.packet_size,
            "num_blocks": self.num_blocks,
            "warmup_blocks": self.warmup_blocks,
            "seed": self.seed,
            "replications": self.replications,
        }
        if self.channel is not None:
            d["channel"] = {k: v for k, v in asdict(self.channel).items() if not k.startswith("_")}
        if self.traffic is not None:
            d["traffic"] = asdict(self.traffic)
        return d


def batch_means(x, n_batches=32):
    """Mean and batch-means standard error of a correlated sequence."""
    x = np.asarray(x, dtype=float)
    n = len(x) // n_batches * n_batches
    if n == 0:
        return float(np.mean(x)) if len(x) else math.nan, math.nan
    b = x[:n].reshape(n_batches, -1).mean(axis=1)
    return float(np.mean(x)), float(b.std(ddof=1) / math.sqrt(n_batches))


def _histogram(values):
    if len(values) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.bincount(np.minimum(values, HIST_CAP)).astype(np.int64)


@dataclass
class SimStats:
    """Per-run samples and histograms.

    Histograms are count arrays indexed by queue length; index HIST_CAP is the
    overflow bin.  ``delay_samples`` and ``vestige_samples`` are in blocks;
    the discrete engine records integer delays and no vestiges.
    """

    config: SimConfig
    queue_length_histogram_departure: np.ndarray
    queue_length_histogram_boundary: np.ndarray
    delay_samples: np.ndarray
    vestige_samples: np.ndarray
    service_times: np.ndarray
    queue_at_departure: np.ndarray
    sojourn_samples: np.ndarray = field(default_factory=lambda: np.zeros(0))
    metadata: dict = field(default_factory=dict)

    @property
    def service_time_histogram(self):
        return _histogram(self.service_times)

    def metrics(self):
        out = {}
        out["packets"] = int(len(self.delay_samples))
        out["boundaries"] = int(self.queue_length_histogram_boundary.sum())
        out["mean_delay"], out["mean_delay_se"] = batch_means(self.delay_samples)
        if len(self.vestige_samples):
            out["mean_vestige"], out["mean_vestige_se"] = batch_means(self.vestige_samples)
        if len(self.sojourn_samples):
            out["mean_sojourn"], out["mean_sojourn_se"] = batch_means(self.sojourn_samples)
        out["mean_queue_departure"], out["mean_queue_departure_se"] = batch_means(
            self.queue_at_departure
        )
        hb = self.queue_length_histogram_boundary
        out["mean_queue_boundary"] = float(np.arange(len(hb)) @ hb / hb.sum()) if hb.sum() else math.nan
        hd = self.queue_length_histogram_departure
        out["p_empty_departure"] = float(hd[0] / hd.sum()) if hd.sum() else math.nan
        out["p_empty_boundary"] = float(hb[0] / hb.sum()) if hb.sum() else math.nan
        out["mean_service_time"] = float(np.mean(self.service_times)) if len(self.service_times) else math.nan
        return out

    def to_dict(self, include_samples=False):
        def pairs(h):
            return [[int(v), int(c)] for v, c in enumerate(h) if c]

        d = {
            "metadata": {"config": self.config.echo(), **self.metadata},
            "metrics": self.metrics(),
            "histograms": {
                "queue_length_departure": pairs(self.queue_length_histogram_departure),
                "queue_length_boundary": pairs(self.queue_length_histogram_boundary),
                "service_time": pairs(self.service_time_histogram),
            },
        }
        if include_samples:
            d["samples"] = {
                "delay": self.delay_samples.tolist(),
                "vestige": self.vestige_samples.tolist(),
                "service_time": self.service_times.tolist(),
            }
        return d

    def to_json(self, include_samples=False, **kw):
        return json.dumps(self.to_dict(include_samples), **kw)


def _boundary_queue(b, departed, nb):
    # Q_m = (m + 1) arrivals so far - departures in blocks <= m
    dep_counts = np.bincount(b[departed], minlength=nb)[:nb]
    return np.arange(1, nb + 1) - np.cumsum(dep_counts)


def _overflow_flags(meta, hist_dep, hist_bnd, theta):
    over = 0.0
    for h in (hist_dep, hist_bnd):
        if len(h) > HIST_CAP and h.sum():
            over = max(over, h[HIST_CAP] / h.sum())
    meta["overflow_mass"] = float(over)
    meta["overflow_flag"] = bool(over > 1e-6 and theta <= 0.8)


def run_continuous(config: SimConfig) -> SimStats:
    """Physical nats-level FIFO queue over exponential (or exact-capacity) blocks."""
    if config.engine != "continuous":
        config = replace(config, engine="continuous")
    nb, lp, warm = config.num_blocks, config.packet_size, config.warmup_blocks
    u = block_uniforms(config.seed, 0, nb, stream=SERVICE_STREAM)
    s = _service_from_uniform(u, config.nu, config.rho, config.capacity_mode)
    cum = np.concatenate(([0.0], np.cumsum(s)))  # cum[b] = service offered before block b
    i = np.arange(nb)

    # completion level of packet i: X_i = max(X_{i-1}, cum[i]) + Lp
    x = (i + 1) * lp + np.maximum.accumulate(cum[:nb] - i * lp)
    b = np.searchsorted(cum, x, side="right") - 1  # cum[b] <= X_i < cum[b+1]
    departed = b < nb

    prev_x = np.concatenate(([-np.inf], x[:-1]))
    prev_b = np.concatenate(([0], b[:-1]))
    busy = prev_x > cum[:nb]  # predecessor still in service when packet i arrives
    b0 = np.where(busy, prev_b, i)
    start_level = np.where(busy, prev_x, cum[:nb])

    idx = np.nonzero(departed & (i >= warm))[0]
    bi, b0i = b[idx], b0[idx]
    block_nats = cum[bi + 1] - cum[bi]
    frac = (x[idx] - cum[bi]) / block_nats
    t = bi - b0i
    avail = cum[b0i + 1] - start_level[idx]
    # a packet finished in its first (possibly partial) block uses Lp of the
    # nats left in it; otherwise its final block is a whole block
    vestige = np.where(t == 0, lp / avail, frac)
    waited = bi - idx
    delay = waited + vestige
    sojourn = waited + frac

    q_bnd = _boundary_queue(b, departed, nb)[warm:]

    backlog = x - cum[:nb]  # nats in buffer at the start of block b, arrival included
    served = np.minimum(s, backlog)
    emptied = served < s
    final_backlog = max(x[-1] - cum[nb], 0.0)
    meta = {
        "engine": "continuous",
        "unstable": bool(config.theta >= 1.0),
        "nats_offered": float(math.fsum(s)),
        "nats_served": float(math.fsum(served)),
        "nats_arrived": float(nb * lp),
        "final_backlog_nats": float(final_backlog),
        "blocks_buffer_emptied": int(emptied.sum()),
        "packets_not_departed": int((~departed).sum()),
    }
    hist_dep = _histogram(waited)
    hist_bnd = _histogram(q_bnd)
    _overflow_flags(meta, hist_dep, hist_bnd, config.theta)
    return SimStats(
        config=config,
        queue_length_histogram_departure=hist_dep,
        queue_length_histogram_boundary=hist_bnd,
        delay_samples=delay,
        vestige_samples=vestige,
        service_times=t,
        queue_at_departure=waited,
        sojourn_samples=sojourn,
        metadata=meta,
    )


def _poisson_inverse(u, theta):
    pmf = []
    k = 0
    total = 0.0
    while True:
        p = service_pmf(theta, k)
        pmf.append(p)
        total += p
        if k > theta and p < 1e-18:
            break
        k += 1
    cdf = np.cumsum(pmf)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def run_discrete(config: SimConfig) -> SimStats:
    """Departure-epoch chain L' = max(L - 1, 0) + T with T ~ Poisson(theta)."""
    if config.engine != "discrete":
        config = replace(config, engine="discrete")
    nb, warm = config.num_blocks, config.warmup_blocks
    u = block_uniforms(config.seed, 0, nb, stream=SERVICE_STREAM)
    t = _poisson_inverse(u, config.theta).astype(np.int64)
    i = np.arange(nb, dtype=np.int64)
    # departure block b_i = max(b_{i-1}, i) + T_i = C_i + max_{j<=i}(j - C_{j-1})
    c = np.cumsum(t)
    c_prev = np.concatenate(([0], c[:-1]))
    b = c + np.maximum.accumulate(i - c_prev)
    departed = b < nb
    idx = np.nonzero(departed & (i >= warm))[0]
    waited = b[idx] - idx
    q_bnd = _boundary_queue(b, departed, nb)[warm:]
    hist_dep = _histogram(waited)
    hist_bnd = _histogram(q_bnd)
    meta = {
        "engine": "discrete",
        "unstable": bool(config.theta >= 1.0),
        "packets_not_departed": int((~departed).sum()),
    }
    _overflow_flags(meta, hist_dep, hist_bnd, config.theta)
    return SimStats(
        config=config,
        queue_length_histogram_departure=hist_dep,
        queue_length_histogram_boundary=hist_bnd,
        delay_samples=waited.astype(float),
        vestige_samples=np.zeros(0),
        service_times=t[idx],
        queue_at_departure=waited,
        metadata=meta,
    )


def run(config: SimConfig) -> SimStats:
    return run_continuous(config) if config.engine == "continuous" else run_discrete(config)


def _normalize(h):
    h = np.asarray(h, dtype=float)
    return h / h.sum()


def total_variation(h1, h2):
    """Half the L1 distance between two histograms after normalization."""
    n = max(len(h1), len(h2))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(h1)] = h1
    b[: len(h2)] = h2
    if a.sum() == 0 or b.sum() == 0:
        raise ValueError("cannot compare an empty histogram")
    return 0.5 * float(np.abs(_normalize(a) - _normalize(b)).sum())


@dataclass(frozen=True)
class EpochComparison:
    tv: float
    z_scores: np.ndarray
    n_departure: int
    n_boundary: int


def compare_epochs(stats: SimStats) -> EpochComparison:
    """Departure-epoch vs block-boundary queue length histograms.

    z-scores use a pooled two-proportion standard error per bin and ignore
    sample autocorrelation, so read them as a relative guide only.
    """
    hd = np.asarray(stats.queue_length_histogram_departure, dtype=float)
    hb = np.asarray(stats.queue_length_histogram_boundary, dtype=float)
    if hd.sum() == 0 or hb.sum() == 0:
        raise ValueError("both histograms must be populated")
    tv = total_variation(hd, hb)
    n = max(len(hd), len(hb))
    a = np.zeros(n)
    b = np.zeros(n)
    a[: len(hd)] = hd
    b[: len(hb)] = hb
    n1, n2 = a.sum(), b.sum()
    pooled = (a + b) / (n1 + n2)
    se = np.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (a / n1 - b / n2) / se, 0.0)
    return EpochComparison(tv=tv, z_scores=z, n_departure=int(n1), n_boundary=int(n2))


@dataclass
class ReplicationSummary:
    config: SimConfig
    runs: list  # per-replication metric dicts, in seed order
    summary: dict  # metric -> {mean, se, ci95_low, ci95_high}
    queue_length_histogram_departure: np.ndarray
    queue_length_histogram_boundary: np.ndarray

    def to_dict(self):
        return {
            "metadata": {"config": self.config.echo()},
            "summary": self.summary,
            "runs": self.runs,
            "histograms": {
                "queue_length_departure": [
                    [int(v), int(c)] for v, c in enumerate(self.queue_length_histogram_departure) if c
                ],
                "queue_length_boundary": [
                    [int(v), int(c)] for v, c in enumerate(self.queue_length_histogram_boundary) if c
                ],
            },
        }


def _run_one(config):
    st = run(config)
    return st.metrics(), st.queue_length_histogram_departure, st.queue_length_histogram_boundary


def _add_hist(acc, h):
    if len(h) > len(acc):
        acc = np.concatenate((acc, np.zeros(len(h) - len(acc), dtype=np.int64)))
    acc[: len(h)] += h
    return acc


def replicate(config: SimConfig, workers: int = 1) -> ReplicationSummary:
    """Independent replications with seeds seed, seed+1, ...

    Results depend only on the seeds, never on ``workers`` or scheduling.
    """
    if config.replications < 2:
        raise ConfigurationError("replicate needs replications >= 2")
    configs = [replace(config, seed=config.seed + r, replications=1) for r in range(config.replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_one, configs))
    else:
        results = [_run_one(c) for c in configs]

    runs = [r[0] for r in results]
    hd = np.zeros(0, dtype=np.int64)
    hb = np.zeros(0, dtype=np.int64)
    for _, d, bnd in results:
        hd = _add_hist(hd, d)
        hb = _add_hist(hb, bnd)

    summary = {}
    n = len(runs)
    for key in runs[0]:
        if key.endswith("_se"):
            continue
        vals = np.array([r[key] for r in runs], dtype=float)
        mean = math.fsum(vals) / n
        se = float(vals.std(ddof=1) / math.sqrt(n))
        summary[key] = {
            "mean": mean,
            "se": se,
            "ci95_low": mean - 1.96 * se,
            "ci95_high": mean + 1.96 * se,
        }
    return ReplicationSummary(config, runs, summary, hd, hb)
