"""Queueing analysis of a constant-rate stream over a low-SNR block Rayleigh fading channel."""

__version__ = "0.1.0"

from .analytic import (
    DelayBreakdown,
    ServiceDistribution,
    StationaryDistribution,
    VestigeModel,
    decay_rate,
    mean_delay,
    mean_queue_length,
    mean_vestige,
    mean_vestige_by_components,
    service_pgf,
    service_pmf,
    stationary_distribution,
    stationary_pgf,
)
from .channel import ChannelParams, TrafficParams, derive_params
from .exceptions import ConfigurationError, ConvergenceError, DomainError, UnstableLoadError
from .markov import TruncatedChain, build_chain, stationary_solve
from .sim import SimConfig, SimStats, compare_epochs, replicate, run_continuous, run_discrete
