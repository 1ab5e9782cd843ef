"""Block Rayleigh fading channel: parameters, service laws and samplers.

All information quantities are in nats.  Within a block of length ``TB`` the
channel offers ``s_n = W * TB * ln(1 + gamma_n P d^-alpha / (W N0))`` nats; in
the low-SNR regime this is exponential with mean ``nu = W * TB * rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigurationError, DomainError

__all__ = [
    "ChannelParams",
    "TrafficParams",
    "derive_params",
    "service_cdf",
    "capacity_cdf",
    "sample_block_service",
    "cumulative_service_pdf",
    "block_uniforms",
    "block_generator",
    "db_to_watts",
    "CAPACITY_MODES",
]

CAPACITY_MODES = ("low_snr", "exact")


def db_to_watts(p_dbw):
    return 10.0 ** (p_dbw / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Physical-layer constants.

    Give either ``rho`` directly or the full physical set
    (``tx_power``, ``noise_psd``, ``distance``, ``pathloss_exponent``,
    ``rayleigh_sigma2``) from which it is derived.  When both are given they
    must agree to 1e-12 (relative).
    """

    bandwidth: float  # Hz
    block_length: float  # s
    rho: Optional[float] = None  # average received SNR
    tx_power: Optional[float] = None  # W
    noise_psd: Optional[float] = None  # W/Hz
    distance: Optional[float] = None  # m
    pathloss_exponent: Optional[float] = None
    rayleigh_sigma2: float = 1.0
    _physical: bool = field(default=False, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("bandwidth", "block_length", "rayleigh_sigma2"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        physical = (self.tx_power, self.noise_psd, self.distance, self.pathloss_exponent)
        given = [p is not None for p in physical]
        if any(given) and not all(given):
            raise ConfigurationError(
                "physical SNR derivation needs tx_power, noise_psd, distance and "
                "pathloss_exponent together"
            )
        if all(given):
            if not all(p > 0 for p in physical):
                raise ConfigurationError("physical parameters must be strictly positive")
            derived = (
                2.0 * self.rayleigh_sigma2 * self.tx_power
                / (self.bandwidth * self.noise_psd * self.distance ** self.pathloss_exponent)
            )
            if self.rho is None:
                object.__setattr__(self, "rho", derived)
            elif abs(self.rho - derived) > 1e-12 * derived:
                raise ConfigurationError(
                    f"rho={self.rho!r} inconsistent with physical parameters (derived {derived!r})"
                )
            object.__setattr__(self, "_physical", True)
        if self.rho is None:
            raise ConfigurationError("either rho or the physical parameter set is required")
        if not self.rho > 0:
            raise ConfigurationError("rho must be strictly positive")

    @classmethod
    def from_physical(cls, bandwidth, block_length, tx_power, noise_psd, distance,
                      pathloss_exponent, rayleigh_sigma2=1.0):
        return cls(bandwidth=bandwidth, block_length=block_length, tx_power=tx_power,
                   noise_psd=noise_psd, distance=distance,
                   pathloss_exponent=pathloss_exponent, rayleigh_sigma2=rayleigh_sigma2)

    @property
    def has_physical(self):
        return self._physical

    @property
    def nu(self):
        """Mean per-block service in nats, W * TB * rho."""
        return self.bandwidth * self.block_length * self.rho

    @property
    def awgn_capacity(self):
        """Low-SNR AWGN-equivalent capacity W * rho in nats/s."""
        return self.bandwidth * self.rho


@dataclass(frozen=True)
class TrafficParams:
    rate: float  # nats/s
    packet_size: float  # nats, = rate * TB
    theta: float  # packet_size / nu

    def __post_init__(self):
        if not self.packet_size > 0:
            raise ConfigurationError("packet size must be strictly positive")
        if not self.theta > 0:
            raise ConfigurationError("load theta must be strictly positive")

    @property
    def stable(self):
        return self.theta < 1.0


def derive_params(channel: ChannelParams, rate: float) -> TrafficParams:
    """Packet size and load for a constant-rate stream of ``rate`` nats/s.

    ``theta = R * TB / nu = R / (W rho)``, the ratio of the traffic rate to
    the low-SNR AWGN-equivalent capacity.
    """
    if not rate > 0:
        raise ConfigurationError("rate must be strictly positive")
    packet_size = rate * channel.block_length
    return TrafficParams(rate=rate, packet_size=packet_size, theta=packet_size / channel.nu)


def service_cdf(x, channel: ChannelParams):
    """CDF of the per-block service, 1 - exp(-x / nu)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("service amount must be nonnegative")
    out = -np.expm1(-x / channel.nu)
    return float(out) if out.ndim == 0 else out


def capacity_cdf(x, channel: ChannelParams, mode: str = "low_snr"):
    """CDF of the instantaneous capacity (nats/s).

    ``exact``:   1 - exp(-(exp(x/W) - 1) / rho)
    ``low_snr``: 1 - exp(-x / (W rho))
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("capacity must be nonnegative")
    w, rho = channel.bandwidth, channel.rho
    if mode == "low_snr":
        out = -np.expm1(-x / (w * rho))
    elif mode == "exact":
        out = -np.expm1(-np.expm1(x / w) / rho)
    else:
        raise ConfigurationError(f"unknown capacity mode {mode!r}")
    return float(out) if out.ndim == 0 else out


def cumulative_service_pdf(k: int, x, nu: float = 1.0):
    """Gamma(k, nu) density of the service offered by k successive blocks."""
    if int(k) != k or k < 1:
        raise DomainError("k must be a positive integer")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise DomainError("x must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        logx = np.log(x)
        log_pdf = (k - 1) * logx - x / nu - math.lgamma(k) - k * math.log(nu)
    if k == 1:
        log_pdf = np.where(x == 0, -math.log(nu), log_pdf)
    out = np.exp(log_pdf)
    return float(out) if out.ndim == 0 else out


# -- randomness -----------------------------------------------------------

# Philox emits four 64-bit words per counter value; Generator.random uses one
# word per double, so block n maps to counter n // 4, lane n % 4.
_WORDS_PER_COUNTER = 4


def block_generator(seed: int, stream: int = 0, start: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream), positioned at draw ``start``."""
    key = np.array([int(seed) % 2**64, int(stream) % 2**64], dtype=np.uint64)
    counter = np.array([start // _WORDS_PER_COUNTER, 0, 0, 0], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
    skip = start % _WORDS_PER_COUNTER
    if skip:
        gen.random(skip)
    return gen


def block_uniforms(seed: int, start: int, count: int, stream: int = 0) -> np.ndarray:
    """Uniforms on [0, 1) for draws ``start .. start+count-1`` of a stream.

    Draw n depends only on (seed, stream, n), so any window can be
    regenerated independently of what was consumed before it.
    """
    return block_generator(seed, stream, start).random(count)


def _service_from_uniform(u, channel_nu, rho, mode):
    e = -np.log1p(-np.asarray(u, dtype=float))  # Exp(1) by inversion
    if mode == "low_snr":
        return channel_nu * e
    if mode == "exact":
        if rho is None:
            raise ConfigurationError("exact capacity mode needs rho")
        # gamma P d^-alpha / (W N0) = rho * gamma / (2 sigma^2) and gamma / (2 sigma^2) ~ Exp(1)
        return channel_nu / rho * np.log1p(rho * e)
    raise ConfigurationError(f"unknown capacity mode {mode!r}")


def sample_block_service(rng: np.random.Generator, channel: ChannelParams,
                         mode: str = "low_snr", size=None):
    """Draw per-block service amounts in nats by inverse-CDF sampling.

    ``low_snr`` draws Exp(mean nu).  ``exact`` draws the power gain
    gamma ~ Exp(mean 2 sigma^2) and returns W TB ln(1 + gamma P d^-alpha / (W N0)),
    which depends on the physical set only through rho.
    """
    u = rng.random(size)
    out = _service_from_uniform(u, channel.nu, channel.rho, mode)
    return float(out) if size is None else out
