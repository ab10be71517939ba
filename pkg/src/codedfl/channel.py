"""Per-link outage probability and per-round connectivity sampling.

Each transmission slot is an independent Bernoulli erasure: a link is up
with probability 1 - p_e, where p_e comes from the Rayleigh block-fading
outage formula. The same p_e applies to client-to-client, direct uplink,
and relay uplink slots, since all links are modeled i.i.d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChannelParams",
    "ConnectivityRealization",
    "outage_probability",
    "sample_connectivity",
]


@dataclass(frozen=True)
class ChannelParams:
    """SNR is a linear power ratio; use :meth:`from_db` for decibels."""

    snr: float
    rate: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError(f"snr must be positive, got {self.snr}")
        if self.rate < 0:
            raise ValueError(f"rate must be >= 0, got {self.rate}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @classmethod
    def from_db(cls, snr_db: float, rate: float, sigma2: float = 1.0):
        return cls(10.0 ** (snr_db / 10.0), rate, sigma2)

    @property
    def g(self) -> float:
        """Fading-power threshold below which a transmission is lost."""
        return (2.0 ** (2.0 * self.rate) - 1.0) / self.snr

    @property
    def p_e(self) -> float:
        return 1.0 - math.exp(-self.g / (2.0 * self.sigma2))


def outage_probability(params: ChannelParams) -> float:
    """Per-slot erasure probability, in [0, 1)."""
    return params.p_e


@dataclass(frozen=True)
class ConnectivityRealization:
    """One round's Bernoulli draws.

    ``d2d[z, m]`` = 1 iff client m decoded client z's broadcast (diagonal is
    all ones: a client holds its own message). ``direct[m]`` covers the
    broadcast-slot uplink to the server, ``relay[m, s]`` the uplink of client
    m's relay slot s.
    """

    d2d: np.ndarray
    direct: np.ndarray
    relay: np.ndarray


def sample_connectivity(
    M: int, p_e: float, rng: np.random.Generator
) -> ConnectivityRealization:
    """Draw one realization; every slot is an independent Bernoulli(1 - p_e)."""
    if not 0.0 <= p_e < 1.0:
        raise ValueError(f"p_e must be in [0, 1), got {p_e}")
    up = 1.0 - p_e
    d2d = (rng.random((M, M)) < up).astype(np.int64)
    np.fill_diagonal(d2d, 1)
    direct = (rng.random(M) < up).astype(np.int64)
    relay = (rng.random((M, M - 1)) < up).astype(np.int64)
    return ConnectivityRealization(d2d, direct, relay)
