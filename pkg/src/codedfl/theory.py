"""Closed-form analysis quantities and the convergence bound evaluator.

Every probabilistic quantity here has a Monte Carlo twin in the test
suite; the evaluator substitutes measured or assumed constants into the
four-term optimality-gap bound.
"""

import math
from dataclasses import dataclass

import numpy as np

from .channel import ConnectivityRealization


class StepSizeConditionError(ValueError):
    """Raised when the bound's step-size precondition fails."""


def client_outage_dominant(n_clients: int, p_e: float) -> float:
    """Dominant term of the per-client outage probability, p_e^(2M-1)."""
    _check_probability(p_e)
    return p_e ** (2 * n_clients - 1)


def client_unseen_probability(n_clients: int, p_e: float) -> float:
    """Exact probability that one client's update reaches no received codeword.

    The client is unseen when its direct copy is lost, its own M-1 relay
    codewords are all lost, and every other client either missed the
    broadcast or lost all of its own relay slots:
    p^M * (p + (1-p) p^(M-1))^(M-1).
    """
    _check_probability(p_e)
    m = n_clients
    fail_other = p_e + (1.0 - p_e) * p_e ** (m - 1)
    return p_e**m * fail_other ** (m - 1)


def unseen_in_realization(conn: ConnectivityRealization, client: int) -> bool:
    """True when no delivered codeword involves the client's message."""
    if conn.direct[client]:
        return False
    hearers = np.flatnonzero(conn.d2d[client])  # includes the client itself
    return not bool(conn.relay[hearers].any())


def sample_unseen_frequency(
    n_clients: int, p_e: float, trials: int, rng: np.random.Generator, chunk: int = 1 << 18
) -> float:
    """Monte Carlo twin of :func:`client_unseen_probability` for client 0.

    Draws only the links the unseen event reads (one direct slot, M-1
    broadcast receptions, M relay-slot blocks), in a fixed order, chunked
    to bound memory at large trial counts.
    """
    _check_probability(p_e)
    m = n_clients
    hits, left = 0, trials
    while left > 0:
        n = min(left, chunk)
        left -= n
        up = 1.0 - p_e
        direct_ok = rng.random(n) < up
        own_relay_ok = (rng.random((n, m - 1)) < up).any(axis=1)
        heard = rng.random((n, m - 1)) < up
        other_relay_ok = (rng.random((n, m - 1, m - 1)) < up).any(axis=2)
        relayed = (heard & other_relay_ok).any(axis=1)
        hits += int((~direct_ok & ~own_relay_ok & ~relayed).sum())
    return hits / trials


def kbar_inverse(n_clients: int, q: float) -> float:
    """E[1/|W|] for Bernoulli participation, conditioned on W non-empty.

    Each client is absent independently with probability q; the sum runs
    over the participation count v with exact integer binomials.
    """
    _check_probability(q)
    m = n_clients
    total = sum(
        math.comb(m, v) * (1.0 - q) ** v * q ** (m - v) / v for v in range(1, m + 1)
    )
    return total / (1.0 - q**m)


def alpha_bar(n_clients: int, q: float) -> float:
    """Per-client weight E[1/|W|] / M of the second participation identity."""
    return kbar_inverse(n_clients, q) / n_clients


def kstar(n_clients: int, p_e: float) -> float:
    """Closed-form lower proxy for the mean participation K-bar."""
    _check_probability(p_e)
    m = n_clients
    a = 1.0 - p_e ** (2 * m - 1)
    b = 1.0 - p_e ** (m * (2 * m - 1))
    return (m + 1) * a * b / 2.0


@dataclass(frozen=True)
class AssumptionConstants:
    """Inputs to the optimality-gap bound.

    ``j_squared`` is either one number used for every (round, client)
    pair or a (rounds, n_clients) array of measured values; ``d`` is a
    per-client dissimilarity bound, scalar or length-M vector.
    """

    smoothness: float
    initial_gap: float
    sigma2: float
    batch_size: int
    local_steps: int
    rounds: int
    n_clients: int
    j_squared: object = 0.0
    d: object = 0.0

    def __post_init__(self):
        if self.smoothness <= 0:
            raise ValueError(f"smoothness must be positive, got {self.smoothness}")
        if min(self.batch_size, self.local_steps, self.rounds, self.n_clients) < 1:
            raise ValueError("batch_size, local_steps, rounds, n_clients must be >= 1")
        for name in ("initial_gap", "sigma2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        j = np.asarray(self.j_squared, dtype=np.float64)
        if j.ndim not in (0, 2) or np.any(j < 0):
            raise ValueError("j_squared must be a non-negative scalar or (T, M) array")
        if j.ndim == 2 and j.shape != (self.rounds, self.n_clients):
            raise ValueError(
                f"j_squared array must be {(self.rounds, self.n_clients)}, got {j.shape}"
            )
        d = np.asarray(self.d, dtype=np.float64)
        if d.ndim not in (0, 1) or np.any(d < 0):
            raise ValueError("d must be a non-negative scalar or length-M vector")
        if d.ndim == 1 and d.shape != (self.n_clients,):
            raise ValueError(f"d vector must have length {self.n_clients}")
        object.__setattr__(self, "j_squared", j)
        object.__setattr__(self, "d", d)

    @property
    def j_sum_over_clients(self) -> float:
        """Sum over rounds and clients of J^2 / M."""
        j = self.j_squared
        if j.ndim == 0:
            return float(j) * self.rounds
        return float(j.sum()) / self.n_clients

    @property
    def d_sq_mean(self) -> float:
        d = self.d
        if d.ndim == 0:
            return float(d) ** 2
        return float(np.mean(d**2))


def step_size_limit(rounds: int, local_steps: int, kstar_value: float) -> float:
    """Largest admissible I for the bound, (TI)^(1/4) / K*^(3/4)."""
    return (rounds * local_steps) ** 0.25 / kstar_value**0.75


def convergence_bound(
    c: AssumptionConstants, kstar_value: float, check_condition: bool = True
) -> float:
    """Four-term bound on the average squared gradient norm.

    With ``check_condition`` the step-size admissibility I <= (TI)^(1/4) /
    K*^(3/4) is enforced; pass False to evaluate the expression
    descriptively outside its guaranteed regime.
    """
    if kstar_value <= 0:
        raise ValueError(f"kstar must be positive, got {kstar_value}")
    t, i, ks = c.rounds, c.local_steps, kstar_value
    if check_condition and i > step_size_limit(t, i, ks):
        raise StepSizeConditionError(
            f"local_steps {i} exceeds the admissible {step_size_limit(t, i, ks):.6g}"
        )
    tik = t * i * ks
    ti = t * i
    term_init = 496.0 * c.smoothness / (11.0 * math.sqrt(tik)) * c.initial_gap
    term_quant = 31.0 / (88.0 * ti**1.5 * math.sqrt(ks)) * c.j_sum_over_clients
    term_noise = (
        39.0 / (88.0 * math.sqrt(tik)) + 1.0 / (88.0 * tik**0.75)
    ) * c.sigma2 / c.batch_size
    term_dissim = (
        4.0 / (11.0 * math.sqrt(tik))
        + 1.0 / (22.0 * tik**0.75)
        + 31.0 / (22.0 * ti**0.25 * ks**1.25)
    ) * c.d_sq_mean
    return term_init + term_quant + term_noise + term_dissim


def _check_probability(p: float) -> None:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"probability must be in [0, 1), got {p}")
