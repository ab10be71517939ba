"""Local training and aggregation rules.

``local_sgd`` works against any objective exposing
``loss_and_grad(params, x, y)`` so the optimizer can be validated on
closed-form problems; the perceptron from :mod:`codedfl.mlp` is the
production objective. Aggregation covers the identity-aware rule used by
the coded pipeline plus the three benchmark rules it is compared against.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import mlp
from .data import LabeledData


class NumericalDivergence(ArithmeticError):
    """Raised when a loss or gradient stops being finite."""


class AggregationError(ValueError):
    """Raised for aggregation inputs the protocol should never produce."""


BENCHMARKS = ("qfl_ideal", "anon", "non_anon")


@dataclass(frozen=True)
class TrainingHyperparams:
    local_steps: int
    batch_size: int
    learning_rate: float
    rounds: int

    def __post_init__(self):
        if min(self.local_steps, self.batch_size, self.rounds) < 1:
            raise ValueError("local_steps, batch_size, rounds must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass(frozen=True)
class LocalUpdate:
    """Parameter delta produced by one client in one round."""

    delta: np.ndarray
    client: int
    round_index: int


@dataclass(frozen=True)
class MlpObjective:
    spec: mlp.MlpSpec

    def loss_and_grad(self, params, x, y):
        return mlp.loss_and_grad(self.spec, params, x, y)


def local_sgd(
    objective,
    params: np.ndarray,
    shard: LabeledData,
    hp: TrainingHyperparams,
    rng: np.random.Generator,
    client: int = 0,
    round_index: int = 0,
) -> LocalUpdate:
    """Run ``local_steps`` SGD iterations and return the parameter delta.

    Batches are drawn without replacement from a shuffled order that is
    redealt once fewer than a full batch remains, so every step sees
    min(batch_size, len(shard)) fresh samples.
    """
    n = len(shard)
    if n == 0:
        raise ValueError("shard must be non-empty")
    bsize = min(hp.batch_size, n)
    theta = np.array(params, dtype=np.float64, copy=True)
    order = rng.permutation(n)
    pos = 0
    for _ in range(hp.local_steps):
        if pos + bsize > n:
            order = rng.permutation(n)
            pos = 0
        batch = order[pos : pos + bsize]
        pos += bsize
        loss, grad = objective.loss_and_grad(theta, shard.x[batch], shard.y[batch])
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalDivergence(
                f"client {client} round {round_index}: non-finite loss or gradient"
            )
        theta -= hp.learning_rate * grad
    return LocalUpdate(theta - params, client, round_index)


def aggregate_proposed(updates: dict) -> np.ndarray:
    """Average over the decoded client set; identity-aware, equal weights."""
    if not updates:
        raise AggregationError("decoded set is empty")
    stacked = np.stack(list(updates.values()))
    return stacked.mean(axis=0)


def aggregate_benchmark(kind: str, arrived: dict, n_clients: int, dim: int) -> np.ndarray:
    """Benchmark update rules.

    qfl_ideal averages all clients over a perfect channel; anon cannot
    attribute arrivals so it scales the arrived sum by 1/M, silently
    losing the missing terms; non_anon averages whatever arrived and
    skips the round (zero delta) when nothing did.
    """
    if kind not in BENCHMARKS:
        raise AggregationError(f"unknown benchmark {kind!r}")
    if kind == "qfl_ideal":
        if len(arrived) != n_clients:
            raise AggregationError(
                f"ideal benchmark needs all {n_clients} clients, got {len(arrived)}"
            )
        return np.stack(list(arrived.values())).mean(axis=0)
    if not arrived:
        return np.zeros(dim)
    total = np.stack(list(arrived.values())).sum(axis=0)
    if kind == "anon":
        return total / n_clients
    return total / len(arrived)


class EvalResult(NamedTuple):
    accuracy: float
    loss: float


def evaluate(spec: mlp.MlpSpec, params: np.ndarray, data: LabeledData) -> EvalResult:
    """Argmax accuracy and mean cross-entropy on a labeled set."""
    if len(data) == 0:
        raise ValueError("evaluation set must be non-empty")
    loss, _ = mlp.loss_and_grad(spec, params, data.x, data.y)
    accuracy = float(np.mean(mlp.predict(spec, params, data.x) == data.y))
    return EvalResult(accuracy, loss)
