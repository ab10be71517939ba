"""Round orchestration for the coded uplink and its benchmark pipelines.

One round runs four stages: error-free model broadcast, local SGD per
client, quantization plus coded two-slot uplink (direct copy, then masked
relay codewords), and decode/aggregate at the server. Undecodable rounds
redraw the whole uplink up to a retry budget. Benchmarks reuse the same
local-update and channel randomness so method comparisons differ only in
the transport.

Randomness is organized as named substreams of one master seed, keyed by
(trial, round, client, purpose), which makes every method see identical
local updates at identical model states and makes runs reproducible
regardless of scheduling.
"""

from dataclasses import dataclass

import numpy as np

from .channel import ConnectivityRealization, sample_connectivity
from .data import DatasetPartition, LabeledData
from .dnc import (
    UndecodableError,
    assemble_from_connectivity,
    build_encoding_matrix,
    decode_messages,
    prune,
)
from .fl_core import (
    BENCHMARKS,
    TrainingHyperparams,
    aggregate_benchmark,
    aggregate_proposed,
    evaluate,
    local_sgd,
)
from .galois import GaloisField
from .mlp import MlpSpec, init_params
from .quantizer import (
    Message,
    QuantizerSpec,
    dequantize,
    from_message,
    quantize,
    to_message,
)
from .rng import substream

METHODS = ("proposed",) + BENCHMARKS


class RoundFailure(RuntimeError):
    """Raised when a round stays undecodable through the retry budget."""

    def __init__(self, trial: int, round_index: int, attempts: int):
        super().__init__(
            f"trial {trial} round {round_index}: undecodable after {attempts} attempts"
        )
        self.trial = trial
        self.round_index = round_index
        self.attempts = attempts


@dataclass(frozen=True)
class ExperimentConfig:
    n_clients: int
    hp: TrainingHyperparams
    p_e: float
    bits: int = 8
    field_order: int = 256
    retry_limit: int = 10
    master_seed: int = 0
    num_trials: int = 1
    methods: tuple = METHODS
    quantize: bool = True
    relaying: bool = True
    # explicit uniform grid bounds; both None means calibrate by dry run
    quantizer_lower: float | None = None
    quantizer_upper: float | None = None
    quantizer_margin: float = 1.5

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError(f"n_clients must be >= 1, got {self.n_clients}")
        if not 0.0 <= self.p_e < 1.0:
            raise ValueError(f"p_e must be in [0, 1), got {self.p_e}")
        if self.retry_limit < 1:
            raise ValueError(f"retry_limit must be >= 1, got {self.retry_limit}")
        if self.bits < 1:
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        if self.num_trials < 1:
            raise ValueError(f"num_trials must be >= 1, got {self.num_trials}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if (self.quantizer_lower is None) != (self.quantizer_upper is None):
            raise ValueError("quantizer_lower and quantizer_upper come as a pair")
        if (
            self.quantizer_lower is not None
            and self.quantizer_upper <= self.quantizer_lower
        ):
            raise ValueError("quantizer_upper must exceed quantizer_lower")
        if self.quantizer_margin <= 0:
            raise ValueError("quantizer_margin must be positive")


@dataclass(frozen=True)
class RoundOutcome:
    """Result of one decoded round of the coded pipeline."""

    w: tuple
    decoded: dict
    delta: np.ndarray
    retransmissions: int
    direct_recovered: tuple
    relay_recovered: tuple


@dataclass(frozen=True)
class RoundMetrics:
    trial: int
    round_index: int
    method: str
    test_accuracy: float
    train_loss: float
    decoded_count: int
    retransmissions: int
    failed: bool


def _strip_relaying(conn: ConnectivityRealization) -> ConnectivityRealization:
    m = conn.direct.shape[0]
    return ConnectivityRealization(
        np.eye(m, dtype=np.int64), conn.direct, np.zeros_like(conn.relay)
    )


def calibrate_quantizer(
    objective,
    model_spec: MlpSpec,
    partition: DatasetPartition,
    config: ExperimentConfig,
) -> QuantizerSpec:
    """Symmetric per-experiment bounds from one dry-run round.

    Runs local SGD once per client from a calibration init on dedicated
    streams and scales the peak coordinate magnitude by the safety
    margin; all trials and methods share the resulting grid. Explicit
    bounds in the config skip the dry run.
    """
    if config.quantizer_lower is not None:
        return QuantizerSpec(
            config.bits,
            np.full(model_spec.dim, config.quantizer_lower),
            np.full(model_spec.dim, config.quantizer_upper),
        )
    theta = init_params(model_spec, substream(config.master_seed, "calib", "init"))
    peak = 0.0
    for m in range(config.n_clients):
        up = local_sgd(
            objective,
            theta,
            partition.shards[m],
            config.hp,
            substream(config.master_seed, "calib", m),
            client=m,
        )
        peak = max(peak, float(np.abs(up.delta).max()))
    half = config.quantizer_margin * peak if peak > 0 else 1.0
    return QuantizerSpec.symmetric(config.bits, half, model_spec.dim)


def _transport(updates: dict, qspec: QuantizerSpec, quant_rngs: dict, field, quantize_on: bool):
    """Quantize updates and encode them as field-symbol columns.

    Returns (deltas as the receiver will see them, symbol matrix or None).
    Without quantization the raw deltas pass through and no symbols exist;
    connectivity alone decides which of them arrive.
    """
    if not quantize_on:
        return dict(updates), None
    seen = {}
    columns = []
    for m in sorted(updates):
        q = quantize(updates[m], qspec, quant_rngs[m])
        seen[m] = dequantize(q, qspec)
        columns.append(to_message(q, field).symbols)
    return seen, np.stack(columns, axis=1)


def run_round(
    updates: dict,
    symbols,
    code,
    field: GaloisField,
    qspec: QuantizerSpec,
    config: ExperimentConfig,
    trial: int,
    round_index: int,
) -> RoundOutcome:
    """Stages 3 and 4 for the coded pipeline: uplink, decode, aggregate.

    ``updates`` maps client to the delta the server should obtain;
    ``symbols`` is the encoded k x M column matrix (None when the codec
    is bypassed, in which case connectivity still gates membership).
    """
    for attempt in range(config.retry_limit):
        conn = sample_connectivity(
            config.n_clients,
            config.p_e,
            substream(config.master_seed, trial, "round", round_index, "net", attempt),
        )
        if not config.relaying:
            conn = _strip_relaying(conn)
        ps = assemble_from_connectivity(code, conn)
        pruned = prune(ps)
        if len(pruned.W) == 0:
            continue
        if symbols is None:
            if field.rank(pruned.matrix) < len(pruned.W):
                continue
            decoded = {int(m): updates[int(m)] for m in pruned.W}
        else:
            received = field.matmul(symbols, ps.matrix)[:, pruned.V]
            try:
                recovered = decode_messages(pruned, received, field)
            except UndecodableError:
                continue
            decoded = {
                m: dequantize(from_message(Message(sym, field.order), qspec), qspec)
                for m, sym in recovered.items()
            }
        # undelivered columns are zero and pruned away, so the surviving
        # provenance is the delivered set
        direct = {entry[1] for entry in pruned.provenance if entry[0] == "direct"}
        w = tuple(int(x) for x in pruned.W)
        return RoundOutcome(
            w=w,
            decoded=decoded,
            delta=aggregate_proposed(decoded),
            retransmissions=attempt,
            direct_recovered=tuple(m for m in w if m in direct),
            relay_recovered=tuple(m for m in w if m not in direct),
        )
    raise RoundFailure(trial, round_index, config.retry_limit)


def run_trial(
    method: str,
    config: ExperimentConfig,
    model_spec: MlpSpec,
    objective,
    partition: DatasetPartition,
    train: LabeledData,
    test: LabeledData,
    qspec: QuantizerSpec,
    code,
    field: GaloisField,
    trial: int,
) -> list:
    """Run T rounds of one method from the trial's shared initialization."""
    theta = init_params(model_spec, substream(config.master_seed, trial, "init"))
    records = []
    for r in range(1, config.hp.rounds + 1):
        updates = {}
        quant_rngs = {}
        for m in range(config.n_clients):
            base = (config.master_seed, trial, "round", r, "client", m)
            up = local_sgd(
                objective,
                theta,
                partition.shards[m],
                config.hp,
                substream(*base, "sgd"),
                client=m,
                round_index=r,
            )
            updates[m] = up.delta
            quant_rngs[m] = substream(*base, "quant")
        seen, symbols = _transport(updates, qspec, quant_rngs, field, config.quantize)

        failed = False
        retransmissions = 0
        if method == "proposed":
            try:
                outcome = run_round(
                    seen, symbols, code, field, qspec, config, trial, r
                )
                delta = outcome.delta
                decoded_count = len(outcome.w)
                retransmissions = outcome.retransmissions
            except RoundFailure:
                failed = True
                delta = np.zeros(model_spec.dim)
                decoded_count = 0
                retransmissions = config.retry_limit - 1
        elif method == "qfl_ideal":
            delta = aggregate_benchmark("qfl_ideal", seen, config.n_clients, model_spec.dim)
            decoded_count = config.n_clients
        else:
            conn = sample_connectivity(
                config.n_clients,
                config.p_e,
                substream(config.master_seed, trial, "round", r, "net", 0),
            )
            arrived = {m: seen[m] for m in range(config.n_clients) if conn.direct[m]}
            delta = aggregate_benchmark(method, arrived, config.n_clients, model_spec.dim)
            decoded_count = len(arrived)

        theta = theta + delta
        test_eval = evaluate(model_spec, theta, test)
        train_eval = evaluate(model_spec, theta, train)
        records.append(
            RoundMetrics(
                trial=trial,
                round_index=r,
                method=method,
                test_accuracy=test_eval.accuracy,
                train_loss=train_eval.loss,
                decoded_count=decoded_count,
                retransmissions=retransmissions,
                failed=failed,
            )
        )
    return records


def run_experiment(
    config: ExperimentConfig,
    model_spec: MlpSpec,
    objective,
    partition: DatasetPartition,
    train: LabeledData,
    test: LabeledData,
) -> list:
    """All configured methods across all trials; one record per round."""
    if len(partition) != config.n_clients:
        raise ValueError(
            f"partition has {len(partition)} shards for {config.n_clients} clients"
        )
    field = GaloisField(config.field_order)
    code = build_encoding_matrix(config.n_clients, field)
    qspec = (
        calibrate_quantizer(objective, model_spec, partition, config)
        if config.quantize
        else None
    )
    records = []
    for trial in range(config.num_trials):
        for method in config.methods:
            records.extend(
                run_trial(
                    method, config, model_spec, objective, partition,
                    train, test, qspec, code, field, trial,
                )
            )
    return records
