import numpy as np
import pytest

from codedfl.data import partition_iid, synthetic_mixture
from codedfl.dnc import build_encoding_matrix
from codedfl.fl_core import MlpObjective, TrainingHyperparams
from codedfl.galois import GaloisField
from codedfl.mlp import MlpSpec
from codedfl.protocol import (
    ExperimentConfig,
    RoundFailure,
    calibrate_quantizer,
    run_experiment,
    run_round,
    run_trial,
)
from codedfl.quantizer import QuantizerSpec, dequantize, quantize, to_message
from codedfl.rng import substream


def _hp(t=3, i=2):
    return TrainingHyperparams(local_steps=i, batch_size=16, learning_rate=0.05, rounds=t)


def _config(**kw):
    base = dict(n_clients=3, hp=_hp(), p_e=0.0, master_seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


def _setup(m=3, n=240, features=6, classes=3, seed=5):
    data = synthetic_mixture(n, classes, features, substream(seed, "data"))
    test = synthetic_mixture(120, classes, features, substream(seed, "test"))
    part = partition_iid(data, m, substream(seed, "part"))
    spec = MlpSpec(n_features=features, n_classes=classes, hidden=8)
    return spec, MlpObjective(spec), part, data, test


def _encode_all(deltas, qspec, field, config, trial=0, r=1):
    seen, columns = {}, []
    for m in sorted(deltas):
        rng = substream(config.master_seed, trial, "round", r, "client", m, "quant")
        q = quantize(deltas[m], qspec, rng)
        seen[m] = dequantize(q, qspec)
        columns.append(to_message(q, field).symbols)
    return seen, np.stack(columns, axis=1)


def test_config_validation():
    with pytest.raises(ValueError):
        _config(n_clients=0)
    with pytest.raises(ValueError):
        _config(p_e=1.0)
    with pytest.raises(ValueError):
        _config(retry_limit=0)
    with pytest.raises(ValueError):
        _config(methods=("proposed", "magic"))
    with pytest.raises(ValueError):
        _config(quantizer_lower=-1.0)
    with pytest.raises(ValueError):
        _config(quantizer_lower=1.0, quantizer_upper=0.5)


def test_perfect_channel_round():
    config = _config(p_e=0.0)
    field = GaloisField(256)
    code = build_encoding_matrix(3, field)
    qspec = QuantizerSpec.symmetric(8, 1.0, 5)
    rng = substream(5, "deltas")
    deltas = {m: rng.uniform(-1, 1, size=5) for m in range(3)}
    seen, symbols = _encode_all(deltas, qspec, field, config)
    outcome = run_round(seen, symbols, code, field, qspec, config, trial=0, round_index=1)
    assert outcome.w == (0, 1, 2)
    assert outcome.retransmissions == 0
    assert outcome.relay_recovered == ()
    # every decoded update survives the codec and channel bit-exactly
    for m in range(3):
        assert np.array_equal(outcome.decoded[m], seen[m])
    expected = np.stack([seen[m] for m in range(3)]).mean(axis=0)
    assert np.array_equal(outcome.delta, expected)


def test_dead_channel_raises_round_failure():
    config = _config(p_e=0.999, retry_limit=3)
    field = GaloisField(256)
    code = build_encoding_matrix(3, field)
    qspec = QuantizerSpec.symmetric(8, 1.0, 5)
    deltas = {m: np.zeros(5) for m in range(3)}
    seen, symbols = _encode_all(deltas, qspec, field, config)
    with pytest.raises(RoundFailure) as err:
        run_round(seen, symbols, code, field, qspec, config, trial=0, round_index=1)
    assert err.value.attempts == 3


def test_relay_rescues_lost_direct_link():
    field = GaloisField(256)
    code = build_encoding_matrix(3, field)
    qspec = QuantizerSpec.symmetric(8, 1.0, 5)
    rng = substream(5, "relay-deltas")
    deltas = {m: rng.uniform(-1, 1, size=5) for m in range(3)}
    found = False
    for seed in range(60):
        config = _config(p_e=0.35, master_seed=seed, retry_limit=1)
        seen, symbols = _encode_all(deltas, qspec, field, config)
        try:
            outcome = run_round(seen, symbols, code, field, qspec, config, 0, 1)
        except RoundFailure:
            continue
        assert set(outcome.direct_recovered) | set(outcome.relay_recovered) == set(outcome.w)
        assert not set(outcome.direct_recovered) & set(outcome.relay_recovered)
        for m in outcome.relay_recovered:
            assert np.array_equal(outcome.decoded[m], seen[m])
        if outcome.relay_recovered:
            found = True
            break
    assert found, "no relay-recovered client in 60 seeded realizations"


def test_full_participation_at_reference_outage():
    # M=10 at the reference operating point almost never loses a client
    config = _config(n_clients=10, p_e=0.1945, master_seed=7)
    field = GaloisField(256)
    code = build_encoding_matrix(10, field)
    updates = {m: np.zeros(2) for m in range(10)}
    sizes = []
    for r in range(1, 301):
        outcome = run_round(updates, None, code, field, None, config, 0, r)
        sizes.append(len(outcome.w))
    assert np.mean(sizes) > 9.99


def test_experiment_deterministic():
    spec, objective, part, train, test = _setup()
    config = _config(p_e=0.2, num_trials=2, hp=_hp(t=2))
    a = run_experiment(config, spec, objective, part, train, test)
    b = run_experiment(config, spec, objective, part, train, test)
    assert a == b


def test_proposed_equals_ideal_without_outages():
    spec, objective, part, train, test = _setup()
    config = _config(p_e=0.0, num_trials=2, methods=("proposed", "qfl_ideal"))
    records = run_experiment(config, spec, objective, part, train, test)
    by_method = {}
    for rec in records:
        by_method.setdefault(rec.method, []).append(rec)
    for prop, ideal in zip(by_method["proposed"], by_method["qfl_ideal"]):
        assert prop.test_accuracy == ideal.test_accuracy
        assert prop.train_loss == ideal.train_loss
        assert prop.decoded_count == ideal.decoded_count == 3
        assert prop.retransmissions == 0 and not prop.failed


def test_quantize_bypass_matches_plain_averaging():
    spec, objective, part, train, test = _setup()
    config = _config(
        p_e=0.0, quantize=False, methods=("proposed", "qfl_ideal"), hp=_hp(t=2)
    )
    records = run_experiment(config, spec, objective, part, train, test)
    prop = [r for r in records if r.method == "proposed"]
    ideal = [r for r in records if r.method == "qfl_ideal"]
    for a, b in zip(prop, ideal):
        assert a.test_accuracy == b.test_accuracy
        assert a.train_loss == b.train_loss


def test_disabled_relaying_degenerates_to_non_anon():
    spec, objective, part, train, test = _setup()
    base = dict(p_e=0.3, retry_limit=1, master_seed=11, hp=_hp(t=4))
    crippled = _config(methods=("proposed",), relaying=False, **base)
    reference = _config(methods=("non_anon",), **base)
    a = run_experiment(crippled, spec, objective, part, train, test)
    b = run_experiment(reference, spec, objective, part, train, test)
    assert len(a) == len(b) == 4
    for rec_a, rec_b in zip(a, b):
        assert rec_a.test_accuracy == rec_b.test_accuracy
        assert rec_a.train_loss == rec_b.train_loss
        assert rec_a.decoded_count == rec_b.decoded_count


def test_benchmarks_share_channel_with_proposed():
    spec, objective, part, train, test = _setup()
    config = _config(p_e=0.4, master_seed=13, hp=_hp(t=3), retry_limit=1)
    records = run_experiment(config, spec, objective, part, train, test)
    anon = [r for r in records if r.method == "anon"]
    non = [r for r in records if r.method == "non_anon"]
    for a, b in zip(anon, non):
        # same realization: both see the same direct arrivals
        assert a.decoded_count == b.decoded_count


def test_calibration_covers_first_round():
    spec, objective, part, train, test = _setup()
    config = _config()
    qspec = calibrate_quantizer(objective, spec, part, config)
    assert qspec.dim == spec.dim
    assert np.all(qspec.upper > 0)
    explicit = calibrate_quantizer(
        objective, spec, part, _config(quantizer_lower=-0.25, quantizer_upper=0.25)
    )
    assert np.all(explicit.upper == 0.25)
    assert np.all(explicit.lower == -0.25)


def test_run_trial_round_indices():
    spec, objective, part, train, test = _setup()
    config = _config(hp=_hp(t=3))
    field = GaloisField(256)
    code = build_encoding_matrix(3, field)
    qspec = calibrate_quantizer(objective, spec, part, config)
    records = run_trial(
        "proposed", config, spec, objective, part, train, test, qspec, code, field, 0
    )
    assert [r.round_index for r in records] == [1, 2, 3]
    assert all(0.0 <= r.test_accuracy <= 1.0 for r in records)
