import math

import numpy as np
import pytest

from codedfl.channel import sample_connectivity
from codedfl.dnc import assemble_from_connectivity, build_encoding_matrix, prune
from codedfl.galois import GaloisField
from codedfl.rng import substream
from codedfl.theory import (
    AssumptionConstants,
    StepSizeConditionError,
    alpha_bar,
    client_outage_dominant,
    client_unseen_probability,
    kbar_inverse,
    kstar,
    sample_unseen_frequency,
    step_size_limit,
    convergence_bound,
    unseen_in_realization,
)


def test_outage_dominant_values():
    assert client_outage_dominant(3, 0.0) == 0.0
    assert client_outage_dominant(1, 0.4) == 0.4
    assert math.isclose(client_outage_dominant(3, 0.3), 0.00243, rel_tol=1e-12)
    with pytest.raises(ValueError):
        client_outage_dominant(3, 1.0)


def test_unseen_probability_closed_form():
    # M=2, p=0.3: direct and own relay lost (0.09), the other client
    # fails with 0.3 + 0.7*0.3 = 0.51
    assert math.isclose(client_unseen_probability(2, 0.3), 0.0459, rel_tol=1e-12)
    assert client_unseen_probability(4, 0.0) == 0.0


@pytest.mark.parametrize("m", [2, 3, 4])
@pytest.mark.parametrize("p_e", [0.2, 0.3])
def test_unseen_within_dominance_band(m, p_e):
    lo = client_outage_dominant(m, p_e)
    assert lo <= client_unseen_probability(m, p_e) <= 2 * lo


def test_unseen_predicate_matches_pruned_system():
    # the fast predicate and the full assemble/prune path must agree
    # on every realization
    field = GaloisField(256)
    for m in (2, 3, 4):
        code = build_encoding_matrix(m, field)
        rng = substream(17, "bridge", m)
        for _ in range(400):
            conn = sample_connectivity(m, 0.45, rng)
            system = prune(assemble_from_connectivity(code, conn))
            seen = set(int(w) for w in system.W)
            for client in range(m):
                assert unseen_in_realization(conn, client) == (client not in seen)


@pytest.mark.parametrize("m,p_e", [(2, 0.3), (3, 0.3)])
def test_unseen_frequency_matches_closed_form(m, p_e):
    trials = 200_000
    freq = sample_unseen_frequency(m, p_e, trials, substream(17, "mc", m))
    p = client_unseen_probability(m, p_e)
    se = math.sqrt(p * (1 - p) / trials)
    assert abs(freq - p) < 3 * se


def test_kbar_inverse_examples():
    assert math.isclose(kbar_inverse(1, 0.7), 1.0, rel_tol=1e-15)
    for m in (2, 5, 9):
        assert math.isclose(kbar_inverse(m, 0.0), 1.0 / m, rel_tol=1e-15)
    assert math.isclose(kbar_inverse(2, 0.5), 5.0 / 6.0, rel_tol=1e-15)


@pytest.mark.parametrize("q", [0.05, 0.3, 0.6, 0.9])
def test_kbar_inverse_matches_subset_enumeration(q):
    # brute force over all non-empty subsets, no binomials involved
    for m in range(1, 13):
        total = 0.0
        for bits in range(1, 1 << m):
            size = bits.bit_count()
            total += (1.0 - q) ** size * q ** (m - size) / size
        exact = total / (1.0 - q**m)
        assert abs(kbar_inverse(m, q) - exact) < 1e-12


def test_alpha_bar_examples():
    assert math.isclose(alpha_bar(1, 0.3), 1.0, rel_tol=1e-15)
    assert math.isclose(alpha_bar(2, 0.5), 5.0 / 12.0, rel_tol=1e-15)


@pytest.mark.parametrize("m,q", [(2, 0.3), (5, 0.3), (5, 0.6)])
def test_participation_identities_monte_carlo(m, q):
    draws = 100_000
    rng = substream(17, "participation", m, int(q * 10))
    deltas = rng.standard_normal((m, 3))
    alive = rng.random((draws, m)) >= q
    alive = alive[alive.any(axis=1)].astype(np.float64)
    sizes = alive.sum(axis=1, keepdims=True)
    first = alive @ deltas / sizes
    second = alive @ deltas / sizes**2
    se1 = first.std(axis=0) / math.sqrt(first.shape[0])
    se2 = second.std(axis=0) / math.sqrt(second.shape[0])
    assert np.all(np.abs(first.mean(axis=0) - deltas.mean(axis=0)) < 3 * se1)
    target2 = alpha_bar(m, q) * deltas.sum(axis=0)
    assert np.all(np.abs(second.mean(axis=0) - target2) < 3 * se2)


def test_kstar_examples():
    assert kstar(10, 0.0) == 5.5
    for m in (1, 2, 7):
        assert kstar(m, 0.0) == (m + 1) / 2


def test_kstar_bound_chain():
    # 1/kbar_inverse is the true mean reciprocal proxy; kstar lower-bounds it
    for m in range(2, 9):
        for p_e in (0.1, 0.3, 0.5):
            q = p_e ** (2 * m - 1)
            assert 1.0 / kbar_inverse(m, q) >= kstar(m, p_e)
            bound = 2.0 / ((m + 1) * (1 - q) * (1 - q**m))
            assert kbar_inverse(m, q) <= bound + 1e-15


def _constants(**kw):
    base = dict(
        smoothness=1.0,
        initial_gap=0.0,
        sigma2=0.0,
        batch_size=1,
        local_steps=1,
        rounds=256,
        n_clients=4,
        j_squared=0.0,
        d=0.0,
    )
    base.update(kw)
    return AssumptionConstants(**base)


def test_bound_zero_case():
    assert convergence_bound(_constants(), kstar_value=2.0) == 0.0


def test_bound_monotone_in_rounds():
    values = []
    for t in (16, 64, 256, 1024, 4096):
        c = _constants(
            rounds=t, initial_gap=1.0, sigma2=1.0, batch_size=8, j_squared=0.5, d=0.7
        )
        values.append(convergence_bound(c, kstar_value=2.0))
    assert all(a > b for a, b in zip(values, values[1:]))


def test_bound_hand_example_first_term():
    c = _constants(rounds=100, n_clients=10, initial_gap=1.0)
    with pytest.raises(StepSizeConditionError):
        convergence_bound(c, kstar_value=5.5)
    value = convergence_bound(c, kstar_value=5.5, check_condition=False)
    assert math.isclose(value, 496.0 / 11.0 / math.sqrt(550.0), rel_tol=1e-9)
    assert abs(value - 1.92268) < 1e-5


def test_bound_condition_boundary():
    # I exactly at the limit is admissible
    t, i = 16, 2
    ks = ((t * i) ** 0.25 / i) ** (4.0 / 3.0)
    assert math.isclose(step_size_limit(t, i, ks), i, rel_tol=1e-12)
    c = _constants(rounds=t, local_steps=i, initial_gap=1.0)
    assert convergence_bound(c, kstar_value=ks) > 0.0


def test_bound_accepts_measured_j_array():
    t, m = 8, 3
    scalar = _constants(rounds=t, n_clients=m, j_squared=0.25)
    array = _constants(rounds=t, n_clients=m, j_squared=np.full((t, m), 0.25))
    ks = 1.5
    assert math.isclose(
        convergence_bound(scalar, ks), convergence_bound(array, ks), rel_tol=1e-15
    )


def test_constants_validation():
    with pytest.raises(ValueError):
        _constants(smoothness=0.0)
    with pytest.raises(ValueError):
        _constants(sigma2=-1.0)
    with pytest.raises(ValueError):
        _constants(j_squared=np.ones((2, 2)))
    with pytest.raises(ValueError):
        _constants(d=np.ones(3))
    _constants(d=np.ones(4), j_squared=np.ones((256, 4)))
