"""Lumped-chain enumeration, generator assembly, uniformization."""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from popdrift.errors import ModelError, RateError
from popdrift.exact import (
    LumpedDistribution,
    enumerate_states,
    expected_occupancy,
    generator,
    point_mass,
    transient,
)
from popdrift.model import builtin_example, load_model

P1, P2 = 0.008, 0.05
LAM1 = P1 * (1 - (1 - P1 / 2))  # single idle agent, nobody else around
MU1 = P2 * (1 - P2 / 2)  # single backoff agent


def two_state_transient(t):
    """Analytic P(backoff) for the N=1 chain started idle."""
    rho = LAM1 + MU1
    return (LAM1 / rho) * (1.0 - math.exp(-rho * t))


def test_enumerate_small_spaces():
    space = enumerate_states(2, 3)
    assert space.states.tolist() == [[0, 3], [1, 2], [2, 1], [3, 0]]
    assert space.size == 4
    assert enumerate_states(3, 2).size == 6
    assert enumerate_states(2, 1600).size == 1601


def test_enumeration_is_lexicographic_complete_and_unique():
    for n_states, N in ((2, 7), (3, 5), (4, 4)):
        space = enumerate_states(n_states, N)
        assert space.size == math.comb(N + n_states - 1, n_states - 1)
        rows = [tuple(r) for r in space.states.tolist()]
        assert rows == sorted(set(rows))
        assert all(sum(r) == N for r in rows)
        for k, r in enumerate(rows):
            assert space.index_of(r) == k


def test_enumerate_cap():
    with pytest.raises(ModelError, match="cap"):
        enumerate_states(3, 2000, cap=10**6)


def test_generator_n1_example_rates():
    model = builtin_example()
    space = enumerate_states(2, 1)
    gen = generator(model, space).toarray()
    i_backoff = space.index_of((0, 1))
    i_idle = space.index_of((1, 0))
    assert gen[i_idle, i_backoff] == pytest.approx(LAM1, rel=1e-12)
    assert gen[i_backoff, i_idle] == pytest.approx(MU1, rel=1e-12)
    assert gen[i_idle, i_idle] == pytest.approx(-LAM1, rel=1e-12)
    assert gen[i_backoff, i_backoff] == pytest.approx(-MU1, rel=1e-12)
    assert LAM1 == pytest.approx(3.2e-5, abs=1e-12)
    assert MU1 == pytest.approx(0.04875, abs=1e-12)


def test_generator_zero_model():
    model = load_model("states = a, b\nrate a -> b : 0\n")
    gen = generator(model, enumerate_states(2, 4))
    assert gen.nnz == 0


def test_generator_row_sums_vanish():
    model = builtin_example()
    space = enumerate_states(2, 30)
    gen = generator(model, space)
    residual = np.abs(gen @ np.ones(space.size))
    assert residual.max() <= 1e-16


def test_generator_skips_empty_source_states():
    # the rate is singular at m_a = 0, but no transition leaves a
    # state with zero count, so assembly succeeds
    model = load_model("states = a, b\nrate a -> b : min(1, 0.01/m[a])\n")
    space = enumerate_states(2, 5)
    gen = generator(model, space)
    assert np.all(np.isfinite(gen.toarray()))


def test_generator_propagates_bad_rates():
    model = load_model("states = a, b\nrate a -> b : m[a]-1\n")
    with pytest.raises(RateError):
        generator(model, enumerate_states(2, 3))


def test_transient_zero_generator():
    model = load_model("states = a, b\nrate a -> b : 0\n")
    space = enumerate_states(2, 3)
    gen = generator(model, space)
    init = point_mass(space, (2, 1))
    out = transient(gen, init, 50.0)
    assert np.array_equal(out.probs, init.probs)
    assert out.time == 50.0


def test_transient_matches_two_state_closed_form():
    model = builtin_example()
    space = enumerate_states(2, 1)
    gen = generator(model, space)
    init = point_mass(space, (1, 0))
    for t in (1.0, 10.0, 100.0, 1000.0):
        out = transient(gen, init, t)
        want = two_state_transient(t)
        assert abs(out.probs[space.index_of((0, 1))] - want) <= 1e-9, t
    out = transient(gen, init, 1000.0)
    assert out.probs[space.index_of((0, 1))] == pytest.approx(
        6.5598e-4, abs=1e-8
    )


def test_transient_matches_dense_matrix_exponential():
    """Independent oracle: dense expm of the same generator."""
    model = builtin_example()
    space = enumerate_states(2, 6)
    gen = generator(model, space)
    init = point_mass(space, (6, 0))
    for t in (5.0, 100.0):
        want = init.probs @ expm(gen.toarray() * t)
        got = transient(gen, init, t)
        assert np.max(np.abs(got.probs - want)) <= 1e-10, t


def test_transient_segments_long_horizons():
    # rates of order 1 over a long horizon force time splitting
    model = load_model("states = a, b\nrate a -> b : 5\nrate b -> a : 3\n")
    space = enumerate_states(2, 10)
    gen = generator(model, space)
    init = point_mass(space, (10, 0))
    lam = float(np.max(-gen.diagonal()))
    t = 300.0
    assert lam * t > 1e4  # exercises more than one segment
    got = transient(gen, init, t)
    want = init.probs @ expm(gen.toarray() * t)
    assert np.max(np.abs(got.probs - want)) <= 1e-10
    assert got.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_transient_mass_conservation_random_models():
    rng = np.random.default_rng(17)
    for _ in range(10):
        c1, c2 = rng.uniform(0.1, 2.0, size=2)
        doc = f"states = a, b\nrate a -> b : {c1}\nrate b -> a : {c2}\n"
        model = load_model(doc)
        N = int(rng.integers(1, 11))
        space = enumerate_states(2, N)
        gen = generator(model, space)
        init = point_mass(space, (N, 0))
        out = transient(gen, init, float(rng.uniform(0.1, 50.0)))
        assert abs(float(out.probs.sum()) - 1.0) <= 1e-12
        assert np.all(out.probs >= 0)


def test_transient_tolerance_refinement():
    model = builtin_example()
    space = enumerate_states(2, 12)
    gen = generator(model, space)
    init = point_mass(space, (12, 0))
    loose = transient(gen, init, 200.0, tol=1e-8)
    tight = transient(gen, init, 200.0, tol=1e-12)
    assert np.max(np.abs(loose.probs - tight.probs)) <= 1e-7


def test_expected_occupancy_point_and_mixture():
    space1 = enumerate_states(2, 1)
    assert expected_occupancy(point_mass(space1, (1, 0))).tolist() == [1.0, 0.0]

    space3 = enumerate_states(2, 3)
    probs = np.zeros(space3.size)
    probs[space3.index_of((0, 3))] = 0.5
    probs[space3.index_of((3, 0))] = 0.5
    mix = LumpedDistribution(space=space3, probs=probs, time=0.0)
    assert np.allclose(expected_occupancy(mix), [0.5, 0.5])


def test_expected_occupancy_n1_long_run():
    model = builtin_example()
    space = enumerate_states(2, 1)
    gen = generator(model, space)
    out = transient(gen, point_mass(space, (1, 0)), 1000.0)
    occ = expected_occupancy(out)
    assert occ[1] == pytest.approx(6.5598e-4, abs=1e-8)
    assert occ[0] == pytest.approx(1 - 6.5598e-4, abs=1e-8)


def test_distribution_validation():
    space = enumerate_states(2, 2)
    with pytest.raises(ModelError, match="sum to 1"):
        LumpedDistribution(space=space, probs=np.array([0.5, 0.2, 0.2]), time=0.0)
    with pytest.raises(ModelError, match="non-negative"):
        LumpedDistribution(space=space, probs=np.array([1.5, -0.5, 0.0]), time=0.0)
    with pytest.raises(ModelError, match="sum to N"):
        point_mass(space, (5, 5))
