import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sae_ssd.exceptions import ConfigError, DataError
from sae_ssd.population import Population
from sae_ssd.sampling import (
    SampleRealization,
    draw_outcomes,
    draw_sample,
    draw_sample_sizes,
    load_sample,
    replicate_seed,
    write_sample,
)


def test_full_census_fraction(tiny_pop):
    s = draw_sample(tiny_pop, 1.0, replicate_seed(0, 1))
    np.testing.assert_array_equal(s.n, tiny_pop.N)


def test_fraction_validation(tiny_pop):
    for f in (0.0, -0.1, 1.5, float("nan")):
        with pytest.raises(ConfigError):
            draw_sample_sizes(tiny_pop, f, replicate_seed(0))


def test_outcome_bounds(tiny_pop):
    rng = replicate_seed(3, 1)
    n = draw_sample_sizes(tiny_pop, 0.3, rng)
    y = draw_outcomes(n, tiny_pop.prevalence, rng)
    assert np.all((y >= 0) & (y <= n) & (n <= tiny_pop.N))
    with pytest.raises(DataError):
        draw_outcomes(n, np.full(n.shape, 1.2), rng)


def test_replication_streams_are_independent_of_order(tiny_pop):
    a = [draw_sample(tiny_pop, 0.2, replicate_seed(7, 1, b)).y for b in range(5)]
    b = [draw_sample(tiny_pop, 0.2, replicate_seed(7, 1, b)).y for b in reversed(range(5))][::-1]
    for x, z in zip(a, b):
        np.testing.assert_array_equal(x, z)
    assert not np.array_equal(a[0], a[1])


def test_sample_realization_validation(tiny_pop):
    with pytest.raises(DataError):
        SampleRealization(0.1, np.array([[1]]), np.array([[2]]))
    s = SampleRealization(0.1, np.array([[101, 0], [0, 0]]), np.zeros((2, 2), int))
    with pytest.raises(DataError, match="n exceeds N"):
        s.check_against(tiny_pop)


def test_sample_csv_round_trip(tiny_pop, tmp_path):
    s = draw_sample(tiny_pop, 0.5, replicate_seed(1))
    p = tmp_path / "s.csv"
    write_sample(s, tiny_pop, p, header_comment="x")
    back = load_sample(p, tiny_pop)
    np.testing.assert_array_equal(back.n, s.n)
    np.testing.assert_array_equal(back.y, s.y)


def test_sample_mean_matches_fraction(desk_bundle):
    pop = desk_bundle[0]
    n = draw_sample_sizes(pop, 0.1, replicate_seed(11))
    # binomial thinning: total is within a few SDs of f N
    sd = np.sqrt(pop.total * 0.1 * 0.9)
    assert abs(n.sum() - 0.1 * pop.total) < 5 * sd


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), f=st.floats(0.001, 1.0))
def test_sample_invariants_property(seed, f):
    tiny_pop = Population(np.array([[100, 300], [200, 400]]), np.array([[10, 30], [40, 100]]), ("A", "B"), ("y", "o"))
    s = draw_sample(tiny_pop, f, replicate_seed(seed, 0))
    assert np.all((0 <= s.y) & (s.y <= s.n) & (s.n <= tiny_pop.N))
    s2 = draw_sample(tiny_pop, f, replicate_seed(seed, 0))
    np.testing.assert_array_equal(s.y, s2.y)
