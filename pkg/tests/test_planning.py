import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sae_ssd.exceptions import ConfigError
from sae_ssd.planning import DesignEffect, ess_to_actual, fraction_to_ess


def test_fraction_to_ess(tiny_pop):
    assert fraction_to_ess(0.5, 1000) == 500
    assert fraction_to_ess(1.0, tiny_pop) == tiny_pop.total
    assert fraction_to_ess(0.026875, 14_664_297) == 394_103
    with pytest.raises(ConfigError):
        fraction_to_ess(0.0, 1000)


def test_ess_to_actual():
    assert ess_to_actual(100, DesignEffect(1.16, "LLTI")) == 116
    assert ess_to_actual(100, 1.44) == 144
    assert ess_to_actual(394_103, 1.0) == 394_103
    with pytest.raises(ConfigError):
        ess_to_actual(0, 1.2)


def test_design_effect_validation():
    with pytest.warns(UserWarning, match="< 1"):
        DesignEffect(0.9)
    with pytest.raises(ConfigError):
        DesignEffect(-1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        DesignEffect(1.0)


@settings(max_examples=100, deadline=None)
@given(
    ess=st.integers(1, 10**7),
    d1=st.floats(1.0, 3.0),
    d2=st.floats(1.0, 3.0),
)
def test_actual_size_monotone(ess, d1, d2):
    lo, hi = sorted((d1, d2))
    assert ess_to_actual(ess, lo) <= ess_to_actual(ess, hi)
    assert ess_to_actual(ess, lo) <= ess_to_actual(ess + 1, lo)
    assert ess_to_actual(ess, lo) >= ess


@settings(max_examples=100, deadline=None)
@given(total=st.integers(100, 10**8), ess=st.integers(1, 100))
def test_ess_round_trip(total, ess):
    ess = min(ess, total)
    assert abs(fraction_to_ess(ess / total, total) - ess) <= 1
