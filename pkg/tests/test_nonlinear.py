import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynhom.nonlinear import AssumptionError, Nonlinearity, Reaction, check_reaction, linear_tanh, power, reaction, zero


@pytest.mark.parametrize("name", ["linear", "cubic", "linear_tanh"])
def test_catalog_entries_validate(name):
    check_reaction(reaction(name), name)


def test_power_with_exponent():
    r = reaction("power", 3.0)
    assert r.exponent == 3.0
    check_reaction(r)
    with pytest.raises(KeyError):
        reaction("power")
    with pytest.raises(KeyError):
        reaction("nope")


def test_cubic_values():
    f = reaction("cubic")
    assert np.allclose(f(np.array([-2.0, 0.0, 0.5])), [-8.0, 0.0, 0.125])


def test_zero_is_rejected():
    with pytest.raises(AssumptionError):
        check_reaction(zero())


def test_wrong_antiderivative_rejected():
    bad = Reaction("bad", lambda s: s, lambda s: s**2, 2.0, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(AssumptionError, match="antiderivative"):
        check_reaction(bad)


def test_wrong_growth_rejected():
    # s * |s| grows like |s|^3, not |s|^2
    bad = Reaction("bad", lambda s: s * np.abs(s), lambda s: np.abs(s) ** 3 / 3, 2.0, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(AssumptionError, match="growth"):
        check_reaction(bad)


def test_one_sided_bound_rejected():
    # f(s) = s - 3 sin(s) dips with slope -2, beyond l = 1
    fn = lambda s: s - 3 * np.sin(s)  # noqa: E731
    F = lambda s: 0.5 * s**2 + 3 * np.cos(s) - 3  # noqa: E731
    bad = Reaction("wavy", fn, F, 2.0, 0.01, 2.0, 20.0, 1.0)
    with pytest.raises(AssumptionError, match="Lipschitz"):
        check_reaction(bad)


def test_pair_constants():
    nl = Nonlinearity(power(4), linear_tanh())
    assert nl.p == 4 and nl.q == 2
    assert nl.l == 2.0 and nl.alpha2 == 2.0
    nl.validate()


@given(s=st.floats(-50, 50), r=st.floats(-50, 50))
def test_tanh_pair_bounds(s, r):
    g = linear_tanh()
    lhs = (g(np.array([s]))[0] - g(np.array([r]))[0]) * (s - r)
    assert lhs >= -g.lower_lipschitz * (s - r) ** 2 - 1e-9
    assert lhs <= g.upper_lipschitz * (s - r) ** 2 + 1e-9 * (1 + abs(lhs))
