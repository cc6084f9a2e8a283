import math

import pytest
import scipy.stats
from hypothesis import assume, given
from hypothesis import strategies as st

from sketchreg.errors import OutOfDomain, ZeroEffect
from sketchreg.inference import (
    M1Variant,
    SizeRuleInputs,
    m1_rule,
    m2_rule,
    m3_rule,
    s_factor,
    size_rules,
)

prob = st.floats(0.001, 0.999)


def test_s_factor_examples():
    assert s_factor(0.5, 0.5) == 0.0
    S = s_factor(0.05, 0.8)
    assert S == pytest.approx(2.4866, abs=0.01)
    assert S == pytest.approx(2.486475, abs=1e-6)
    assert S * S == pytest.approx(6.18, abs=0.01)
    assert s_factor(0.025, 0.975) == pytest.approx(3.9199, abs=1e-4)


@given(prob, prob)
def test_s_factor_matches_scipy_and_symmetry(a, g):
    ref = scipy.stats.norm.ppf(g) + scipy.stats.norm.ppf(1 - a)
    assert s_factor(a, g) == pytest.approx(ref, abs=2e-9)
    assert s_factor(a, g) == pytest.approx(s_factor(1 - g, 1 - a), abs=1e-12)


@pytest.mark.parametrize("bad", [0.0, 1.0, -1.0])
def test_s_factor_domain(bad):
    with pytest.raises(OutOfDomain):
        s_factor(bad, 0.8)
    with pytest.raises(OutOfDomain):
        s_factor(0.05, bad)


def test_m1_examples():
    assert m1_rule(40, 1, M1Variant.QSQUARED) == 1600
    assert m1_rule(40, 1, M1Variant.LOGQ) == 148
    assert m1_rule(2, 10, "logq") == 14
    with pytest.raises(OutOfDomain):
        m1_rule(1, 1, "logq")


def test_m2_examples():
    assert m2_rule(500, 0.1, 0.1, 0.05, 0.8) == 3092
    # S = 1: alpha = 0.5, gamma = Phi(1)
    assert m2_rule(250, 0.3, 0.3, 0.5, float(scipy.stats.norm.cdf(1.0))) == 250
    with pytest.raises(ZeroEffect):
        m2_rule(100, 0.1, 0.0, 0.05, 0.8)


@given(st.integers(10, 10**5), st.floats(1e-3, 10), st.floats(1e-3, 10), st.floats(0.1, 100))
def test_m2_scale_invariance(m1, se, effect, k):
    a = m2_rule(m1, se, effect, 0.05, 0.8)
    b = m2_rule(m1, k * se, k * effect, 0.05, 0.8)
    exact = m1 * s_factor(0.05, 0.8) ** 2 * (se / effect) ** 2
    # equal unless the product sits within rounding noise of an integer
    assume(abs(exact - round(exact)) > 1e-6 * max(1.0, exact))
    assert a == b


def test_m2_decreasing_in_effect():
    vals = [m2_rule(1000, 0.2, e, 0.05, 0.8) for e in (0.05, 0.1, 1.0, 10.0, 1e6)]
    assert vals == sorted(vals, reverse=True) and vals[-1] == 0


def test_m3_reference_examples():
    a = m3_rule(247199, 0.05, 0.8, 10)
    b = m3_rule(247199, 0.05, 0.8, 5)
    assert a == 15283
    assert abs(a - 15283) <= 0.001 * 15283
    assert abs(b - 61132) <= 0.001 * 61132


def test_m3_tau_equals_s():
    S = s_factor(0.05, 0.8)
    assert m3_rule(12345, 0.05, 0.8, S) == 12345


def test_m3_domain():
    with pytest.raises(OutOfDomain):
        m3_rule(100, 0.05, 0.8, 0.0)


@given(st.integers(1000, 10**7), st.floats(0.01, 0.45), st.floats(0.55, 0.99), st.floats(1, 50))
def test_m3_monotone(n, a, g, tau):
    base = m3_rule(n, a, g, tau)
    assert m3_rule(2 * n, a, g, tau) >= base
    assert m3_rule(n, a, min(g + 0.005, 0.999), tau) >= base
    assert m3_rule(n, a, g, tau * 1.5) <= base
    assert m3_rule(n, a * 0.5, g, tau) >= base


def test_size_rules_bundle():
    out = size_rules(SizeRuleInputs(n=247199, q=40, effect=0.1, se_estimate=0.1, m1=500))
    assert out["m1"] == 500 and out["m2"] == 3092 and out["m3"] == 15283
    assert out["S2"] == pytest.approx(6.18256, abs=1e-5)
    assert size_rules(SizeRuleInputs(n=1000, q=40))["m1"] == 148
    with pytest.raises(OutOfDomain):
        SizeRuleInputs(n=1, q=2, alpha_bar=1.0)
    with pytest.raises(OutOfDomain):
        SizeRuleInputs(n=1, q=2, tau_inf=-1)
