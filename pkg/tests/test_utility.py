import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lnum.errors import ConfigurationError, DomainError
from lnum.utility import (FAMILIES, Utility, UtilitySpec, analytic_gradient, draw_utilities,
                          evaluate, observe)


def spec_of(family, a, b=0.0, B=1.0, noise=0.0):
    return UtilitySpec([Utility(family, a, b)], B, noise)


def test_evaluate_examples():
    assert evaluate(spec_of("linear", 3.0), 0, 0.5) == pytest.approx(1.5)
    assert evaluate(spec_of("sqrt", 1.0, 0.0, B=4.0), 0, 4.0) == pytest.approx(2.0)
    assert evaluate(spec_of("quadratic", 1.0, 2.0), 0, 0.5) == pytest.approx(0.75)
    assert evaluate(spec_of("log", 1.0, 1.0), 0, 0.0) == 0.0


def test_evaluate_domain():
    spec = spec_of("linear", 1.0)
    with pytest.raises(DomainError):
        evaluate(spec, 0, 1.5)
    with pytest.raises(DomainError):
        evaluate(spec, 0, -0.01)


def test_analytic_gradient_examples():
    assert analytic_gradient(spec_of("linear", 3.0), 0, 0.2) == 3.0
    assert analytic_gradient(spec_of("quadratic", 1.0, 2.0), 0, 0.5) == pytest.approx(1.0)
    assert analytic_gradient(spec_of("log", 1.0, 1.0), 0, 0.0) == pytest.approx(1.0)


def test_observe_without_noise_is_evaluate():
    spec = spec_of("log", 1.3, 0.7)
    rng = np.random.default_rng(0)
    assert all(observe(spec, 0, r, rng) == evaluate(spec, 0, r) for r in np.linspace(0, 1, 11))


def test_observe_support_and_mean():
    spec = spec_of("sqrt", 1.0, 0.5, noise=0.2)
    rng = np.random.default_rng(1)
    f = evaluate(spec, 0, 0.6)
    samples = np.array([observe(spec, 0, 0.6, rng) for _ in range(100_000)])
    assert samples.min() >= f - 0.2 and samples.max() <= f + 0.2
    assert abs(samples.mean() - f) <= 0.005


def test_noise_stream_deterministic():
    spec = spec_of("linear", 1.0, noise=0.1)
    a = [observe(spec, 0, 0.5, np.random.default_rng(3)) for _ in range(3)]
    r1, r2 = np.random.default_rng(8), np.random.default_rng(8)
    assert [observe(spec, 0, 0.5, r1) for _ in range(20)] == [observe(spec, 0, 0.5, r2) for _ in range(20)]
    assert a[0] == a[1] == a[2]


def test_derived_bounds():
    spec = UtilitySpec([Utility("linear", 3.0), Utility("log", 1.0, 2.0)], 2.0)
    assert spec.D == pytest.approx(max(6.0, math.log(5.0)))
    assert spec.L == pytest.approx(3.0)


def test_quadratic_must_be_nondecreasing():
    with pytest.raises(ConfigurationError):
        spec_of("quadratic", 1.0, 1.0, B=1.0)
    spec_of("quadratic", 0.5, 1.0, B=1.0)


def test_unknown_family_and_negative_params():
    with pytest.raises(ConfigurationError):
        Utility("cubic", 1.0)
    with pytest.raises(ConfigurationError):
        Utility("linear", -1.0)


@pytest.mark.parametrize("family", FAMILIES)
def test_concavity_random_triples(family):
    rng = np.random.default_rng(hash(family) % 2**32)
    B = 2.0
    for _ in range(100):
        a, b = rng.uniform(0.5, 2.0), rng.uniform(0.5, 1.5)
        if family == "quadratic":
            a = min(a, b / (2 * B))
        u = Utility(family, a, 0.0 if family == "linear" else b)
        r1, r2, lam = rng.uniform(0, B), rng.uniform(0, B), rng.uniform()
        assert u(lam * r1 + (1 - lam) * r2) >= lam * u(r1) + (1 - lam) * u(r2) - 1e-9


@settings(max_examples=200, deadline=None)
@given(family=st.sampled_from(FAMILIES), a=st.floats(0.5, 2.0), b=st.floats(0.5, 1.5),
       r1=st.floats(0.0, 1.0), r2=st.floats(0.0, 1.0), lam=st.floats(0.0, 1.0))
def test_concave_and_monotone_property(family, a, b, r1, r2, lam):
    if family == "quadratic":
        a = min(a, b / 2.0)
    u = Utility(family, a, b)
    assert u(lam * r1 + (1 - lam) * r2) >= lam * u(r1) + (1 - lam) * u(r2) - 1e-9
    lo, hi = min(r1, r2), max(r1, r2)
    assert u(hi) >= u(lo) - 1e-12


@pytest.mark.parametrize("family", ["quadratic", "linear"])
def test_central_difference_exact(family):
    rng = np.random.default_rng(4)
    for _ in range(100):
        b = rng.uniform(0.5, 1.5)
        a = rng.uniform(0.1, b / 2.0) if family == "quadratic" else rng.uniform(0.5, 2)
        u = Utility(family, a, b if family == "quadratic" else 0.0)
        d = rng.uniform(1e-3, 0.2)
        r = rng.uniform(d, 1 - d)
        assert (u(r + d) - u(r - d)) / (2 * d) == pytest.approx(u.derivative(r), abs=1e-9)


def test_draw_utilities_ranges():
    rng = np.random.default_rng(0)
    utils = draw_utilities(200, rng, 3.0)
    assert {u.family for u in utils} == set(FAMILIES)
    for u in utils:
        assert 0.5 <= u.b <= 1.5 or (u.family == "linear" and u.b == 0.0)
        assert u.a <= 2.0
    UtilitySpec(utils, 3.0)  # every draw is admissible


def test_vectorised_total_and_gradient():
    spec = UtilitySpec([Utility("linear", 2.0), Utility("quadratic", 0.25, 1.0)], 2.0)
    r = np.array([[0.5, 1.0], [1.0, 0.0]])
    assert spec.total(r) == pytest.approx([1.0 + 0.75, 2.0])
    assert spec.gradient([0.5, 1.0]) == pytest.approx([2.0, 0.5])
    sq = UtilitySpec([Utility("sqrt", 1.0, 0.0)], 1.0)
    assert sq.gradient([0.0], cap=1e6)[0] == 1e6
