import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochflow.annealed import NotNormalized
from stochflow.diff_chain import (
    Estimate,
    NotApplicable,
    analytic_pi_origin,
    denominator_table,
    diff_kernel,
    estimate_pi_ratio,
    gamma_ext_sq,
    gamma_ext_sq_exact,
    invariant_measure,
    merge_estimates,
    simulate_diff_chain,
)
from stochflow.model_zoo import hass_model, landscape_pm1, nn_uniform_two_step, s1_model

MODELS = [s1_model, hass_model, nn_uniform_two_step, landscape_pm1]


@pytest.mark.parametrize("make", MODELS)
def test_difference_kernel_is_a_martingale(make):
    m = make()
    for x in range(-6, 7):
        row = diff_kernel(m, x)
        assert abs(row.law.total() - 1) < 1e-12
        assert row.mean() == pytest.approx(m.lattice_scale * x, abs=1e-12)


@pytest.mark.parametrize("make", MODELS)
def test_invariant_measure_is_invariant(make):
    m = make()
    pi = invariant_measure(m)
    L = max(pi)
    for y in range(-5, 6):
        inflow = math.fsum(pi.get(x, 1.0) * diff_kernel(m, x).law.masses.get(y, 0.0) for x in range(y - 8, y + 9))
        assert inflow == pytest.approx(pi[y], rel=1e-10)
    assert pi[L] == pytest.approx(1.0, abs=1e-9)


def test_exact_origin_masses():
    assert invariant_measure(s1_model())[0] == pytest.approx(4 / 3, rel=1e-10)
    assert invariant_measure(nn_uniform_two_step())[0] == pytest.approx(1.5, rel=1e-10)
    assert analytic_pi_origin(s1_model()) == pytest.approx(4 / 3)
    with pytest.raises(NotApplicable):
        analytic_pi_origin(landscape_pm1())


def test_exact_gamma_values():
    assert gamma_ext_sq_exact(s1_model()) == pytest.approx(1 / 3, rel=1e-10)
    assert gamma_ext_sq_exact(nn_uniform_two_step()) == pytest.approx(1 / (2 * math.sqrt(2)), rel=1e-10)


def test_s1_denominator_only_at_origin():
    h = denominator_table(s1_model())
    assert h[0] == pytest.approx(0.75)
    assert all(abs(v) < 1e-15 for x, v in h.items() if x != 0)


def test_gamma_requires_unit_variance():
    with pytest.raises(NotNormalized):
        gamma_ext_sq(s1_model(normalize=False), 1000, 0)


@pytest.mark.parametrize("make", [hass_model, landscape_pm1])
def test_mc_gamma_matches_exact(make):
    m = make()
    est = gamma_ext_sq(m, 2_000_000, 11)
    assert abs(est.value - gamma_ext_sq_exact(m)) <= 4 * est.stderr + 1e-12


def test_chain_reproducible_and_starts_at_x0():
    m = hass_model()
    a = simulate_diff_chain(m, 3, 1000, 5)
    assert a[0] == 3
    assert np.array_equal(a, simulate_diff_chain(m, 3, 1000, 5))


def test_ratio_of_equal_functions_is_one():
    f = lambda x: (np.abs(np.asarray(x)) < 1e-9).astype(float)
    est = estimate_pi_ratio(s1_model(), f, f, 10_000, 2)
    assert est.value == pytest.approx(1.0)


@settings(max_examples=30)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0.01, 2)), min_size=1, max_size=6))
def test_merge_weights(pairs):
    ests = [Estimate(v, s, 10, "x") for v, s in pairs]
    out = merge_estimates(ests)
    assert min(v for v, _ in pairs) - 1e-9 <= out.value <= max(v for v, _ in pairs) + 1e-9
    assert out.stderr <= min(s for _, s in pairs) + 1e-12


def test_estimate_rejects_negative_stderr():
    with pytest.raises(ValueError):
        Estimate(1.0, -1.0, 1, "x")
