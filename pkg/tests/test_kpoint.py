import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochflow.annealed import annealed_law
from stochflow.kpoint import (
    additive_functional,
    cumulant_audit,
    decay_profile,
    is_pp_pattern,
    joint_cumulant,
    joint_kernel_pmf,
    log_tilt_normalizer,
    set_partitions,
    simulate_kpoint,
    tilted_kernel_pmf,
    zeta,
)
from stochflow.model_zoo import hass_model, landscape_pm1, s1_model

MODELS = [s1_model, hass_model, landscape_pm1]


def test_set_partition_counts_are_bell_numbers():
    assert [len(set_partitions(m)) for m in range(1, 7)] == [1, 2, 5, 15, 52, 203]


@pytest.mark.parametrize("make", MODELS)
@settings(max_examples=10, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=1, max_size=3))
def test_projectivity(make, sites):
    m = make()
    pk = joint_kernel_pmf(m, tuple(sites))
    mu = annealed_law(m).probs
    assert abs(pk.probs.sum() - 1) < 1e-12
    for i in range(len(sites)):
        assert np.abs(pk.marginal(i) - mu).max() < 1e-12


def test_s1_coincident_pair():
    pk = joint_kernel_pmf(s1_model(), (0, 0))
    # E[w^2] with w in {1/4, 3/4}
    assert pk.table[(0, 0)] == pytest.approx(0.3125)
    assert pk.table[(0, 1)] == pytest.approx(0.1875)


def test_distant_walkers_independent():
    m = hass_model()
    pk = joint_kernel_pmf(m, (0, 5))
    mu = annealed_law(m).probs
    assert np.abs(pk.probs - np.outer(mu, mu)).max() < 1e-15


def test_zeta_values():
    assert zeta(s1_model(), 0) == pytest.approx(0.25)
    assert zeta(s1_model(), 1) == 0.0
    assert zeta(landscape_pm1(), 1) != 0.0


def test_pp_pattern():
    assert is_pp_pattern((1, 2), 1)
    assert is_pp_pattern((1, 1, 2, 2), 2)
    assert not is_pp_pattern((1, 1, 1, 2), 2)


def test_cumulant_of_independent_sites_vanishes():
    assert abs(joint_cumulant(hass_model(), 2, (1, 2), (0, 3))) < 1e-15


@pytest.mark.parametrize("make", [s1_model, hass_model])
def test_audit_passes(make):
    assert all(r["pass"] for r in cumulant_audit(make()))


def test_decay_profile_cuts_off():
    m = landscape_pm1()
    prof = dict(decay_profile(m, 2, [0, 1, 2, 3, 4]))
    assert prof[0] > 1e-3
    assert max(prof[s] for s in prof if s > m.interaction_range) < 1e-13


def test_tilt_at_zero_is_identity():
    pk = joint_kernel_pmf(hass_model(), (0, 0))
    assert np.allclose(tilted_kernel_pmf(pk, 0.0).probs, pk.probs)
    assert log_tilt_normalizer(pk, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_annealed_kpoint_marginal_is_the_annealed_walk():
    m = s1_model()
    path = simulate_kpoint(m, 2, 0, 20_000, walker_seed=4)
    inc = np.diff(path.scaled[:, 0])
    assert abs(inc.mean() - annealed_law(m).mean()) < 5 * annealed_law(m).variance() ** 0.5 / math.sqrt(inc.size)


def test_quenched_walkers_agree_in_same_environment():
    m = s1_model()
    a = simulate_kpoint(m, 1, 0, 50, measure="quenched", walker_seed=1, env_seed=9)
    b = simulate_kpoint(m, 1, 0, 50, measure="quenched", walker_seed=1, env_seed=9)
    assert np.array_equal(a.positions, b.positions)


def test_additive_functional_counts_meetings():
    path = simulate_kpoint(s1_model(), 2, 0, 100, walker_seed=2)
    v = additive_functional(path, 0, 1, lambda d: float(d == 0))
    same = (path.positions[:-1, 0] == path.positions[:-1, 1]).sum()
    assert v[-1] == same
    with pytest.raises(ValueError):
        additive_functional(path, 0, 0, abs)
