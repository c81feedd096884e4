import math

import numpy as np
import pytest

from stochflow.model_zoo import hass_model, landscape_pm1, s1_model
from stochflow.quenched_field import (
    compact_bump,
    constant_one,
    environment_table,
    evolve_tilted_density,
    field_series,
    gauss_bump,
    martingale_increments,
    moment_estimate,
    parse_phi,
    predictable_qv,
    tilted_samples,
    tilted_walk_pairing,
)
from stochflow.she_oracle import she_moment_k1

from _brute import brute_predictable_qv

PHI = gauss_bump(0.0, 0.5)


def test_parse_phi():
    assert parse_phi("gauss:0,0.5") == gauss_bump(0.0, 0.5)
    assert parse_phi("bump:1,2") == compact_bump(1.0, 2.0)
    assert parse_phi("one")(np.array([3.0]))[0] == 1.0
    with pytest.raises(ValueError):
        parse_phi("wave:1")


def test_compact_bump_support():
    f = compact_bump(0.0, 1.0)
    assert f(np.array([1.5]))[0] == 0.0
    assert f(np.array([0.0]))[0] > 0


@pytest.mark.parametrize("make", [s1_model, hass_model, landscape_pm1])
def test_mean_total_mass_is_one(make):
    # each environment's tilted mass is a mean-one martingale
    tab = environment_table(make(), 64, 1, (constant_one(),), 400, 3)
    m = tab["mass"]
    assert abs(m.mean() - 1) < 4 * m.std(ddof=1) / math.sqrt(m.size)


def test_density_is_nonnegative_and_grows_from_a_point():
    d = evolve_tilted_density(s1_model(), 64, 1, 0)
    assert d[0].masses == {0: 1.0}
    assert min(d[-1].masses.values()) > 0
    assert len(d) == 65


def test_time_zero_martingale_and_qv_vanish():
    m = s1_model()
    assert martingale_increments(m, 16, 1, 0, PHI).values[0] == 0.0
    assert predictable_qv(m, 16, 1, 0, PHI).values[0] == 0.0


@pytest.mark.parametrize("make", [s1_model, hass_model])
def test_predictable_qv_matches_brute_force(make):
    m = make()
    qv = predictable_qv(m, 32, 1, 4, PHI).values
    assert np.abs(qv - brute_predictable_qv(m, 32, 1, 4, PHI)).max() < 1e-12


def test_field_is_initial_value_plus_martingale_plus_nothing_for_constant():
    # with phi = 1 the drift term vanishes: H_t = 1 + M_t exactly
    s = field_series(s1_model(), 64, 1, 2, constant_one())
    assert np.allclose(s["H"], 1 + s["M"], atol=1e-12)
    assert np.allclose(s["H"], s["mass"], atol=1e-12)


def test_first_moment_exact_route_is_close_to_heat_kernel():
    ref = she_moment_k1(1.0, PHI).value
    assert abs(tilted_walk_pairing(s1_model(), 1024, 1, PHI) - ref) / ref < 0.02


def test_direct_first_moment_matches_exact():
    res = moment_estimate(s1_model(), 128, 1, PHI, 1, 1000, 5)
    assert res.tilted.stderr == 0.0
    assert abs(res.direct.value - res.tilted.value) < 4 * res.direct.stderr


def test_second_moment_estimators_agree():
    res = moment_estimate(hass_model(), 64, 1, PHI, 2, 2000, 6)
    assert not res.disagreement


def test_tilted_samples_reproducible_across_workers():
    a = tilted_samples(s1_model(), 64, 1, 2, PHI, 600, 9, workers=1)
    b = tilted_samples(s1_model(), 64, 1, 2, PHI, 600, 9, workers=2)
    assert np.array_equal(a, b)


def test_moment_order_bounds():
    with pytest.raises(ValueError):
        moment_estimate(s1_model(), 16, 1, PHI, 5, 10, 0)
