import math

import numpy as np
import pytest
from scipy import integrate

from stochflow.quenched_field import compact_bump, constant_one, gauss_bump
from stochflow.she_oracle import (
    NonpositiveTime,
    QuadratureNotConverged,
    heat_kernel,
    local_time_mgf,
    mc_localtime,
    she_moment_k1,
    she_moment_k2,
)

PHI = gauss_bump(0.0, 0.5)


def test_k2_golden():
    assert she_moment_k2(1.0, PHI, 1 / 3).value == pytest.approx(0.2429158529, abs=1e-9)


def test_mgf_golden():
    assert local_time_mgf(1.0, 1.0).value == pytest.approx(5.008980080762283, rel=1e-12)
    assert local_time_mgf(0.0, 1.0).value == pytest.approx(1.0)


def test_k1_gaussian_closed_form():
    # the bump is a centred normal density with variance eps^2/2
    t, eps = 1.0, 0.5
    expected = 1 / math.sqrt(2 * math.pi * (t + eps ** 2 / 2))
    assert she_moment_k1(t, PHI).value == pytest.approx(expected, rel=1e-11)


@pytest.mark.parametrize("s,t", [(0.25, 0.75), (0.5, 0.5)])
def test_chapman_kolmogorov(s, t):
    for x in (0.0, 0.7, -1.3):
        v = integrate.quad(lambda y: heat_kernel(s, x - y) * heat_kernel(t, y), -np.inf, np.inf, epsabs=1e-13)[0]
        assert v == pytest.approx(heat_kernel(s + t, x), abs=1e-9)


def test_gamma_zero_factorizes():
    k1 = she_moment_k1(1.0, PHI).value
    assert she_moment_k2(1.0, PHI, 0.0).value == pytest.approx(k1 * k1, abs=1e-8)
    # the bump is only C^2, so the tensor rule converges algebraically
    bump = compact_bump(0.3, 1.0)
    k1 = she_moment_k1(1.0, bump).value
    assert she_moment_k2(1.0, bump, 0.0, tol=1e-7).value == pytest.approx(k1 * k1, abs=1e-8)


def test_unconverged_quadrature_raises():
    with pytest.raises(QuadratureNotConverged):
        she_moment_k2(1.0, compact_bump(0.3, 1.0), 0.5, tol=1e-14, max_n=96)


def test_constant_phi_reduces_to_mgf():
    for g in (0.3, 1.0):
        assert she_moment_k2(1.0, constant_one(), g).value == pytest.approx(local_time_mgf(g, 1.0).value, rel=1e-8)


def test_k2_nondecreasing_in_gamma():
    vals = [she_moment_k2(1.0, PHI, g).value for g in np.linspace(0, 1.5, 7)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_nonpositive_time():
    with pytest.raises(NonpositiveTime):
        she_moment_k1(0.0, PHI)
    with pytest.raises(NonpositiveTime):
        heat_kernel(-1.0, 0.0)


def test_mc_localtime_gamma_zero_is_k1_squared():
    k1 = she_moment_k1(1.0, PHI).value
    est = mc_localtime(2, 1.0, 0.0, PHI, 4000, 1e-3, seed=1)
    assert abs(est.value - k1 * k1) < 4 * est.stderr


def test_mc_localtime_rejects_coarse_mesh():
    with pytest.raises(ValueError):
        mc_localtime(2, 1.0, 1.0, PHI, 10, 1e-2)


def test_mc_localtime_k3_runs():
    est = mc_localtime(3, 1.0, 0.2, PHI, 500, 1e-3, seed=2)
    assert est.value > 0 and est.bias >= 0
