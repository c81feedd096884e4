"""Reference values for the continuum limit: heat kernel and local-time moments.

Local time here is the semimartingale (Tanaka) local time at 0 of W = B1 - B2,
a Brownian motion with quadratic variation 2t, so that L_t has the law of |W_t|.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import ndtr, roots_hermitenorm

from .diff_chain import Estimate
from .rng import derive_seed


class NonpositiveTime(ValueError):
    pass


class QuadratureNotConverged(ArithmeticError):
    pass


@dataclass(frozen=True)
class OracleResult:
    value: float
    method: str  # closed_form | quadrature | monte_carlo
    error_bound: float = 0.0

    def to_dict(self):
        return {"value": self.value, "method": self.method, "error_bound": self.error_bound}


def _check_time(t):
    if not t > 0:
        raise NonpositiveTime(f"t must be positive, got {t}")


def heat_kernel(t, x):
    _check_time(t)
    x = np.asarray(x, dtype=float)
    out = np.exp(-x * x / (2 * t)) / math.sqrt(2 * math.pi * t)
    return float(out) if out.ndim == 0 else out


def she_moment_k1(t, phi):
    """Adaptive quadrature of the heat kernel against phi."""
    _check_time(t)
    s = math.sqrt(t)
    f = lambda x: heat_kernel(t, x) * float(phi(x))
    parts = [(-np.inf, -8 * s), (-8 * s, 0.0), (0.0, 8 * s), (8 * s, np.inf)]
    val, err = 0.0, 0.0
    for a, b in parts:
        v, e = integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
        val += v
        err += e
    return OracleResult(val, "quadrature", err)


def local_time_mgf(gamma, t):
    """E exp(gamma L_t) = E exp(gamma |W_t|), W_t ~ N(0, 2t)."""
    _check_time(t)
    return OracleResult(2.0 * math.exp(gamma * gamma * t) * float(ndtr(gamma * math.sqrt(2 * t))), "closed_form")


def _k2_rule(t, phi, gamma_sq, n):
    """Tensor rule over (s, u, x): s = B1+B2 ~ N(0, 2t); x = W/sqrt2, u = x-part plus local time / sqrt2.

    For a standard Brownian motion B with Tanaka local time l, the pair (B_t, l_t)
    has density (l + |x|)/sqrt(2 pi t^3) exp(-(l + |x|)^2 / (2t)).  Substituting
    u = l + |x| leaves the weight u e^{-u^2/2t}/sqrt(2 pi t^3) on {|x| <= u}.
    W = sqrt2 B and its local time is sqrt2 l.
    """
    gh_x, gh_w = roots_hermitenorm(n)
    s = math.sqrt(2 * t) * gh_x
    ws = gh_w / math.sqrt(2 * math.pi)
    c = math.sqrt(2.0) * gamma_sq
    top = max(c * t, 0.0) + 12.0 * math.sqrt(t)
    gl_x, gl_w = np.polynomial.legendre.leggauss(n)
    u = (gl_x + 1) * top / 2
    wu = gl_w * top / 2 * u * np.exp(-u * u / (2 * t)) / math.sqrt(2 * math.pi * t ** 3)
    total = 0.0
    for ui, wui in zip(u, wu):
        # x over [-u, u], split at the kink |x| = 0
        half = (gl_x + 1) * ui / 2
        xs = np.concatenate([-half, half])
        wx = np.concatenate([gl_w, gl_w]) * ui / 2
        lw = math.sqrt(2.0) * (ui - np.abs(xs))
        w = math.sqrt(2.0) * xs
        grid = phi((s[:, None] + w[None, :]) / 2) * phi((s[:, None] - w[None, :]) / 2)
        total += wui * float(ws @ grid @ (wx * np.exp(gamma_sq * lw)))
    return total


def she_moment_k2(t, phi, gamma_sq, tol=1e-9, n0=48, max_n=384):
    """E[exp(gamma_sq L_t) phi(U1_t) phi(U2_t)] for two independent Brownian motions.

    The rule size doubles until two successive values differ by at most ``tol``.
    """
    _check_time(t)
    n = n0
    prev = _k2_rule(t, phi, gamma_sq, n)
    while n < max_n:
        n *= 2
        cur = _k2_rule(t, phi, gamma_sq, n)
        err = abs(cur - prev)
        if err <= tol:
            return OracleResult(float(cur), "quadrature", float(err))
        prev = cur
    raise QuadratureNotConverged(f"refinement to n={n} still changed the value by {err:.3g}")


def _pair_local_times(paths):
    """Tanaka estimator |W_T| - |W_0| - sum sign(W_s) dW_s for every pair; paths (n, steps+1, k)."""
    n, _, k = paths.shape
    out = np.zeros(n)
    for i in range(k):
        for j in range(i + 1, k):
            w = paths[:, :, i] - paths[:, :, j]
            dw = np.diff(w, axis=1)
            out += np.abs(w[:, -1]) - np.abs(w[:, 0]) - np.sum(np.sign(w[:, :-1]) * dw, axis=1)
    return out


def mc_localtime(k, t, gamma, phi, n_paths, mesh, seed=0, block=2000, coarse_too=False):
    """Monte Carlo E[exp(gamma sum_{i<j} L^{ij}_t) prod phi(U^i_t)] on a time mesh.

    The discretised local time is biased by O(sqrt(mesh)); the reported bias is
    the shift seen when the same paths are read at twice the mesh, a
    Richardson-style estimate of the remaining error.
    """
    if k not in (2, 3, 4):
        raise ValueError("k must be 2, 3 or 4")
    if mesh > 1e-3:
        raise ValueError("mesh must be at most 1e-3")
    _check_time(t)
    steps = max(2, int(round(t / mesh)))
    steps += steps % 2
    rng = np.random.default_rng(derive_seed(seed, k))
    fine, coarse = [], []
    done = 0
    while done < n_paths:
        n = min(block, n_paths - done)
        dt = t / steps
        inc = rng.standard_normal((n, steps, k)) * math.sqrt(dt)
        paths = np.concatenate([np.zeros((n, 1, k)), np.cumsum(inc, axis=1)], axis=1)
        ends = [phi(paths[:, -1, i]) for i in range(k)]
        for store, p in ((fine, paths), (coarse, paths[:, ::2, :])):
            v = np.exp(gamma * _pair_local_times(p))
            for e in ends:
                v = v * e
            store.append(v)
        done += n
    fine = np.concatenate(fine)
    coarse = np.concatenate(coarse)
    mean = float(fine.mean())
    se = float(fine.std(ddof=1) / math.sqrt(fine.size))
    # error ~ C sqrt(mesh): fine - limit ~ (coarse - fine) / (sqrt2 - 1)
    bias = abs(float(coarse.mean()) - mean) / (math.sqrt(2.0) - 1.0)
    est = Estimate(mean, se, fine.size, "monte_carlo", bias)
    if coarse_too:
        return est, Estimate(float(coarse.mean()), float(coarse.std(ddof=1) / math.sqrt(coarse.size)), coarse.size,
                             "monte_carlo")
    return est
