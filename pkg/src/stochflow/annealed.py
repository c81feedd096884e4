"""Exact computations on the annealed one-step law."""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model_zoo import ModelError, _site_rows


class NotNormalized(ModelError):
    pass


@dataclass(frozen=True)
class LatticePMF:
    """Finite measure on scale * Z, stored as integer index -> mass."""

    scale: float
    masses: dict = field(hash=False)

    @property
    def support(self):
        return np.array(sorted(self.masses), dtype=np.int64)

    @property
    def positions(self):
        return self.scale * self.support.astype(float)

    @property
    def probs(self):
        return np.array([self.masses[i] for i in sorted(self.masses)])

    def total(self):
        return math.fsum(self.masses.values())

    def mean(self):
        return math.fsum(self.scale * i * m for i, m in self.masses.items())

    def variance(self):
        mean = self.mean()
        return math.fsum(m * (self.scale * i - mean) ** 2 for i, m in self.masses.items())

    def convolve(self, other):
        out = {}
        for i, a in self.masses.items():
            for j, b in other.masses.items():
                out[i + j] = out.get(i + j, 0.0) + a * b
        return LatticePMF(self.scale, out)


def annealed_law(model):
    w, rows = _site_rows(model)
    mu = w @ rows
    return LatticePMF(model.lattice_scale, {o: float(m) for o, m in zip(model.offsets, mu)})


def _log_mgf(mu, lam):
    x = mu.positions
    a = lam * x
    top = a.max()
    return top + math.log(math.fsum(mu.probs * np.exp(a - top)))


def mgf(mu, lam):
    return math.exp(_log_mgf(mu, lam))


def log_mgf(mu, lam):
    return _log_mgf(mu, lam)


def moments_and_cumulants(mu, k_max):
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    x, p = mu.positions, mu.probs
    m = [1.0] + [math.fsum(p * x ** n) for n in range(1, k_max + 1)]
    kappa = [0.0] * (k_max + 1)
    for n in range(1, k_max + 1):
        kappa[n] = m[n] - math.fsum(math.comb(n - 1, j - 1) * kappa[j] * m[n - j] for j in range(1, n))
    return m[1:], kappa[1:]


def symmetry_order(model):
    """Smallest k whose k-th row moment is random; cached on the model."""
    if model.degenerate:
        from .model_zoo import DegenerateModel

        raise DegenerateModel("deterministic rows have no symmetry order")
    return model.symmetry_order_p


def crossover_exponent(p):
    if p < 1:
        raise ValueError("p must be positive")
    return Fraction(4 * p - 1, 4 * p)


def tilt_parameter(N, p):
    return float(N) ** (-1.0 / (4 * p))


def drift_function(mu, beta):
    """Mean of the exponentially tilted step law, i.e. (log M)'(beta)."""
    x = mu.positions
    a = beta * x
    e = mu.probs * np.exp(a - a.max())
    return math.fsum(x * e) / math.fsum(e)


def drift_dN(mu, N, p):
    return N * drift_function(mu, tilt_parameter(N, p))


@dataclass(frozen=True)
class DriftTable:
    N: int
    p: int
    d_N: float
    d_tilde_N: float
    expansion_terms: tuple  # ((Fraction exponent, coefficient), ...)

    @property
    def gap_over_sqrtN(self):
        return (self.d_N - self.d_tilde_N) / math.sqrt(self.N)


def check_normalized(mu, tol=1e-10):
    if abs(mu.variance() - 1.0) > tol:
        raise NotNormalized(f"step variance {mu.variance():.12g} is not 1")


def expansion_terms(mu, p):
    """(exponent, coefficient) pairs kept by the drift expansion, exponents decreasing."""
    check_normalized(mu)
    _, kappa = moments_and_cumulants(mu, 2 * p + 1)
    terms = []
    for k in range(0, 2 * p + 1):
        coef = kappa[k] / math.factorial(k)
        if k == 1:
            coef = 1.0  # the variance is 1 by normalization
        terms.append((Fraction(4 * p - k, 4 * p), coef))
    return tuple(terms)


def drift_expansion(mu, N, p):
    terms = expansion_terms(mu, p)
    approx = math.fsum(c * float(N) ** float(e) for e, c in terms)
    return DriftTable(N=N, p=p, d_N=drift_dN(mu, N, p), d_tilde_N=approx, expansion_terms=terms)


def renorm_D(mu, N, p, dN, t, x):
    if t < 0:
        raise ValueError("t must be nonnegative")
    beta = tilt_parameter(N, p)
    expo = float(N) ** ((2 * p - 1) / (4 * p)) * x + (beta * dN - N * _log_mgf(mu, beta)) * t
    return math.exp(expo)
