"""The annealed difference chain of two walkers and the ratio coefficients built on it."""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .annealed import LatticePMF, NotNormalized, annealed_law
from .kpoint import joint_kernel_pmf, zeta
from .model_zoo import ModelError, as_seed, row_moment
from .rng import counter_uniform

DIFF_STREAM = 7


class ZeroDenominator(ZeroDivisionError):
    pass


class NotApplicable(ModelError):
    pass


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int
    method: str
    bias: float = 0.0

    def __post_init__(self):
        if self.stderr < 0 or self.n < 1:
            raise ValueError("Estimate needs stderr >= 0 and n >= 1")

    def z_score(self, target):
        if self.stderr == 0:
            return 0.0 if self.value == target else math.copysign(math.inf, self.value - target)
        return (self.value - target) / self.stderr


def merge_estimates(estimates, method=None):
    """Inverse-variance combination; exact (zero-error) inputs are averaged directly."""
    estimates = list(estimates)
    n = sum(e.n for e in estimates)
    method = method or estimates[0].method
    exact = [e for e in estimates if e.stderr == 0]
    if exact:
        return Estimate(math.fsum(e.value for e in exact) / len(exact), 0.0, n, method)
    w = [1.0 / e.stderr ** 2 for e in estimates]
    value = math.fsum(wi * e.value for wi, e in zip(w, estimates)) / math.fsum(w)
    return Estimate(value, 1.0 / math.sqrt(math.fsum(w)), n, method)


@dataclass(frozen=True)
class DiffKernelRow:
    x: float
    index: int
    law: LatticePMF

    def mean(self):
        return self.law.mean()


def diff_kernel(model, x):
    """Exact law of y1 - y2 after one step from (x, 0); x is an integer site index."""
    pk = joint_kernel_pmf(model, (int(x), 0))
    offs = model.offsets
    masses = {}
    for i, a in enumerate(offs):
        for j, b in enumerate(offs):
            y = int(x) + a - b
            masses[y] = masses.get(y, 0.0) + float(pk.probs[i, j])
    return DiffKernelRow(model.lattice_scale * x, int(x), LatticePMF(model.lattice_scale, masses))


def step_span(model):
    return max(model.offsets) - min(model.offsets)


def _far_law(model):
    """Step law of the chain once the walkers no longer share environment variables."""
    mu = annealed_law(model)
    out = {}
    for a, pa in mu.masses.items():
        for b, pb in mu.masses.items():
            out[a - b] = out.get(a - b, 0.0) + pa * pb
    return out


def _chain_tables(model):
    w = step_span(model)
    D = model.interaction_range
    steps = np.arange(-w, w + 1, dtype=np.int64)
    near = np.zeros((2 * D + 1, steps.size))
    for x in range(-D, D + 1):
        row = diff_kernel(model, x).law.masses
        near[x + D] = [row.get(x + a, 0.0) for a in steps]
    far = _far_law(model)
    far_p = np.array([far.get(int(a), 0.0) for a in steps])
    return D, steps, np.cumsum(near, axis=1), np.cumsum(far_p)


@njit(cache=True)
def _run_chain(seed, x0, t0, n, D, steps, near_cum, far_cum, stream):
    path = np.empty(n + 1, dtype=np.int64)
    path[0] = x0
    x = x0
    last = steps.shape[0] - 1
    for t in range(n):
        u = counter_uniform(seed, t0 + t, 0, stream)
        if -D <= x <= D:
            cum = near_cum[x + D]
        else:
            cum = far_cum
        a = 0
        while a < last and u >= cum[a]:
            a += 1
        x += steps[a]
        path[t + 1] = x
    return path


def _chain_segment(model, tables, seed, x0, t0, n):
    D, steps, near_cum, far_cum = tables
    return _run_chain(as_seed(seed), np.int64(x0), np.int64(t0), np.int64(n), np.int64(D),
                      steps, near_cum, far_cum, np.int64(DIFF_STREAM))


def simulate_diff_chain(model, x0, steps, seed):
    """Integer-index path of length steps + 1; multiply by model.lattice_scale for positions."""
    return _chain_segment(model, _chain_tables(model), seed, x0, 0, steps)


class _SiteFunction:
    """Evaluate a function of scaled position on integer sites, caching per site."""

    def __init__(self, f, scale):
        self.f, self.scale, self.cache = f, scale, {}

    def totals(self, sites, counts):
        missing = [s for s in sites.tolist() if s not in self.cache]
        if missing:
            pos = self.scale * np.asarray(missing, dtype=float)
            try:
                vals = np.broadcast_to(np.asarray(self.f(pos), dtype=float), pos.shape)
            except Exception:
                vals = np.array([float(self.f(p)) for p in pos])
            self.cache.update(zip(missing, vals.tolist()))
        vals = np.array([self.cache[s] for s in sites.tolist()])
        return math.fsum(vals * counts)


def _batch_sums(model, tables, F, G, steps, seed, x0, n_batches, burn_in):
    burn = int(burn_in * steps)
    run = steps - burn
    if run < n_batches:
        raise ValueError("too few steps for the requested batches")
    x = _chain_segment(model, tables, seed, x0, 0, burn)[-1] if burn else x0
    t = burn
    edges = np.linspace(0, run, n_batches + 1).astype(np.int64)
    fb, gb = np.empty(n_batches), np.empty(n_batches)
    for b in range(n_batches):
        n = int(edges[b + 1] - edges[b])
        path = _chain_segment(model, tables, seed, x, t, n)
        sites, counts = np.unique(path[1:], return_counts=True)
        fb[b], gb[b] = F.totals(sites, counts), G.totals(sites, counts)
        x, t = path[-1], t + n
    return fb, gb


def _ratio(fb, gb):
    """Ratio of totals with a delta-method error treating the blocks as replicates."""
    num, den = math.fsum(fb), math.fsum(gb)
    if den == 0:
        raise ZeroDenominator("the denominator function was never charged along the path")
    ratio = num / den
    n = len(fb)
    resid = np.asarray(fb) - ratio * np.asarray(gb)
    se = math.sqrt(math.fsum(resid ** 2) / (n * (n - 1))) / abs(den / n)
    return ratio, se


def estimate_pi_ratio(model, f, g, steps, seed, x0=0, n_batches=32, burn_in=0.01):
    """Ratio sum f(X_k) / sum g(X_k) along one trajectory, with batch-means error."""
    F = _SiteFunction(f, model.lattice_scale)
    G = _SiteFunction(g, model.lattice_scale)
    fb, gb = _batch_sums(model, _chain_tables(model), F, G, steps, seed, x0, n_batches, burn_in)
    ratio, se = _ratio(fb, gb)
    return Estimate(ratio, se, steps, "ratio-batch-means")


def estimate_pi_ratio_pooled(model, f, g, steps, seeds, x0=0, n_batches=32, burn_in=0.01):
    """Pool numerator and denominator totals over independent trajectories.

    Each seed runs ``steps`` steps.  With several seeds the error comes from the
    spread of per-trajectory totals; with one seed it falls back to batch means.
    """
    seeds = list(seeds)
    if len(seeds) == 1:
        return estimate_pi_ratio(model, f, g, steps, seeds[0], x0, n_batches, burn_in)
    tables = _chain_tables(model)
    F = _SiteFunction(f, model.lattice_scale)
    G = _SiteFunction(g, model.lattice_scale)
    fs, gs = [], []
    for s in sorted(seeds):
        fb, gb = _batch_sums(model, tables, F, G, steps, s, x0, 1, burn_in)
        fs.append(fb[0])
        gs.append(gb[0])
    ratio, se = _ratio(fs, gs)
    return Estimate(ratio, se, steps * len(seeds), "ratio-pooled-trajectories")


def analytic_pi_origin(model, tol=1e-12):
    """Origin mass 1/c for product models with E[v(i)v(j)] = c q(i) q(j) for all i != j."""
    if model.family != "product_iid":
        raise NotApplicable(f"{model.family} models have no pair-correlation constant")
    q = {o: row_moment(model, [o]) for o in model.offsets}
    ratios = []
    for i in model.offsets:
        for j in model.offsets:
            if i < j and q[i] * q[j] > 0:
                ratios.append(row_moment(model, [i, j]) / (q[i] * q[j]))
    if not ratios:
        raise NotApplicable("no pair of offsets carries annealed mass")
    dev = max(ratios) - min(ratios)
    if dev > tol:
        raise NotApplicable(f"pair correlation is not a constant multiple (max deviation {dev:.3g})")
    return 1.0 / ratios[0]


def denominator_integrand(model, x):
    """E|X_1| - |x| for the chain started at index x, on the scaled lattice."""
    row = diff_kernel(model, x).law
    return model.lattice_scale * math.fsum(abs(a) * m for a, m in row.masses.items()) - model.lattice_scale * abs(x)


def denominator_table(model):
    """Index -> h on the only sites where it can be nonzero."""
    w = step_span(model)
    return {x: denominator_integrand(model, x) for x in range(-w, w + 1)}


def site_function(table, scale):
    """Turn an index -> value table into a function of scaled position (zero elsewhere)."""

    def f(pos):
        idx = np.rint(np.asarray(pos, dtype=float) / scale).astype(np.int64)
        return np.array([table.get(int(i), 0.0) for i in np.atleast_1d(idx)]).reshape(np.shape(idx))

    return f


def zeta_table(model):
    D = model.interaction_range
    return {z: zeta(model, z) for z in range(-D, D + 1)}


def gamma_f(model, f, steps, seed, **kw):
    h = site_function(denominator_table(model), model.lattice_scale)
    return estimate_pi_ratio(model, f, h, steps, seed, **kw)


def _require_normalized(model):
    var = annealed_law(model).variance()
    if abs(var - 1.0) > 1e-10:
        raise NotNormalized(f"step variance {var:.12g} is not 1; call normalize_lattice first")


def gamma_ext_sq(model, steps, seed, **kw):
    _require_normalized(model)
    z = site_function(zeta_table(model), model.lattice_scale)
    est = gamma_f(model, z, steps, seed, **kw)
    return Estimate(est.value, est.stderr, est.n, "gamma-zeta-ratio")


# ---------------------------------------------------------------- exact route


def invariant_measure(model, L=None):
    """Invariant measure on [-L, L], pinned to 1 outside the box.

    Far from the origin the chain is a symmetric random walk, so the invariant
    measure is flat there; the remaining finite linear system is solved exactly.
    """
    w = step_span(model)
    D = model.interaction_range
    L = L or (D + 40 * w)
    size = 2 * L + 1
    P = np.zeros((size, size))
    inflow = np.zeros(size)
    far = _far_law(model)
    for x in range(-L - w, L + w + 1):
        if abs(x) <= D:
            row = diff_kernel(model, x).law.masses
        else:
            row = {x + a: m for a, m in far.items()}
        for y, m in row.items():
            if abs(y) > L:
                continue
            if abs(x) <= L:
                P[x + L, y + L] += m
            else:
                inflow[y + L] += m
    pi = np.linalg.solve(np.eye(size) - P.T, inflow)
    return {x: float(pi[x + L]) for x in range(-L, L + 1)}


def gamma_exact(model, f_table):
    """Sum f pi / sum h pi for an index-supported f, using the exact invariant measure."""
    pi = invariant_measure(model)
    h = denominator_table(model)
    num = math.fsum(v * pi[x] for x, v in f_table.items())
    den = math.fsum(v * pi[x] for x, v in h.items())
    if den == 0:
        raise ZeroDenominator("denominator integrand vanishes against the invariant measure")
    return num / den


def gamma_ext_sq_exact(model):
    _require_normalized(model)
    return gamma_exact(model, zeta_table(model))
