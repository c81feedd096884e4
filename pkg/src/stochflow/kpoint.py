"""Exact k-point kernels, tilts, joint cumulants and k-point simulators."""

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .annealed import annealed_law
from .model_zoo import TooManyParticles, as_seed, enumerate_rows, row_index, _site_rows

MAX_K = 6


@dataclass(frozen=True, eq=False)
class JointStepPMF:
    """Joint one-step law of k walkers; ``probs[i1, .., ik]`` is the chance of offsets (o_i1, ..)."""

    k: int
    base_positions: tuple  # integer sites
    offsets: tuple
    scale: float
    probs: np.ndarray

    @property
    def table(self):
        out = {}
        for idx in itertools.product(range(len(self.offsets)), repeat=self.k):
            out[tuple(self.offsets[i] for i in idx)] = float(self.probs[idx])
        return out

    def marginal(self, i):
        axes = tuple(a for a in range(self.k) if a != i)
        return self.probs.sum(axis=axes)

    def moment(self, powers):
        """E[prod_i (scaled offset_i)^powers_i]."""
        x = self.scale * np.asarray(self.offsets, dtype=float)
        out = self.probs
        for i in range(self.k - 1, -1, -1):
            out = out @ x ** powers[i]
        return float(out)


def _clusters(sites, reach):
    """Group walker indices whose rows share environment variables."""
    order = sorted(range(len(sites)), key=lambda i: sites[i])
    groups, cur = [], [order[0]]
    for a, b in zip(order, order[1:]):
        if sites[b] - sites[a] <= reach:
            cur.append(b)
        else:
            groups.append(cur)
            cur = [b]
    groups.append(cur)
    return groups


def _cluster_table(model, sites):
    """Joint law of walkers at ``sites`` (all in one cluster), shape (S,)*len(sites)."""
    distinct = sorted(set(sites))
    where = [distinct.index(s) for s in sites]
    S = model.n_offsets
    total = np.zeros(S ** len(sites))
    chunk = max(256, (1 << 22) // S ** len(sites))
    for w, rows in enumerate_rows(model, distinct, chunk=chunk):
        acc = w[:, None]
        for j in where:
            acc = (acc[:, :, None] * rows[:, j, None, :]).reshape(len(w), -1)
        total += acc.sum(axis=0)
    return total.reshape((S,) * len(sites))


def joint_kernel_pmf(model, x):
    x = tuple(int(v) for v in x)
    k = len(x)
    if k > MAX_K:
        raise TooManyParticles(f"k={k} exceeds the supported {MAX_K} walkers")
    probs = _joint_probs(model, x)
    return JointStepPMF(k, x, model.offsets, model.lattice_scale, probs)


def _joint_probs(model, x):
    cache = model.__dict__.setdefault("_joint_cache", {})
    lo = min(x)
    key = tuple(v - lo for v in x)
    if key in cache:
        return cache[key]
    groups = _clusters(key, model.interaction_range)
    out = np.ones(())
    order = []
    for g in groups:
        out = np.multiply.outer(out, _cluster_table(model, [key[i] for i in g]))
        order.extend(g)
    # axes are in cluster order; move them back to walker order
    probs = np.moveaxis(out, list(range(len(order))), order) if order else out
    probs = np.ascontiguousarray(probs)
    if len(cache) < 4096:
        cache[key] = probs
    return probs


def tilted_kernel_pmf(pk, beta):
    x = pk.scale * np.asarray(pk.offsets, dtype=float)
    grid = np.zeros((len(x),) * pk.k)
    for i in range(pk.k):
        shape = [1] * pk.k
        shape[i] = len(x)
        grid = grid + x.reshape(shape)
    a = beta * grid
    w = pk.probs * np.exp(a - a.max())
    return JointStepPMF(pk.k, pk.base_positions, pk.offsets, pk.scale, w / w.sum())


def log_tilt_normalizer(pk, beta):
    """log E[exp(beta * sum of scaled offsets)] under pk."""
    x = pk.scale * np.asarray(pk.offsets, dtype=float)
    grid = np.zeros((len(x),) * pk.k)
    for i in range(pk.k):
        shape = [1] * pk.k
        shape[i] = len(x)
        grid = grid + x.reshape(shape)
    a = beta * grid
    top = a.max()
    return top + math.log(float((pk.probs * np.exp(a - top)).sum()))


# ---------------------------------------------------------------- cumulants


@lru_cache(maxsize=None)
def set_partitions(m):
    """All set partitions of range(m), as tuples of blocks."""
    if m == 0:
        return ((),)
    out = []
    for part in set_partitions(m - 1):
        for i in range(len(part)):
            out.append(part[:i] + (part[i] + (m - 1,),) + part[i + 1:])
        out.append(part + ((m - 1,),))
    return tuple(out)


def joint_cumulant(model, k, j, x):
    """Joint cumulant of the increments of walkers j_1..j_m (1-based) from sites x."""
    if len(x) != k:
        raise ValueError("x must list one site per walker")
    pk = joint_kernel_pmf(model, x)
    m = len(j)
    cache = {}

    def block_moment(block):
        powers = [0] * k
        for b in block:
            powers[j[b] - 1] += 1
        key = tuple(powers)
        if key not in cache:
            cache[key] = pk.moment(key)
        return cache[key]

    terms = []
    for part in set_partitions(m):
        n = len(part)
        coef = math.factorial(n - 1) * (-1) ** (n - 1)
        terms.append(coef * math.prod(block_moment(b) for b in part))
    return math.fsum(terms)


def is_pp_pattern(j, p):
    """True when the index multiset is {a repeated p times, b repeated p times} with a != b."""
    counts = sorted(np.unique(j, return_counts=True)[1].tolist())
    return counts == [p, p]


def cumulant_audit(model, base_tuples=None, tol=1e-12, m_max=None):
    """Mixed joint cumulants up to order 2p against the vanishing rule."""
    p = model.symmetry_order_p
    m_max = m_max or 2 * p
    if base_tuples is None:
        base_tuples = {2: [(0, 0), (0, 1), (0, 3)], 3: [(0, 0, 0), (0, 0, 1), (0, 1, 2)], 4: [(0, 0, 0, 0), (0, 0, 1, 1), (0, 1, 2, 3)]}
    rows = []
    for m in range(2, m_max + 1):
        for k in range(2, m + 1):
            for x in base_tuples.get(k, []):
                for j in itertools.combinations_with_replacement(range(1, k + 1), m):
                    if len(set(j)) < 2:
                        continue
                    val = joint_cumulant(model, k, j, x)
                    if m < 2 * p:
                        allowed = False
                    else:
                        allowed = is_pp_pattern(j, p)
                    ok = allowed or abs(val) <= tol
                    rows.append({"m": m, "k": k, "indices": list(j), "base": list(x),
                                 "value": val, "may_be_nonzero": allowed, "pass": bool(ok)})
    return rows


def zeta(model, z):
    """(p!)^-2 Cov of the p-th row moments at index separation z, on the scaled lattice."""
    p = model.symmetry_order_p
    pk = joint_kernel_pmf(model, (int(z), 0))
    mp = pk.moment((p, 0))
    return (pk.moment((p, p)) - mp * mp) / math.factorial(p) ** 2


def decay_profile(model, k, separations):
    """Max over exponent tuples of |joint moment - independent moment| per separation."""
    if k > 4:
        raise TooManyParticles("decay_profile supports k <= 4")
    p = model.symmetry_order_p
    mu = annealed_law(model)
    x = mu.positions
    raw = [math.fsum(mu.probs * x ** n) for n in range(4 * p)]
    out = []
    for s in separations:
        pk = joint_kernel_pmf(model, tuple(i * int(s) for i in range(k)))
        gap = 0.0
        for r in itertools.product(range(4 * p), repeat=k):
            if 2 * p <= sum(r) <= 4 * p:
                gap = max(gap, abs(pk.moment(r) - math.prod(raw[i] for i in r)))
        out.append((s, gap))
    return out


# ---------------------------------------------------------------- simulation


@dataclass(frozen=True, eq=False)
class KPointPath:
    k: int
    positions: np.ndarray  # (steps + 1, k) integer sites; scale below
    scale: float
    measure_tag: str

    @property
    def scaled(self):
        return self.scale * self.positions


def _sample_from(rng, probs):
    flat = probs.ravel()
    i = rng.choice(flat.size, p=flat / flat.sum())
    return np.unravel_index(i, probs.shape)


def simulate_kpoint(model, k, x0, steps, measure="annealed", walker_seed=0, beta=0.0, env_seed=0):
    """One k-point trajectory.  ``measure`` is 'annealed', 'tilted' or 'quenched'."""
    if measure == "tilted" and k > MAX_K:
        raise TooManyParticles(f"tilted tables need k <= {MAX_K}")
    rng = np.random.default_rng(walker_seed)
    offs = np.asarray(model.offsets, dtype=np.int64)
    S = len(offs)
    pos = np.empty((steps + 1, k), dtype=np.int64)
    pos[0] = x0
    arrays = model.kernel_arrays()
    for r in range(steps):
        cur = pos[r]
        if measure == "tilted":
            pk = tilted_kernel_pmf(joint_kernel_pmf(model, tuple(cur)), beta)
            idx = _sample_from(rng, pk.probs)
            pos[r + 1] = cur + offs[list(idx)]
            continue
        sites = sorted(set(cur.tolist()))
        if measure == "annealed":
            rows = _fresh_rows(model, sites, rng)
        elif measure == "quenched":
            s = as_seed(env_seed)
            rows = {y: arrays[5][row_index(s, np.int64(r), np.int64(y), *arrays[:5])] for y in sites}
        else:
            raise ValueError(f"unknown measure {measure!r}")
        for i in range(k):
            pos[r + 1, i] = cur[i] + offs[rng.choice(S, p=rows[cur[i]])]
    tag = {"annealed": "annealed", "tilted": f"tilted({beta})", "quenched": f"quenched({env_seed})"}[measure]
    return KPointPath(k, pos, model.lattice_scale, tag)


def _fresh_rows(model, sites, rng):
    """Draw one fresh joint environment slice for the rows at ``sites``."""
    from .model_zoo import window_variables

    variables = window_variables(model, sites)
    draw = {v: rng.choice(len(model.components[v[1]]), p=model.components[v[1]].probs) for v in variables}
    radix = model.radix
    out = {}
    for y in sites:
        idx = sum(draw[(y + o, c)] * radix[w] for w, (o, c) in enumerate(model.window))
        out[y] = model.row_table[idx]
    return out


def additive_functional(path, i, j, F):
    """V(r) = sum_{s<r} F(|R^i_s - R^j_s|) on the scaled lattice, r = 0..steps."""
    if i == j:
        raise ValueError("need two distinct walkers")
    d = np.abs(path.scaled[:, i] - path.scaled[:, j])
    vals = np.array([F(v) for v in d[:-1]], dtype=float)
    return np.concatenate([[0.0], np.cumsum(vals)])


def row_moment_variance(model, p):
    """Var of the p-th unscaled row moment (diagnostic used by validation)."""
    w, rows = _site_rows(model)
    m = rows @ np.asarray(model.offsets, dtype=float) ** p
    mean = w @ m
    return float(w @ (m - mean) ** 2)
