"""Tilted quenched density, its rescaled field pairings, martingale and QV fields.

The density Z(r, y) is kept on a dense index array (site y <-> array slot
``y + base``) with an active window that pruning keeps narrow.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .annealed import annealed_law, drift_dN, log_mgf, tilt_parameter
from .diff_chain import Estimate
from .kpoint import joint_kernel_pmf, log_tilt_normalizer, tilted_kernel_pmf
from .model_zoo import ModelError, as_seed, row_index
from .parallel import map_chunks
from .rng import counter_uniform, derive_seed

SQRT_PI = math.sqrt(math.pi)
BLOWUP = math.exp(20.0)
TILT_STREAM = 11


class MassBlowup(ArithmeticError):
    pass


class EstimatorDisagreement(RuntimeError):
    pass


# ---------------------------------------------------------------- test functions

KIND_ONE, KIND_GAUSS, KIND_BUMP = 0, 1, 2


@dataclass(frozen=True)
class TestFunction:
    """phi(x)^power for phi a Gaussian mollifier, a C^2 bump or the constant 1."""

    __test__ = False  # not a pytest class

    kind: int
    a: float = 0.0
    width: float = 1.0
    power: int = 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.a) / self.width
        if self.kind == KIND_ONE:
            v = np.ones_like(x)
        elif self.kind == KIND_GAUSS:
            v = np.exp(-z * z) / (self.width * SQRT_PI)
        else:
            v = np.where(np.abs(z) < 1, (1 - z * z) ** 3, 0.0)
        return v ** self.power

    def squared(self):
        return TestFunction(self.kind, self.a, self.width, 2 * self.power)

    @property
    def label(self):
        name = {KIND_ONE: "one", KIND_GAUSS: "gauss", KIND_BUMP: "bump"}[self.kind]
        base = name if self.kind == KIND_ONE else f"{name}:{self.a:g},{self.width:g}"
        return base if self.power == 1 else f"{base}^{self.power}"


def gauss_bump(a=0.0, eps=1.0):
    """eps^-1 pi^-1/2 exp(-((x-a)/eps)^2), unit mass."""
    return TestFunction(KIND_GAUSS, float(a), float(eps))


def compact_bump(a=0.0, w=1.0):
    """(1 - ((x-a)/w)^2)^3 on |x-a| < w, zero outside; twice continuously differentiable."""
    return TestFunction(KIND_BUMP, float(a), float(w))


def constant_one():
    return TestFunction(KIND_ONE)


def parse_phi(spec):
    """'gauss:a,eps' | 'bump:a,w' | 'one'."""
    if spec == "one":
        return constant_one()
    try:
        kind, rest = spec.split(":")
        a, w = (float(v) for v in rest.split(","))
    except ValueError:
        raise ValueError(f"bad test-function spec {spec!r}; use gauss:a,eps or bump:a,w") from None
    if kind == "gauss":
        return gauss_bump(a, w)
    if kind == "bump":
        return compact_bump(a, w)
    raise ValueError(f"unknown test function kind {kind!r}")


@njit(cache=True)
def _phi(kind, a, w, pw, x):
    if kind == 0:
        return 1.0
    z = (x - a) / w
    if kind == 1:
        v = math.exp(-z * z) / (w * 1.7724538509055159)
    elif abs(z) < 1.0:
        v = (1.0 - z * z) ** 3
    else:
        return 0.0
    return v ** pw


def _phi_arrays(phis):
    return (np.array([p.kind for p in phis], dtype=np.int64), np.array([p.a for p in phis]),
            np.array([p.width for p in phis]), np.array([p.power for p in phis], dtype=np.int64))


# ---------------------------------------------------------------- types


@dataclass(frozen=True, eq=False)
class SparseDensity:
    r: int
    masses: dict  # integer site -> mass
    truncated_mass: float
    seed: int
    scale: float = 1.0

    def total(self):
        return math.fsum(self.masses.values())


@dataclass(frozen=True, eq=False)
class FieldSeries:
    times: np.ndarray
    values: np.ndarray
    label: str = ""


@dataclass(frozen=True)
class FieldContext:
    N: int
    beta: float
    log_m: float
    d_N: float
    scale: float

    @property
    def drift_step(self):
        return self.d_N / self.N


def field_context(model, N):
    mu = annealed_law(model)
    p = model.symmetry_order_p
    beta = tilt_parameter(N, p)
    return FieldContext(N, beta, log_mgf(mu, beta), drift_dN(mu, N, p), model.lattice_scale)


def pair_covariance(model):
    """rho[d + D, s, s'] = P(offsets s, s' from sites d apart) - mu(s) mu(s')."""
    D = model.interaction_range
    mu = annealed_law(model).probs
    rho = np.zeros((2 * D + 1, model.n_offsets, model.n_offsets))
    for d in range(-D, D + 1):
        rho[d + D] = joint_kernel_pmf(model, (d, 0)).probs - np.outer(mu, mu)
    return rho


# ---------------------------------------------------------------- compiled core


@njit(cache=True)
def _evolve_env(seed, n_steps, offs, scale, beta, log_m, drift_step, inv_sqrt_n,
                win_off, win_comp, cum, n_atoms, radix, table, mu,
                phi_kind, phi_a, phi_w, phi_pow,
                rec, want_mart, want_qv, rho, want_q, fvals, eps, snap_at):
    S = offs.shape[0]
    F = phi_kind.shape[0]
    omin = offs.min()
    omax = offs.max()
    L = n_steps * (omax - omin) + 1
    base = -n_steps * omin
    cur = np.zeros(L)
    nxt = np.zeros(L)
    cur[base] = 1.0
    lo = base
    hi = base
    dlo = base
    dhi = base
    tilt = np.exp(beta * scale * offs.astype(np.float64) - log_m)
    H = np.full((n_steps + 1, F), np.nan)
    M = np.zeros((n_steps + 1, F))
    QV = np.zeros((n_steps + 1, F))
    Q = np.zeros((n_steps + 1, F))
    mass = np.zeros(n_steps + 1)
    trunc = np.zeros(n_steps + 1)
    mass[0] = 1.0
    n_snap = snap_at.shape[0]
    snaps = np.zeros((n_snap, L))
    si = 0
    if si < n_snap and snap_at[si] == 0:
        snaps[si, :] = cur
        si += 1
    Dq = (rho.shape[0] - 1) // 2
    Df = (fvals.shape[0] - 1) // 2
    work = np.zeros((L if want_qv else 1, S))
    dM = np.zeros(F)
    if rec[0]:
        for f in range(F):
            H[0, f] = _phi(phi_kind[f], phi_a[f], phi_w[f], phi_pow[f], 0.0)
    truncated = 0.0
    status = 0
    for r in range(n_steps):
        shift = (r + 1) * drift_step
        if want_qv:
            for f in range(F):
                for i in range(lo, hi + 1):
                    if cur[i] == 0.0:
                        continue
                    y = i - base
                    for s in range(S):
                        x = inv_sqrt_n * (scale * (y + offs[s]) - shift)
                        work[i, s] = _phi(phi_kind[f], phi_a[f], phi_w[f], phi_pow[f], x) * tilt[s]
                acc = 0.0
                for i in range(lo, hi + 1):
                    zi = cur[i]
                    if zi == 0.0:
                        continue
                    for dd in range(-Dq, Dq + 1):
                        j = i - dd
                        if j < lo or j > hi or cur[j] == 0.0:
                            continue
                        sacc = 0.0
                        for s in range(S):
                            for s2 in range(S):
                                sacc += rho[dd + Dq, s, s2] * work[i, s] * work[j, s2]
                        acc += zi * cur[j] * sacc
                QV[r + 1, f] = QV[r, f] + acc
        for i in range(dlo, dhi + 1):
            nxt[i] = 0.0
        nlo = lo + omin
        nhi = hi + omax
        for i in range(nlo, nhi + 1):
            nxt[i] = 0.0
        for f in range(F):
            dM[f] = 0.0
        for i in range(lo, hi + 1):
            z = cur[i]
            if z == 0.0:
                continue
            y = i - base
            k = row_index(seed, r, y, win_off, win_comp, cum, n_atoms, radix)
            for s in range(S):
                nxt[i + offs[s]] += z * table[k, s] * tilt[s]
            if want_mart:
                for f in range(F):
                    acc = 0.0
                    for s in range(S):
                        x = inv_sqrt_n * (scale * (y + offs[s]) - shift)
                        acc += _phi(phi_kind[f], phi_a[f], phi_w[f], phi_pow[f], x) * tilt[s] * (table[k, s] - mu[s])
                    dM[f] += z * acc
        tot = 0.0
        for i in range(nlo, nhi + 1):
            tot += nxt[i]
        thr = eps * tot
        for i in range(nlo, nhi + 1):
            v = nxt[i]
            if v > 0.0 and v < thr:
                truncated += v
                nxt[i] = 0.0
        while nlo < nhi and nxt[nlo] == 0.0:
            nlo += 1
        while nhi > nlo and nxt[nhi] == 0.0:
            nhi -= 1
        dlo = lo
        dhi = hi
        tmp = cur
        cur = nxt
        nxt = tmp
        lo = nlo
        hi = nhi
        tot = 0.0
        for i in range(lo, hi + 1):
            tot += cur[i]
        mass[r + 1] = tot
        trunc[r + 1] = truncated
        if tot > 4.851651954097903e08:  # e^20
            status = 1
            break
        for f in range(F):
            M[r + 1, f] = M[r, f] + dM[f]
        t_shift = (r + 1) * drift_step
        if rec[r + 1]:
            for f in range(F):
                acc = 0.0
                for i in range(lo, hi + 1):
                    if cur[i] != 0.0:
                        x = inv_sqrt_n * (scale * (i - base) - t_shift)
                        acc += _phi(phi_kind[f], phi_a[f], phi_w[f], phi_pow[f], x) * cur[i]
                H[r + 1, f] = acc
        if want_q:
            for f in range(F):
                acc = 0.0
                for i in range(lo, hi + 1):
                    zi = cur[i]
                    if zi == 0.0:
                        continue
                    inner = 0.0
                    for dd in range(-Df, Df + 1):
                        j = i - dd
                        if j >= lo and j <= hi:
                            inner += fvals[dd + Df] * cur[j]
                    if inner != 0.0:
                        x = inv_sqrt_n * (scale * (i - base) - t_shift)
                        acc += _phi(phi_kind[f], phi_a[f], phi_w[f], phi_pow[f], x) * zi * inner
                Q[r + 1, f] = Q[r, f] + inv_sqrt_n * acc
        if si < n_snap and snap_at[si] == r + 1:
            snaps[si, :] = cur
            si += 1
    return H, M, QV, Q, mass, trunc, snaps, base, status


class _Run:
    """Argument bundle for the compiled evolution of one model at one N."""

    def __init__(self, model, N, T, phis=(), truncation_eps=1e-14):
        steps = N * T
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("N*T must be an integer")
        if not 0 <= truncation_eps <= 1e-8:
            raise ValueError("truncation_eps must lie in [0, 1e-8]")
        self.model, self.N, self.steps = model, N, int(round(steps))
        self.ctx = field_context(model, N)
        self.phis = tuple(phis) or (constant_one(),)
        self.eps = float(truncation_eps)
        win_off, win_comp, cum, n_atoms, radix, table = model.kernel_arrays()
        self.kernel = (win_off, win_comp, cum, n_atoms, radix, table)
        self.mu = annealed_law(model).probs
        self.offs = np.asarray(model.offsets, dtype=np.int64)

    def __call__(self, seed, rec=None, mart=False, qv=False, q_table=None, snap_at=()):
        c = self.ctx
        rec_mask = np.zeros(self.steps + 1, dtype=np.bool_)
        if rec is None:
            rec_mask[:] = True
        else:
            rec_mask[list(rec)] = True
        rho = pair_covariance(self.model) if qv else np.zeros((1, self.model.n_offsets, self.model.n_offsets))
        fvals = np.zeros(1)
        if q_table is not None:
            Df = max(abs(d) for d in q_table) if q_table else 0
            fvals = np.array([q_table.get(d, 0.0) for d in range(-Df, Df + 1)])
        out = _evolve_env(
            as_seed(seed), np.int64(self.steps), self.offs, float(c.scale), float(c.beta), float(c.log_m),
            float(c.drift_step), 1.0 / math.sqrt(self.N), *self.kernel, self.mu, *_phi_arrays(self.phis),
            rec_mask, bool(mart), bool(qv), rho, q_table is not None, fvals, self.eps,
            np.asarray(sorted(snap_at), dtype=np.int64),
        )
        if out[-1] != 0:
            raise MassBlowup("total tilted mass exceeded e^20; check the tilt normalization")
        return out

    @property
    def times(self):
        return np.arange(self.steps + 1) / self.N


# ---------------------------------------------------------------- public operations


def evolve_tilted_density(model, N, T, seed, truncation_eps=1e-14, times=None):
    """Z_N(r, .) for r = 0..N*T (or only the step indices in ``times``)."""
    run = _Run(model, N, T, truncation_eps=truncation_eps)
    steps = range(run.steps + 1) if times is None else sorted(times)
    _, _, _, _, _, trunc, snaps, base, _ = run(seed, rec=[], snap_at=steps)
    out = []
    for r, snap in zip(steps, snaps):
        nz = np.nonzero(snap)[0]
        out.append(SparseDensity(r, {int(i - base): float(snap[i]) for i in nz}, float(trunc[r]), seed,
                                 model.lattice_scale))
    return out


def field_pairing(Z, model, N, phi):
    """sum_y phi(N^-1/2 (c y - d_N r / N)) Z(y)."""
    ctx = field_context(model, N)
    if not Z.masses:
        return 0.0
    y = np.array(list(Z.masses), dtype=float)
    z = np.array(list(Z.masses.values()))
    x = (ctx.scale * y - Z.r * ctx.drift_step) / math.sqrt(N)
    return math.fsum(phi(x) * z)


def martingale_increments(model, N, T, seed, phi, truncation_eps=1e-14):
    run = _Run(model, N, T, (phi,), truncation_eps)
    _, M, *_ = run(seed, rec=[], mart=True)
    return FieldSeries(run.times, M[:, 0], "martingale")


def predictable_qv(model, N, T, seed, phi, truncation_eps=1e-14):
    run = _Run(model, N, T, (phi,), truncation_eps)
    _, _, QV, *_ = run(seed, rec=[], qv=True)
    return FieldSeries(run.times, QV[:, 0], "predictable-qv")


def band_table(model, f, reach=64, floor=1e-16):
    """Index-difference table of f (a function of scaled separation) where |f| > floor."""
    if isinstance(f, dict):
        return {int(d): float(v) for d, v in f.items() if abs(v) > floor}
    d = np.arange(-reach, reach + 1)
    vals = np.asarray(f(model.lattice_scale * d.astype(float)), dtype=float) * np.ones(d.size)
    return {int(a): float(v) for a, v in zip(d, vals) if abs(v) > floor}


def qv_field(model, N, T, seed, f, phi, truncation_eps=1e-14):
    run = _Run(model, N, T, (phi,), truncation_eps)
    _, _, _, Q, *_ = run(seed, rec=[], q_table=band_table(model, f))
    return FieldSeries(run.times, Q[:, 0], "qv-field")


def field_series(model, N, T, seed, phi, truncation_eps=1e-14, f=None):
    """H, M, <M>, Q^f and total mass for one environment in a single pass."""
    run = _Run(model, N, T, (phi,), truncation_eps)
    q = band_table(model, f) if f is not None else None
    H, M, QV, Q, mass, trunc, *_ = run(seed, mart=True, qv=True, q_table=q)
    return {"times": run.times, "H": H[:, 0], "M": M[:, 0], "QV": QV[:, 0], "Q": Q[:, 0],
            "mass": mass, "truncated": trunc}


# ---------------------------------------------------------------- environment replicas


def env_seed(seed, i):
    return derive_seed(seed, i)


def _env_block(model, N, T, phis, eps, seed, mart, qv, q_table, start, stop):
    """Per-environment values at the final time: columns H_f..., M_f..., QV_f..., Q_f..., mass, truncated."""
    run = _Run(model, N, T, phis, eps)
    last = run.steps
    rows = []
    for i in range(start, stop):
        H, M, QV, Q, mass, trunc, *_ = run(env_seed(seed, i), rec=[last], mart=mart, qv=qv, q_table=q_table)
        rows.append(np.concatenate([H[last], M[last], QV[last], Q[last], [mass[last], trunc[last]]]))
    return np.array(rows).reshape(stop - start, -1)


def environment_table(model, N, T, phis, n_env, seed, workers=1, mart=False, qv=False, q_table=None,
                      truncation_eps=1e-14, chunk=64):
    """Final-time field values for environments 0..n_env-1 as named columns."""
    phis = tuple(phis)
    arr = map_chunks(_env_block, (model, N, T, phis, truncation_eps, seed, mart, qv, q_table), n_env,
                     workers=workers, chunk=chunk)
    F = len(phis)
    return {"H": arr[:, :F], "M": arr[:, F:2 * F], "QV": arr[:, 2 * F:3 * F], "Q": arr[:, 3 * F:4 * F],
            "mass": arr[:, 4 * F], "truncated": arr[:, 4 * F + 1]}


def mean_estimate(samples, method):
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    mean = math.fsum(samples) / n
    var = math.fsum((samples - mean) ** 2) / (n - 1) if n > 1 else 0.0
    return Estimate(mean, math.sqrt(var / n), n, method)


# ---------------------------------------------------------------- tilted k-point estimator


def exact_tilted_walk(model, N, T):
    """Law of the exponentially tilted annealed walk after N*T steps (index -> probability)."""
    ctx = field_context(model, N)
    steps = int(round(N * T))
    x = model.lattice_scale * np.asarray(model.offsets, dtype=float)
    mu = annealed_law(model).probs
    q = mu * np.exp(ctx.beta * x - ctx.log_m)
    q = q / q.sum()
    offs = np.asarray(model.offsets)
    # pad the kernel onto a contiguous index range
    kern = np.zeros(offs.max() - offs.min() + 1)
    kern[offs - offs.min()] = q
    dens = np.array([1.0])
    for _ in range(steps):
        dens = np.convolve(dens, kern)
    sites = np.arange(dens.size) + steps * offs.min()
    return sites, dens


def tilted_walk_pairing(model, N, T, phi):
    """Deterministic first moment: phi paired with the exact tilted annealed density."""
    ctx = field_context(model, N)
    sites, dens = exact_tilted_walk(model, N, T)
    x = (ctx.scale * sites - N * T * ctx.drift_step) / math.sqrt(N)
    return math.fsum(phi(x) * dens)


def _cluster_tables(model, k, beta, log_m):
    """Tilted cumulative tables and log-weight increments for every cluster shape.

    A cluster of m walkers is described by the m-1 gaps between consecutive
    sorted positions, each in [0, D]; its id is the base-(D+1) number of gaps.
    """
    D = model.interaction_range
    S = model.n_offsets
    n_cfg = (D + 1) ** (k - 1)
    cum = np.ones((k + 1, n_cfg, S ** k))
    logw = np.zeros((k + 1, n_cfg))
    for m in range(1, k + 1):
        for cid in range((D + 1) ** (m - 1)):
            gaps, rem = [], cid
            for _ in range(m - 1):
                gaps.append(rem % (D + 1))
                rem //= D + 1
            sites = np.concatenate([[0], np.cumsum(gaps)]).astype(int)
            pk = joint_kernel_pmf(model, tuple(sites))
            q = tilted_kernel_pmf(pk, beta).probs.ravel()
            cum[m, cid, : q.size] = np.cumsum(q)
            logw[m, cid] = log_tilt_normalizer(pk, beta) - m * log_m
    return cum, logw


@njit(cache=True)
def _tilted_paths(seed, start, stop, k, n_steps, D, S, offs, cum, logw, scale, inv_sqrt_n, final_shift,
                  phi_kind, phi_a, phi_w, phi_pow):
    out = np.empty(stop - start)
    pos = np.empty(k, dtype=np.int64)
    order = np.empty(k, dtype=np.int64)
    for p in range(start, stop):
        for i in range(k):
            pos[i] = 0
        lw = 0.0
        for t in range(n_steps):
            for i in range(k):
                order[i] = i
            for i in range(1, k):  # insertion sort by position
                j = i
                while j > 0 and pos[order[j - 1]] > pos[order[j]]:
                    tmp = order[j - 1]
                    order[j - 1] = order[j]
                    order[j] = tmp
                    j -= 1
            a = 0
            while a < k:
                b = a
                cid = 0
                mult = 1
                while b + 1 < k and pos[order[b + 1]] - pos[order[b]] <= D:
                    cid += (pos[order[b + 1]] - pos[order[b]]) * mult
                    mult *= D + 1
                    b += 1
                m = b - a + 1
                u = counter_uniform(seed, t, p, order[a])
                row = cum[m, cid]
                idx = 0
                last = S ** m - 1
                while idx < last and u >= row[idx]:
                    idx += 1
                lw += logw[m, cid]
                for q in range(b, a - 1, -1):  # last walker is the fastest digit
                    pos[order[q]] += offs[idx % S]
                    idx //= S
                a = b + 1
        w = math.exp(lw)
        for i in range(k):
            x = inv_sqrt_n * (scale * pos[i] - final_shift)
            w *= _phi(phi_kind[0], phi_a[0], phi_w[0], phi_pow[0], x)
        out[p - start] = w
    return out


def _tilted_block(model, N, T, k, phi, seed, start, stop):
    ctx = field_context(model, N)
    cum, logw = _cluster_tables(model, k, ctx.beta, ctx.log_m)
    steps = int(round(N * T))
    return _tilted_paths(as_seed(derive_seed(seed, TILT_STREAM)), start, stop, k, steps, model.interaction_range,
                         model.n_offsets, np.asarray(model.offsets, dtype=np.int64), cum, logw, ctx.scale,
                         1.0 / math.sqrt(N), steps * ctx.drift_step, *_phi_arrays((phi,)))


def tilted_samples(model, N, T, k, phi, n_paths, seed, workers=1, chunk=256):
    return map_chunks(_tilted_block, (model, N, T, k, phi, seed), n_paths, workers=workers, chunk=chunk)


@dataclass(frozen=True)
class MomentResult:
    N: int
    k: int
    direct: Estimate
    tilted: Estimate

    @property
    def pooled_se(self):
        return math.hypot(self.direct.stderr, self.tilted.stderr)

    @property
    def disagreement(self):
        gap = abs(self.direct.value - self.tilted.value)
        return gap > 4 * self.pooled_se if self.pooled_se > 0 else gap > 1e-12 * max(1.0, abs(self.tilted.value))


def moment_estimate(model, N, t, phi, k, n_env, seed, workers=1, n_paths=None, truncation_eps=1e-14,
                    direct_samples=None):
    """Two independent estimates of E[H^N(t, phi)^k]: environment average and tilted k-point chain."""
    if not 1 <= k <= 4:
        raise ModelError("moment_estimate supports 1 <= k <= 4")
    if direct_samples is None:
        direct_samples = environment_table(model, N, t, (phi,), n_env, seed, workers, truncation_eps=truncation_eps)["H"][:, 0]
    direct = mean_estimate(np.asarray(direct_samples) ** k, "direct")
    if k == 1:
        tilted = Estimate(tilted_walk_pairing(model, N, t, phi), 0.0, 1, "tilted-exact")
    else:
        tilted = mean_estimate(tilted_samples(model, N, t, k, phi, n_paths or n_env, seed, workers), "tilted")
    return MomentResult(N, k, direct, tilted)
