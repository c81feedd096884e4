"""Stochastic-flow model families on a scaled integer lattice.

Every model is a *window model*: each lattice site carries a few IID scalar
variables with finite atomic laws, and the kernel row at site x is a fixed
function of the variables sitting at ``x + window offsets``.  The function is
tabulated once (``row_table``), so exact moments are finite sums and sampling
is a table lookup.

* product_iid: one variable per site (the atom index); window = {0}.
* landscape:   one weight per site; row(o) = b(o) e^{w_{x+o}} / sum_o' b(o') e^{w_{x+o'}}.
* two_step:    two nearest-neighbour layers composed onto 2Z.
"""

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.special import roots_jacobi

from .rng import as_seed, counter_uniform


class ModelError(ValueError):
    pass


class DegenerateModel(ModelError):
    pass


class PeriodicSupport(ModelError):
    pass


class UnsupportedOffset(ModelError):
    pass


class ZeroVariance(ModelError):
    pass


class TooManyParticles(ModelError):
    pass


class ConfigError(ModelError):
    pass


ROW_TOL = 1e-12
MOMENT_TOL = 1e-14
MAX_TABLE_ROWS = 2_000_000
MAX_ENUMERATION = 50_000_000


@dataclass(frozen=True)
class WeightLaw:
    """Finite atomic law of a scalar variable."""

    values: tuple
    probs: tuple
    label: str = "atomic"

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ModelError("weight law needs matching non-empty values and probs")
        if min(self.probs) < 0 or abs(math.fsum(self.probs) - 1.0) > ROW_TOL:
            raise ModelError("weight law probabilities must be nonnegative and sum to 1")

    def __len__(self):
        return len(self.values)

    def moment(self, n):
        return math.fsum(p * v ** n for v, p in zip(self.values, self.probs))

    def to_config(self):
        return {"kind": "atomic", "values": list(self.values), "probs": list(self.probs)}


def atomic_law(values, probs, label="atomic"):
    return WeightLaw(tuple(float(v) for v in values), tuple(float(p) for p in probs), label)


def uniform_law(n=4):
    """Gauss-Legendre atoms for Uniform[0,1]; moments exact up to degree 2n-1."""
    x, w = np.polynomial.legendre.leggauss(n)
    law = atomic_law((x + 1) / 2, w / 2, label=f"uniform-gl{n}")
    return replace(law, probs=_renormalized(law.probs))


def beta_law(a, b, n=4):
    """Gauss-Jacobi atoms for Beta(a, b); moments exact up to degree 2n-1."""
    x, w = roots_jacobi(n, b - 1.0, a - 1.0)
    return atomic_law((x + 1) / 2, _renormalized(w), label=f"beta({a},{b})-gj{n}")


def stratified_uniform_law(n=64):
    """Midpoint inverse-CDF atoms for Uniform[0,1]."""
    return atomic_law((np.arange(n) + 0.5) / n, np.full(n, 1.0 / n), label=f"uniform-strat{n}")


def _renormalized(p):
    p = np.asarray(p, dtype=float)
    return tuple(p / math.fsum(p))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    family: str
    offsets: tuple
    components: tuple  # WeightLaw per variable kind
    window: tuple  # ((site offset, component), ...)
    row_table: np.ndarray = field(repr=False)  # (prod of window atom counts, len(offsets))
    lattice_scale: float = 1.0
    symmetry_order_p: int = 1
    name: str = "model"
    seed: int = 0
    atoms: tuple = None
    b_profile: tuple = None
    weight_law: WeightLaw = None
    base: "ModelSpec" = None
    degenerate: bool = False
    normalized: bool = False

    @property
    def n_offsets(self):
        return len(self.offsets)

    @property
    def interaction_range(self):
        """Rows at index distance larger than this share no variables."""
        offs = [o for o, _ in self.window]
        return max(offs) - min(offs)

    @property
    def positions(self):
        return self.lattice_scale * np.asarray(self.offsets, dtype=float)

    @property
    def radix(self):
        sizes = [len(self.components[c]) for _, c in self.window]
        out = np.ones(len(sizes), dtype=np.int64)
        for i in range(len(sizes) - 2, -1, -1):
            out[i] = out[i + 1] * sizes[i + 1]
        return out

    def offset_index(self, o):
        try:
            return self.offsets.index(o)
        except ValueError:
            raise UnsupportedOffset(f"offset {o} not in {self.offsets}") from None

    def kernel_arrays(self):
        """Flat arrays consumed by the compiled samplers."""
        n_comp = len(self.components)
        amax = max(len(c) for c in self.components)
        cum = np.ones((n_comp, amax))
        n_atoms = np.zeros(n_comp, dtype=np.int64)
        for i, law in enumerate(self.components):
            cum[i, : len(law)] = np.cumsum(law.probs)
            n_atoms[i] = len(law)
        win_off = np.array([o for o, _ in self.window], dtype=np.int64)
        win_comp = np.array([c for _, c in self.window], dtype=np.int64)
        return win_off, win_comp, cum, n_atoms, self.radix, np.ascontiguousarray(self.row_table)


@dataclass(frozen=True)
class RowPMF:
    offsets: tuple
    probs: tuple

    def as_array(self):
        return np.asarray(self.probs)


@dataclass(frozen=True)
class EnvKey:
    seed: int
    r: int
    x: int


# ---------------------------------------------------------------- enumeration


def window_variables(model, sites):
    """Sorted distinct (site, component) variables feeding the rows at ``sites``."""
    return sorted({(x + o, c) for x in sites for o, c in model.window})


def enumerate_rows(model, sites, chunk=1 << 16):
    """Yield (weights, rows) over all joint atom choices of the variables at ``sites``.

    ``rows`` has shape (n, len(sites), n_offsets); weights sum to 1 over all chunks.
    """
    variables = window_variables(model, sites)
    sizes = [len(model.components[c]) for _, c in variables]
    total = math.prod(sizes)
    if total > MAX_ENUMERATION:
        raise TooManyParticles(f"{total} joint atom configurations exceed the enumeration budget")
    col = {v: i for i, v in enumerate(variables)}
    site_cols = np.array([[col[(x + o, c)] for o, c in model.window] for x in sites], dtype=np.int64)
    probs = [np.asarray(model.components[c].probs) for _, c in variables]
    radix = model.radix
    for start in range(0, total, chunk):
        rem = np.arange(start, min(total, start + chunk), dtype=np.int64)
        digits = np.empty((rem.size, len(sizes)), dtype=np.int64)
        for i in range(len(sizes) - 1, -1, -1):
            digits[:, i] = rem % sizes[i]
            rem //= sizes[i]
        w = np.ones(digits.shape[0])
        for i, p in enumerate(probs):
            w *= p[digits[:, i]]
        idx = digits[:, site_cols] @ radix
        yield w, model.row_table[idx]


def _site_rows(model):
    """All distinct rows at a single site with their probabilities."""
    ws, rows = [], []
    for w, r in enumerate_rows(model, [0]):
        ws.append(w)
        rows.append(r[:, 0, :])
    return np.concatenate(ws), np.concatenate(rows)


def row_moment(model, offsets_multiset):
    """Exact E[prod_i v(o_i)] for a single row."""
    idx = [model.offset_index(o) for o in offsets_multiset]
    w, rows = _site_rows(model)
    vals = np.prod(rows[:, idx], axis=1) if idx else np.ones(len(w))
    return math.fsum(w * vals)


def _symmetry_order(model):
    w, rows = _site_rows(model)
    offs = np.asarray(model.offsets, dtype=float)
    for k in range(1, 4 * len(offs) + 1):
        m = rows @ offs ** k
        mean = np.dot(w, m)
        if np.dot(w, (m - mean) ** 2) > MOMENT_TOL:
            return k
    return None


def _check_aperiodic(offsets, weights):
    support = [o for o, q in zip(offsets, weights) if q > 0]
    g = 0
    for a in support:
        for b in support:
            g = math.gcd(g, abs(a - b))
    if g != 1:
        raise PeriodicSupport(
            f"step differences of support {support} generate {g}Z, not the full lattice"
        )


def _finish(model, allow_degenerate):
    w, rows = _site_rows(model)
    if np.any(rows < -ROW_TOL) or np.any(np.abs(rows.sum(axis=1) - 1) > ROW_TOL):
        raise ModelError("kernel rows must be probability vectors")
    mu = w @ rows
    _check_aperiodic(model.offsets, mu)
    p = _symmetry_order(model)
    if p is None:
        if not allow_degenerate:
            raise DegenerateModel("all kernel rows are identical; the environment carries no noise")
        return replace(model, symmetry_order_p=1, degenerate=True)
    return replace(model, symmetry_order_p=p)


# ---------------------------------------------------------------- constructors


def make_product_model(offsets, atoms, name="product", seed=0, allow_degenerate=False):
    """Rows drawn IID across sites and times from ``atoms = [(prob, row), ...]``."""
    offsets = tuple(int(o) for o in offsets)
    if len(set(offsets)) != len(offsets):
        raise ModelError("offsets must be distinct")
    probs = [float(a[0]) for a in atoms]
    try:
        rows = np.array([[float(v) for v in a[1]] for a in atoms])
    except TypeError:
        raise ModelError("each atom is (prob, row) with one row entry per offset") from None
    if rows.ndim != 2 or rows.shape[1] != len(offsets):
        raise ModelError("each atom row needs one entry per offset")
    law = atomic_law(range(len(atoms)), probs, label="atom-index")
    model = ModelSpec(
        family="product_iid",
        offsets=offsets,
        components=(law,),
        window=((0, 0),),
        row_table=rows,
        name=name,
        seed=seed,
        atoms=tuple((p, tuple(r)) for p, r in zip(probs, rows.tolist())),
    )
    return _finish(model, allow_degenerate)


def make_linear_product_model(offsets, const, slope, weight_law, name="product", seed=0):
    """Product model with rows ``const + slope * w`` for a scalar weight ``w``."""
    const = np.asarray(const, dtype=float)
    slope = np.asarray(slope, dtype=float)
    atoms = [(p, const + slope * v) for v, p in zip(weight_law.values, weight_law.probs)]
    return make_product_model(offsets, atoms, name=name, seed=seed)


def make_landscape_model(b_profile, weight_law, name="landscape", seed=0):
    """``b_profile`` maps offset -> nonnegative weight."""
    if isinstance(b_profile, dict):
        items = sorted((int(o), float(b)) for o, b in b_profile.items())
    else:
        items = [(int(o), float(b)) for o, b in b_profile]
    items = [(o, b) for o, b in items if b > 0]
    if not items or min(b for _, b in items) < 0:
        raise ModelError("b_profile needs positive weights")
    if dict(items).get(0, 0.0) <= 0:
        raise ModelError("b_profile must put positive weight on offset 0")
    offsets = tuple(o for o, _ in items)
    b = np.array([w for _, w in items])
    _check_aperiodic(offsets, b)
    vals = np.asarray(weight_law.values)
    n = len(vals)
    if n ** len(offsets) > MAX_TABLE_ROWS:
        raise ModelError("weight law has too many atoms for this window; use a coarser law")
    combos = np.array(list(itertools.product(range(n), repeat=len(offsets))))
    expw = np.exp(vals[combos] - vals.max())
    table = b * expw
    table /= table.sum(axis=1, keepdims=True)
    model = ModelSpec(
        family="landscape",
        offsets=offsets,
        components=(weight_law,),
        window=tuple((o, 0) for o in offsets),
        row_table=table,
        name=name,
        seed=seed,
        b_profile=tuple(items),
        weight_law=weight_law,
    )
    return _finish(model, False)


def two_step_reduce(base, name=None):
    """Compose two layers of a nearest-neighbour product model onto the even sublattice.

    Index j stands for original site 2j.  A step from 2j uses the atom a at
    (2r, 2j) and then the atom at (2r+1, 2j-1) or (2r+1, 2j+1); those odd-site
    atoms are the second component at indices j-1 and j respectively.
    """
    if base.family != "product_iid" or tuple(base.offsets) != (-1, 1):
        raise ModelError("two_step_reduce expects a product model on offsets (-1, +1)")
    law = base.components[0]
    rows = base.row_table
    n = len(law)
    combos = np.array(list(itertools.product(range(n), repeat=3)))
    a, bl, br = rows[combos[:, 0]], rows[combos[:, 1]], rows[combos[:, 2]]
    # offsets (-1, 0, +1) in units of 2; row entries: [left, right]
    table = np.stack(
        [a[:, 0] * bl[:, 0], a[:, 1] * br[:, 0] + a[:, 0] * bl[:, 1], a[:, 1] * br[:, 1]],
        axis=1,
    )
    model = ModelSpec(
        family="two_step",
        offsets=(-1, 0, 1),
        components=(law, law),
        window=((0, 0), (-1, 1), (0, 1)),
        row_table=table,
        lattice_scale=2.0 * base.lattice_scale,
        name=name or f"{base.name}-two-step",
        seed=base.seed,
        atoms=base.atoms,
        base=base,
    )
    return _finish(model, False)


def nearest_neighbour_model(weight_law, name="nn"):
    """Rows [1-w, w] on offsets (-1, +1); periodic, so only a base for two_step_reduce."""
    atoms = tuple((p, (1.0 - v, v)) for v, p in zip(weight_law.values, weight_law.probs))
    rows = np.array([r for _, r in atoms])
    return ModelSpec(
        family="product_iid",
        offsets=(-1, 1),
        components=(atomic_law(range(len(atoms)), weight_law.probs, "atom-index"),),
        window=((0, 0),),
        row_table=rows,
        name=name,
        atoms=atoms,
        weight_law=weight_law,
    )


def s1_model(normalize=True):
    m = make_product_model((0, 1), [(0.5, (0.75, 0.25)), (0.5, (0.25, 0.75))], name="s1")
    return normalize_lattice(m) if normalize else m


def hass_model(n=4, normalize=True):
    """Rows ((1-u)/2, u, (1-u)/2) on (-1, 0, 1) with u ~ Uniform[0,1]."""
    m = make_linear_product_model(
        (-1, 0, 1), (0.5, 0.0, 0.5), (-0.5, 1.0, -0.5), uniform_law(n), name="hass"
    )
    return normalize_lattice(m) if normalize else m


def nn_uniform_two_step(n=4, normalize=True):
    m = two_step_reduce(nearest_neighbour_model(uniform_law(n), name="nn-uniform"))
    return normalize_lattice(m) if normalize else m


def landscape_pm1(normalize=True):
    m = make_landscape_model({-1: 1.0, 0: 1.0, 1: 1.0}, atomic_law((-1, 1), (0.5, 0.5)), name="landscape-pm1")
    return normalize_lattice(m) if normalize else m


PRESETS = {
    "s1": s1_model,
    "hass": hass_model,
    "nn_uniform_two_step": nn_uniform_two_step,
    "landscape_pm1": landscape_pm1,
}


# ---------------------------------------------------------------- sampling


@njit(cache=True)
def row_index(seed, r, x, win_off, win_comp, cum, n_atoms, radix):
    idx = 0
    for w in range(win_off.shape[0]):
        c = win_comp[w]
        u = counter_uniform(seed, r, x + win_off[w], c)
        a = 0
        last = n_atoms[c] - 1
        while a < last and u >= cum[c, a]:
            a += 1
        idx += a * radix[w]
    return idx


def sample_row(model, key):
    win_off, win_comp, cum, n_atoms, radix, table = model.kernel_arrays()
    i = row_index(as_seed(key.seed), np.int64(key.r), np.int64(key.x), win_off, win_comp, cum, n_atoms, radix)
    return RowPMF(model.offsets, tuple(float(v) for v in table[i]))


def normalize_lattice(model):
    w, rows = _site_rows(model)
    mu = w @ rows
    offs = np.asarray(model.offsets, dtype=float)
    mean = mu @ offs
    var = mu @ (offs - mean) ** 2
    if var <= 0:
        raise ZeroVariance("annealed step law has zero variance")
    return replace(model, lattice_scale=1.0 / math.sqrt(var), normalized=True)


# ---------------------------------------------------------------- config

_LAW_KEYS = {
    "atomic": {"kind", "values", "probs"},
    "uniform": {"kind", "n"},
    "stratified_uniform": {"kind", "n"},
    "beta": {"kind", "a", "b", "n"},
}
_MODEL_KEYS = {
    "name", "family", "offsets", "atoms", "linear_rows", "weight_law", "b_profile",
    "two_step_reduce", "normalize", "seed", "preset",
}


def _law_from_config(cfg, where):
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError(f"{where}: expected an object with a 'kind' field")
    kind = cfg["kind"]
    if kind not in _LAW_KEYS:
        raise ConfigError(f"{where}.kind: unknown law kind {kind!r}")
    extra = set(cfg) - _LAW_KEYS[kind]
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    try:
        if kind == "atomic":
            return atomic_law(cfg["values"], cfg["probs"])
        if kind == "uniform":
            return uniform_law(int(cfg.get("n", 4)))
        if kind == "stratified_uniform":
            return stratified_uniform_law(int(cfg.get("n", 64)))
        return beta_law(float(cfg["a"]), float(cfg["b"]), int(cfg.get("n", 4)))
    except KeyError as e:
        raise ConfigError(f"{where}: missing field {e.args[0]!r}") from None


def model_from_config(cfg):
    """Build a ModelSpec from a parsed JSON object; unknown keys are rejected."""
    if not isinstance(cfg, dict):
        raise ConfigError("model config must be a JSON object")
    extra = set(cfg) - _MODEL_KEYS
    if extra:
        raise ConfigError(f"model: unknown keys {sorted(extra)}")
    normalize = bool(cfg.get("normalize", True))
    seed = int(cfg.get("seed", 0))
    if "preset" in cfg:
        if cfg["preset"] not in PRESETS:
            raise ConfigError(f"model.preset: unknown preset {cfg['preset']!r}")
        m = PRESETS[cfg["preset"]](normalize=normalize)
        return replace(m, seed=seed, name=cfg.get("name", m.name))
    family = cfg.get("family")
    name = cfg.get("name", family or "model")
    if family == "product_iid":
        if "offsets" not in cfg:
            raise ConfigError("model.offsets: required for product_iid")
        offsets = cfg["offsets"]
        if "atoms" in cfg:
            atoms = cfg["atoms"]
        elif "linear_rows" in cfg and "weight_law" in cfg:
            lr = cfg["linear_rows"]
            if set(lr) != {"const", "slope"}:
                raise ConfigError("model.linear_rows: expected exactly 'const' and 'slope'")
            law = _law_from_config(cfg["weight_law"], "model.weight_law")
            atoms = [(p, np.add(lr["const"], np.multiply(lr["slope"], v))) for v, p in zip(law.values, law.probs)]
        else:
            raise ConfigError("model: product_iid needs 'atoms' or 'linear_rows' + 'weight_law'")
        if cfg.get("two_step_reduce"):
            if tuple(offsets) != (-1, 1):
                raise ConfigError("model.two_step_reduce: requires offsets [-1, 1]")
            base = nearest_neighbour_model(atomic_law([a[1][1] for a in atoms], [a[0] for a in atoms]), name=name)
            m = two_step_reduce(base, name=name)
        else:
            m = make_product_model(offsets, atoms, name=name, seed=seed)
    elif family == "landscape":
        for k in ("b_profile", "weight_law"):
            if k not in cfg:
                raise ConfigError(f"model.{k}: required for landscape")
        bp = cfg["b_profile"]
        if isinstance(bp, dict):
            bp = {int(k): v for k, v in bp.items()}
        elif "offsets" in cfg:
            bp = dict(zip(cfg["offsets"], bp))
        else:
            raise ConfigError("model.b_profile: list form needs 'offsets'")
        m = make_landscape_model(bp, _law_from_config(cfg["weight_law"], "model.weight_law"), name=name)
    else:
        raise ConfigError(f"model.family: expected 'product_iid' or 'landscape', got {family!r}")
    m = replace(m, seed=seed)
    return normalize_lattice(m) if normalize else m


def model_to_config(model):
    """Inverse of model_from_config for models built from atoms or landscapes."""
    cfg = {"name": model.name, "seed": model.seed, "normalize": model.normalized}
    if model.family == "landscape":
        cfg.update(
            family="landscape",
            b_profile={str(o): b for o, b in model.b_profile},
            weight_law=model.weight_law.to_config(),
        )
    elif model.family == "two_step":
        cfg.update(
            family="product_iid",
            offsets=[-1, 1],
            atoms=[[p, list(r)] for p, r in model.base.atoms],
            two_step_reduce=True,
        )
    else:
        cfg.update(family="product_iid", offsets=list(model.offsets), atoms=[[p, list(r)] for p, r in model.atoms])
    return cfg
