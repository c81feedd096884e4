"""Experiment runners behind the command line."""

import csv
import io
import math
import os
import time
from collections import deque

import numpy as np

from ..annealed import annealed_law, drift_expansion, tilt_parameter
from ..diff_chain import (
    NotApplicable,
    analytic_pi_origin,
    diff_kernel,
    estimate_pi_ratio_pooled,
    gamma_ext_sq,
    gamma_ext_sq_exact,
    invariant_measure,
    merge_estimates,
    step_span,
)
from ..kpoint import cumulant_audit, decay_profile, joint_kernel_pmf
from ..model_zoo import EnvKey, ModelError, PeriodicSupport, model_from_config, model_to_config, sample_row
from ..quenched_field import EstimatorDisagreement, environment_table, moment_estimate, parse_phi
from ..rng import derive_seed
from ..she_oracle import mc_localtime, she_moment_k1, she_moment_k2
from .config import Report


class ValidationFailure(RuntimeError):
    def __init__(self, failing):
        super().__init__("failing checks: " + ", ".join(failing))
        self.failing = list(failing)


CSV_COLUMNS = {
    "drift-table": ["N", "p", "beta", "d_N", "d_tilde_N", "gap_over_sqrtN"],
    "estimate-gamma": ["model", "p", "gamma_ext_sq", "stderr", "steps", "seeds"],
    "moment-sweep": ["N", "k", "estimator", "value", "stderr", "n_env", "oracle_value", "z_score"],
    "diffchain-stats": ["seed", "steps", "pi_origin", "stderr", "pi_origin_exact", "pi_origin_analytic"],
}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.floating):
        return repr(float(v))
    return str(v)


def csv_text(kind, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = CSV_COLUMNS[kind]
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


# ---------------------------------------------------------------- validation


def _item(name, ok, detail):
    return {"item": name, "pass": bool(ok), "detail": detail, "provenance": "closed_form"}


def _irreducible(model, W):
    """Breadth-first search over difference states inside [-W, W] from 0, forwards and backwards."""
    edges = {}
    for x in range(-W, W + 1):
        law = diff_kernel(model, x).law.masses
        edges[x] = [y for y, m in law.items() if m > 0 and abs(y) <= W]

    def reach(adj):
        seen, todo = {0}, deque([0])
        while todo:
            x = todo.popleft()
            for y in adj.get(x, ()):
                if y not in seen:
                    seen.add(y)
                    todo.append(y)
        return seen

    back = {}
    for x, ys in edges.items():
        for y in ys:
            back.setdefault(y, []).append(x)
    full = set(range(-W, W + 1))
    return reach(edges) == full and reach(back) == full


def validate_model(model_cfg, strict=False):
    t0 = time.perf_counter()
    items = []
    try:
        model = model_from_config(model_cfg)
    except PeriodicSupport as e:
        items.append(_item("irreducibility", False, str(e)))
        model = None
    if model is not None:
        p = model.symmetry_order_p
        items.append(_item("symmetry_order", not model.degenerate, {"p": p}))
        mu = annealed_law(model)
        items.append(_item("unit_variance", abs(mu.variance() - 1) <= 1e-10, {"variance": mu.variance()}))
        worst = 0.0
        for r in range(5):
            for x in range(-3, 4):
                row = np.array(sample_row(model, EnvKey(model.seed, r, x)).probs)
                worst = max(worst, abs(row.sum() - 1), -row.min())
        items.append(_item("rows_are_probability_vectors", worst <= 1e-12, {"max_error": worst}))
        rng = np.random.default_rng(derive_seed(model.seed, 99))
        proj = 0.0
        for _ in range(20):
            k = int(rng.integers(1, 5))
            x = tuple(int(v) for v in rng.integers(-3, 4, size=k))
            pk = joint_kernel_pmf(model, x)
            for i in range(k):
                proj = max(proj, float(np.abs(pk.marginal(i) - mu.probs).max()))
        items.append(_item("projectivity", proj <= 1e-12, {"max_error": proj}))
        audit = cumulant_audit(model)
        bad = [r for r in audit if not r["pass"]]
        items.append(_item("cumulant_vanishing", not bad, {"checked": len(audit), "failing": len(bad)}))
        D = model.interaction_range
        prof = decay_profile(model, 2, list(range(0, D + 3)))
        far = max(g for s, g in prof if s > D)
        items.append(_item("correlation_decay", far <= 1e-12,
                           {"profile": [[s, g] for s, g in prof], "interaction_range": D}))
        W = 4 * (D + step_span(model))
        items.append(_item("irreducibility", _irreducible(model, W), {"window": W}))
        mp = max(abs(diff_kernel(model, x).law.mean() - model.lattice_scale * x) for x in range(-W, W + 1))
        items.append(_item("difference_chain_martingale", mp <= 1e-12, {"max_error": mp}))
    failing = [i["item"] for i in items if not i["pass"]]
    rep = Report("validate-model", {"model": model_cfg}, items, "fail" if failing else "pass",
                 [f"failing: {', '.join(failing)}"] if failing else [], wall_clock=time.perf_counter() - t0)
    if strict and failing:
        raise ValidationFailure(failing)
    return rep


# ---------------------------------------------------------------- experiments


def nn_gamma_reference(model):
    """8 s^2 / (1 - 4 s^2) with s^2 the weight variance, for two-step nearest-neighbour models."""
    if model.family != "two_step" or model.base is None:
        return None
    atoms = model.base.atoms
    w = np.array([r[1] for _, r in atoms])
    p = np.array([q for q, _ in atoms])
    var = float(p @ w ** 2 - (p @ w) ** 2)
    return 8 * var / (1 - 4 * var)


def run_estimate_gamma(cfg, model):
    ests = [gamma_ext_sq(model, cfg.steps, derive_seed(cfg.seed_base, s)) for s in cfg.seeds]
    est = merge_estimates(ests)
    exact = gamma_ext_sq_exact(model)
    row = {"model": model.name, "p": model.symmetry_order_p, "gamma_ext_sq": est.value, "stderr": est.stderr,
           "steps": cfg.steps, "seeds": len(cfg.seeds), "exact_value": exact, "provenance": "quadrature",
           "nonnegative_within_3se": est.value >= -3 * est.stderr,
           "per_seed": [[e.value, e.stderr] for e in ests]}
    msgs = []
    ref = nn_gamma_reference(model)
    if ref is not None:
        row["reference_constant"] = ref
        row["ratio_to_reference"] = est.value / ref
        if abs(est.value / ref - 1) > 0.05:
            msgs.append(f"systematic offset: estimate/reference = {est.value / ref:.6f} "
                        f"(reference 8s^2/(1-4s^2) = {ref:.6g}); reported, not corrected")
    return [row], msgs, False


def she_oracle_value(k, t, phi, gamma_sq, seed=0):
    """(value, provenance) for E[H^k] in the continuum limit."""
    if k == 1:
        return she_moment_k1(t, phi).value, "quadrature"
    if k == 2:
        return she_moment_k2(t, phi, gamma_sq).value, "quadrature"
    e = mc_localtime(k, t, gamma_sq, phi, 20000, 1e-3, seed=seed)
    return e.value, "monte_carlo"


def run_moment_sweep(cfg, model):
    phi = parse_phi(cfg.phi)
    gamma_sq = gamma_ext_sq_exact(model)
    rows, disagree = [], False
    for N in cfg.N:
        seed = derive_seed(cfg.seed_base, N)
        H = environment_table(model, N, cfg.t, (phi,), cfg.n_env, seed, cfg.workers,
                              truncation_eps=cfg.truncation_eps)["H"][:, 0]
        for k in cfg.k:
            res = moment_estimate(model, N, cfg.t, phi, k, cfg.n_env, seed, cfg.workers, cfg.n_paths,
                                  direct_samples=H)
            oracle, prov = she_oracle_value(k, cfg.t, phi, gamma_sq, cfg.seed_base)
            disagree |= res.disagreement
            for name, est in (("direct", res.direct), ("tilted", res.tilted)):
                z = (est.value - oracle) / est.stderr if est.stderr > 0 else float("nan")
                rows.append({"N": N, "k": k, "estimator": name, "value": est.value, "stderr": est.stderr,
                             "n_env": cfg.n_env, "oracle_value": oracle, "z_score": z, "provenance": prov,
                             "gamma_ext_sq": gamma_sq, "estimators_disagree": res.disagreement})
    msgs = ["estimator disagreement beyond 4 pooled standard errors"] if disagree else []
    return rows, msgs, disagree


def run_drift_table(cfg, model):
    mu = annealed_law(model)
    p = model.symmetry_order_p
    rows = []
    for N in cfg.N:
        t = drift_expansion(mu, N, p)
        rows.append({"N": N, "p": p, "beta": tilt_parameter(N, p), "d_N": t.d_N, "d_tilde_N": t.d_tilde_N,
                     "gap_over_sqrtN": t.gap_over_sqrtN, "provenance": "closed_form",
                     "expansion_terms": [[str(e), c] for e, c in t.expansion_terms]})
    return rows, [], False


def point_indicator(pos):
    def f(x):
        return (np.abs(np.asarray(x, dtype=float) - pos) < 1e-9).astype(float)

    return f


def run_diffchain_stats(cfg, model):
    c = model.lattice_scale
    exact = invariant_measure(model)[0]
    try:
        analytic = analytic_pi_origin(model)
    except NotApplicable:
        analytic = float("nan")
    n_traj = cfg.n_paths or 1000
    per = max(1, cfg.steps // n_traj)
    rows = []
    for s in cfg.seeds:
        seeds = [derive_seed(cfg.seed_base, s, i) for i in range(n_traj)]
        est = estimate_pi_ratio_pooled(model, point_indicator(0.0), point_indicator(c), per, seeds)
        rows.append({"seed": s, "steps": est.n, "pi_origin": est.value, "stderr": est.stderr,
                     "pi_origin_exact": exact, "pi_origin_analytic": analytic, "provenance": "quadrature"})
    return rows, [], False


RUNNERS = {
    "estimate-gamma": run_estimate_gamma,
    "moment-sweep": run_moment_sweep,
    "drift-table": run_drift_table,
    "diffchain-stats": run_diffchain_stats,
}


def run_experiment(cfg, write=True):
    """Run one configured experiment; returns (report, written csv paths)."""
    t0 = time.perf_counter()
    if cfg.experiment == "validate-model":
        rep = validate_model(cfg.model)
        paths = []
    else:
        model = cfg.build_model()
        if cfg.experiment == "cumulant-audit":
            rows = cumulant_audit(model)
            bad = any(not r["pass"] for r in rows)
            rep = Report("cumulant-audit", cfg.echo(), rows, "fail" if bad else "pass")
            paths = []
        else:
            rows, msgs, disagree = RUNNERS[cfg.experiment](cfg, model)
            rep = Report(cfg.experiment, cfg.echo(), rows, "disagreement" if disagree else "pass", msgs)
            paths = []
            if write:
                os.makedirs(cfg.out, exist_ok=True)
                path = os.path.join(cfg.out, f"{cfg.experiment}.csv")
                with open(path, "w", newline="") as fh:
                    fh.write(csv_text(cfg.experiment, rows))
                paths.append(path)
    rep.wall_clock = time.perf_counter() - t0
    if write:
        os.makedirs(cfg.out, exist_ok=True)
        rep.save(os.path.join(cfg.out, f"{cfg.experiment}.json"))
    return rep, paths


def exit_code(report):
    if report.status == "pass":
        return 0
    return 3 if report.status == "disagreement" else 1


__all__ = ["EstimatorDisagreement", "ValidationFailure", "ModelError", "run_experiment", "validate_model",
           "model_to_config", "csv_text", "exit_code"]
