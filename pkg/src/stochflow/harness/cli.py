"""Command line entry point: `stochflow <subcommand> [flags]`."""

import argparse
import json
import os
import sys

from ..model_zoo import ModelError
from ..quenched_field import parse_phi
from ..she_oracle import local_time_mgf, mc_localtime, she_moment_k1, she_moment_k2
from .config import Report, config_from_dict, load_json
from .experiments import exit_code, run_experiment
from .plotting import emit_plot_data

EXPERIMENTS = ("validate-model", "estimate-gamma", "moment-sweep", "drift-table", "diffchain-stats",
               "cumulant-audit")


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _model_ref(text):
    """A preset name, a JSON file, or inline JSON."""
    if text.lstrip().startswith("{"):
        return json.loads(text)
    if os.path.exists(text):
        return load_json(text)
    return {"preset": text}


def build_parser():
    p = argparse.ArgumentParser(prog="stochflow", description="Random walks in space-time random environments.")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--seed-base", type=int, help="base seed (u64)")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--model", help="preset name, JSON file or inline JSON")
        return s

    experiment("validate-model", "check the model assumptions item by item")
    experiment("cumulant-audit", "joint cumulants against the vanishing rule")
    s = experiment("estimate-gamma", "difference-chain estimate of the noise strength")
    s.add_argument("--steps", type=int)
    s.add_argument("--seeds", type=_ints)
    s = experiment("moment-sweep", "field moments over an N grid against the continuum oracle")
    s.add_argument("--N-list", dest="N", type=_ints)
    s.add_argument("--t", type=float)
    s.add_argument("--k", type=_ints)
    s.add_argument("--phi")
    s.add_argument("--n-env", dest="n_env", type=int)
    s.add_argument("--n-paths", dest="n_paths", type=int)
    s.add_argument("--seeds", type=_ints)
    s = experiment("drift-table", "exact drift and its truncated expansion")
    s.add_argument("--N-list", dest="N", type=_ints)
    s = experiment("diffchain-stats", "origin mass of the difference-chain invariant measure")
    s.add_argument("--steps", type=int)
    s.add_argument("--seeds", type=_ints)
    s.add_argument("--n-paths", dest="n_paths", type=int, help="trajectories per seed")

    o = sub.add_parser("oracle", help="continuum reference values as JSON")
    o.add_argument("what", choices=["k1", "k2", "mgf", "mc"])
    o.add_argument("--t", type=float, default=1.0)
    o.add_argument("--phi", default="gauss:0,0.5")
    o.add_argument("--gamma", type=float, default=1.0)
    o.add_argument("--k", type=int, default=2)
    o.add_argument("--n-paths", dest="n_paths", type=int, default=20000)
    o.add_argument("--mesh", type=float, default=1e-3)

    e = sub.add_parser("emit-plot-data", help="long-format CSV and PNG from a JSON report")
    e.add_argument("report", help="report JSON written by an experiment")
    return p


def _config(args):
    raw = {}
    base = "."
    if args.config:
        raw = load_json(args.config)
        base = os.path.dirname(os.path.abspath(args.config))
        if not isinstance(raw, dict):
            raise ModelError("config must be a JSON object")
    raw = dict(raw)
    raw["experiment"] = args.command
    if getattr(args, "model", None):
        raw["model"] = _model_ref(args.model)
    for key in ("N", "t", "k", "phi", "n_env", "n_paths", "seeds", "steps"):
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    if args.out is not None:
        raw["out"] = args.out
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.seed_base is not None:
        raw["seed_base"] = args.seed_base
    if "model" not in raw:
        raw["model"] = {"preset": "s1"}
    return config_from_dict(raw, base)


def _oracle(args):
    if args.what == "k1":
        res = she_moment_k1(args.t, parse_phi(args.phi)).to_dict()
    elif args.what == "k2":
        res = she_moment_k2(args.t, parse_phi(args.phi), args.gamma).to_dict()
    elif args.what == "mgf":
        res = local_time_mgf(args.gamma, args.t).to_dict()
    else:
        phi = parse_phi(args.phi)
        est = mc_localtime(args.k, args.t, args.gamma, phi, args.n_paths, args.mesh, seed=args.seed_base or 0)
        res = {"value": est.value, "method": "monte_carlo", "error_bound": est.stderr, "bias": est.bias}
    print(json.dumps(res, sort_keys=True))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "oracle":
            return _oracle(args)
        if args.command == "emit-plot-data":
            with open(args.report) as fh:
                rep = Report.from_json(fh.read())
            out = args.out or os.path.dirname(os.path.abspath(args.report))
            for path in emit_plot_data(rep, out):
                print(path)
            return 0
        cfg = _config(args)
        rep, paths = run_experiment(cfg)
        if rep.kind in ("validate-model", "cumulant-audit"):
            print(rep.to_json())
        else:
            paths += emit_plot_data(rep, cfg.out)
            for path in paths:
                print(path)
        for m in rep.messages:
            print(m, file=sys.stderr)
        return exit_code(rep)
    except (ModelError, ValueError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
