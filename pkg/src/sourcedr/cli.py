"""Command line interface.

Exit codes: 0 success, 1 usage or input error, 2 saddle non-convergence,
3 infeasible version space.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import Dataset, config_hash
from .estimator import (EstimatorConfig, InfeasibleError, NonConvergenceError, build_problem, dualize, fit)
from .experiments import (ExperimentConfig, dumps_json, emit_curves, load_config_file, make_scenario,
                          oracle_check, run_coverage, run_rate_study, run_source_dr_study)
from .inference import InferenceConfig, InferenceError, cross_fit_infer
from .rkhs import MomentFunctional


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="TOML (or JSON) configuration file")
    p.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="worker processes for replications")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="sourcedr", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", parents=[common], help="draw a dataset from a DGP config")
    sim.add_argument("--n", type=int, help="sample size (overrides the config)")
    for name, helptext in (("fit", "fit h (or q with side = 'dual') on a dataset"),
                           ("infer", "cross-fitted doubly robust inference on a dataset")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data", type=Path, required=True, help="dataset CSV")
    sub.add_parser("coverage", parents=[common], help="Monte Carlo coverage study")
    rates = sub.add_parser("rates", parents=[common], help="error-versus-n rate study")
    rates.add_argument("--metric", choices=("strong", "weak"))
    rates.add_argument("--side", choices=("primal", "dual"))
    sub.add_parser("source-dr", parents=[common], help="coverage when either side may be ill-posed")
    curves = sub.add_parser("curves", parents=[common], help="rate exponent curves as CSV")
    curves.add_argument("--gamma", type=float, default=None)
    sub.add_parser("oracle-check", parents=[common], help="spectral filter and bias-bound checks")
    return parser


def _config(args) -> dict:
    return load_config_file(args.config) if args.config else {}


def _experiment(args, doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    if args.seed is not None:
        doc["base_seed"] = args.seed
    if args.out is not None:
        doc["outputs"] = str(args.out)
    if args.jobs is not None:
        doc["jobs"] = args.jobs
    return ExperimentConfig.from_dict(doc)


def _functional(doc: dict) -> MomentFunctional | None:
    if "dgp" in doc:
        return make_scenario(doc["dgp"]).m_tilde
    if "functional" in doc:
        return MomentFunctional.from_dict(doc["functional"])
    return None


def cmd_simulate(args) -> int:
    doc = _config(args)
    spec = doc.get("dgp", doc)
    n = args.n or int(doc.get("n", 1000))
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    scen = make_scenario(spec)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    data = scen.sample(n, seed)
    data.to_csv(out / "dataset.csv", {"config_hash": config_hash(spec), "theta0": scen.truth.theta0,
                                      "dgp": spec})
    print(out / "dataset.csv")
    return 0


def cmd_fit(args) -> int:
    doc = _config(args)
    data = Dataset.from_csv(args.data)
    cfg = EstimatorConfig(**doc.get("estimator", {}))
    side = doc.get("side", "primal")
    if side == "dual":
        m_tilde = _functional(doc)
        if m_tilde is None:
            raise ValueError("the dual side needs a 'functional' or 'dgp' table in the config")
        prob = dualize(data, (None, None), m_tilde, B=cfg.norm_bound_B, max_anchors=cfg.max_anchors)
    else:
        m = MomentFunctional("outcome_product", {"column": doc.get("outcome", "y")})
        prob = build_problem(data, data.x, data.z, m, B=cfg.norm_bound_B, max_anchors=cfg.max_anchors)
    result = fit(prob, cfg)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "fit.json").write_text(dumps_json(result.to_dict()))
    print(out / "fit.json")
    return 0


def cmd_infer(args) -> int:
    doc = _config(args)
    data = Dataset.from_csv(args.data)
    m_tilde = _functional(doc)
    if m_tilde is None:
        raise ValueError("inference needs a 'functional' or 'dgp' table in the config")
    truth = make_scenario(doc["dgp"]).truth if "dgp" in doc else None
    dual = doc.get("dual")
    icfg = InferenceConfig(EstimatorConfig(**doc.get("primal", {})), EstimatorConfig(**dual) if dual else None,
                           folds=int(doc.get("folds", 2)),
                           seed=args.seed if args.seed is not None else int(doc.get("seed", 0)))
    report = cross_fit_infer(data, MomentFunctional("outcome_product", {"column": "y"}), m_tilde, icfg,
                             truth=truth)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps_json(report.to_dict()))
    print(out / "report.json")
    return 0


def cmd_coverage(args) -> int:
    print(dumps_json(run_coverage(_experiment(args, {"kind": "coverage", **_config(args)}))), end="")
    return 0


def cmd_rates(args) -> int:
    doc = _config(args)
    doc.setdefault("kind", "rate_strong")
    cfg = _experiment(args, doc)
    rate = run_rate_study(cfg, args.metric, args.side)
    print(dumps_json(rate.to_dict()), end="")
    return 0


def cmd_source_dr(args) -> int:
    print(dumps_json(run_source_dr_study(_experiment(args, {"kind": "source_dr", **_config(args)}))), end="")
    return 0


def cmd_curves(args) -> int:
    doc = _config(args)
    gamma = args.gamma if args.gamma is not None else float(doc.get("gamma", 1.0))
    path = (args.out / "curves.csv") if args.out else None
    text = emit_curves(doc.get("beta_grid"), gamma, path)
    if path is None:
        sys.stdout.write(text)
    else:
        print(path)
    return 0


def cmd_oracle_check(args) -> int:
    summary = oracle_check(args.seed or 0)
    text = dumps_json(summary)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "summary.json").write_text(text)
    print(text, end="")
    return 0 if summary["passed"] else 1


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "infer": cmd_infer, "coverage": cmd_coverage,
            "rates": cmd_rates, "source-dr": cmd_source_dr, "curves": cmd_curves,
            "oracle-check": cmd_oracle_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (NonConvergenceError, InfeasibleError, InferenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        root = exc.__cause__ if isinstance(exc, InferenceError) else exc
        if isinstance(root, NonConvergenceError):
            return 2
        return 3 if isinstance(root, InfeasibleError) else 1
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
