"""Error-versus-n study; prints the fitted log-log slope."""
import argparse
from pathlib import Path

from sourcedr.experiments import dumps_json, load_experiment, run_rate_study

ROOT = Path(__file__).resolve().parent.parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", type=Path, default=ROOT / "configs" / "rates_strong.toml")
    parser.add_argument("--metric", choices=("strong", "weak"))
    parser.add_argument("--side", choices=("primal", "dual"))
    parser.add_argument("--lam", type=float, help="fix lambda instead of the schedule (bias-floor control)")
    parser.add_argument("--out", default="results/rates")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()
    cfg = load_experiment(args.config, outputs=args.out, jobs=args.jobs)
    if args.lam is not None:
        cfg.primal = {"lam": args.lam}
    print(dumps_json(run_rate_study(cfg, args.metric, args.side).to_dict()), end="")


if __name__ == "__main__":
    main()
