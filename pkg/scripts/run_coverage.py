"""Coverage study: replicate the full cross-fitted pipeline and report CI coverage."""
import argparse
from pathlib import Path

from sourcedr.experiments import dumps_json, load_experiment, run_coverage

ROOT = Path(__file__).resolve().parent.parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", type=Path, default=ROOT / "configs" / "coverage.toml")
    parser.add_argument("--out", default="results/coverage")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--ci-scale", type=float, help="shrink or widen the interval (diagnostic)")
    args = parser.parse_args()
    cfg = load_experiment(args.config, outputs=args.out, base_seed=args.seed, jobs=args.jobs,
                          ci_scale=args.ci_scale)
    print(dumps_json(run_coverage(cfg)), end="")


if __name__ == "__main__":
    main()
