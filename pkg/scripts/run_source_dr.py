"""Coverage when one nuisance is regular and the other is not, without telling the estimator which."""
import argparse
from pathlib import Path

from sourcedr.experiments import dumps_json, load_experiment, run_source_dr_study

ROOT = Path(__file__).resolve().parent.parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", type=Path, default=ROOT / "configs" / "source_dr.toml")
    parser.add_argument("--out", default="results/source_dr")
    parser.add_argument("--replications", type=int)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()
    cfg = load_experiment(args.config, outputs=args.out, replications=args.replications, jobs=args.jobs)
    print(dumps_json(run_source_dr_study(cfg)), end="")


if __name__ == "__main__":
    main()
