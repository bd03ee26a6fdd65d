"""Write the rate-exponent curves (and the comparison baselines) as CSV."""
import argparse
from pathlib import Path

from sourcedr.experiments import emit_curves, load_config_file

ROOT = Path(__file__).resolve().parent.parent


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", type=Path, default=ROOT / "configs" / "curves.toml")
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--out", type=Path, help="CSV path; stdout when omitted")
    args = parser.parse_args()
    doc = load_config_file(args.config)
    gamma = args.gamma if args.gamma is not None else doc.get("gamma", 1.0)
    text = emit_curves(doc.get("beta_grid"), gamma, args.out)
    if args.out is None:
        print(text, end="")


if __name__ == "__main__":
    main()
