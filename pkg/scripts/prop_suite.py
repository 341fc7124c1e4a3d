"""Seeded property suite over random no-arbitrage markets.

Runs the clean suite, then (with --mutation) a run with one charged
constraint dropped from the primal LP, which the suite should flag.

    python3 scripts/prop_suite.py --seed 42 --n-markets 200 --mutation
"""
import argparse
import sys

from robustprice.experiments import ExperimentConfig, run_property_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--n-markets", type=int, default=200)
    ap.add_argument("--periods", type=int, default=2)
    ap.add_argument("--mutation", action="store_true", help="also run the drop-charged-constraint mutation")
    ap.add_argument("--counterexample-dir", default=None)
    args = ap.parse_args()

    text, bad = run_property_suite(ExperimentConfig(seed=args.seed, n_markets=args.n_markets, periods=args.periods))
    print(text, end="")
    if args.mutation:
        n = min(args.n_markets, 20)
        mtext, mbad = run_property_suite(ExperimentConfig(seed=args.seed, n_markets=n, periods=args.periods,
                                                          mutation="drop-charged-constraint",
                                                          counterexample_dir=args.counterexample_dir))
        print("\n# mutation: drop-charged-constraint")
        print(mtext, end="")
        print(f"mutation detected: {mbad > 0}")
    sys.exit(2 if bad else 0)


if __name__ == "__main__":
    main()
