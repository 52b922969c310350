"""Tune GLAM and GCN-kNN on each dataset, then report five-seed test accuracy.

    GLAM_DATA_DIR=data python scripts/run_accuracy.py --datasets cora citeseer

Results are cached under --results, so an interrupted run resumes.
"""

import argparse
import logging
import sys

from glam.experiments import Experiments, dataset_dir


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--datasets", nargs="+", default=["cora", "citeseer"])
    p.add_argument("--budget", type=int, default=200, help="random-search trials per model")
    p.add_argument("--results", default="results")
    p.add_argument("--workers", type=int, default=None)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    print(f"{'dataset':<10} {'GCN-kNN':>14} {'GLAM':>14} {'gap':>7}")
    for name in args.datasets:
        if dataset_dir(name) is None:
            print(f"{name:<10} missing under GLAM_DATA_DIR", file=sys.stderr)
            continue
        exp = Experiments(name, cache=args.results, budget=args.budget, workers=args.workers)
        gcn, glam = exp.accuracy("gcn-knn"), exp.accuracy("glam")
        print(f"{name:<10} {gcn['mean']:8.2f} ± {gcn['std']:4.2f} {glam['mean']:8.2f} ± {glam['std']:4.2f} "
              f"{glam['mean'] - gcn['mean']:+7.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
