"""Ablation, noise curves, affinity-weight sweep and graph diagnostics on one dataset.

    GLAM_DATA_DIR=data python scripts/run_diagnostics.py --dataset cora

Reuses the tuned configurations cached by run_accuracy.py.
"""

import argparse
import logging
import sys

from glam.experiments import Experiments, dataset_dir

FRACTIONS = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--dataset", default="cora")
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--results", default="results")
    p.add_argument("--workers", type=int, default=None)
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    if dataset_dir(args.dataset) is None:
        print(f"{args.dataset} missing under GLAM_DATA_DIR", file=sys.stderr)
        return 1
    exp = Experiments(args.dataset, cache=args.results, budget=args.budget, workers=args.workers)

    print("ablation")
    for name, row in exp.ablation().items():
        print(f"  {name:<20} {row['mean']:6.2f} ± {row['std']:.2f}")
    for mode in ("add_noise", "remove_good"):
        print(f"noise curve: {mode}")
        for point in exp.noise(mode, FRACTIONS):
            print(f"  {point['x']:.1f}  {point['mean']:6.2f} ± {point['std']:.2f}")
    print("affinity weight sweep")
    for point in exp.weight_sweep(FRACTIONS):
        print(f"  w_A={point['x']:.1f}  {point['mean']:6.2f} ± {point['std']:.2f}")
    print("diagnostics (with / without self-loops)")
    for model, d in exp.diagnostics().items():
        print(f"  {model:<8} BNR {d['bnr']:6.2f} / {d['bnr_no_self']:6.2f}   "
              f"weighted homophily {d['wh']:6.2f} / {d['wh_no_self']:6.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
