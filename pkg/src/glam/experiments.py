"""Cached experiment pipelines shared by the scripts and the acceptance suite.

Every pipeline takes a dataset name resolved under ``GLAM_DATA_DIR`` and
stores its results as JSON in a cache directory, so a rerun only recomputes
what is missing.
"""

from __future__ import annotations

import json
import logging
import os
import time
from pathlib import Path

from glam import analysis
from glam.baseline import gcn_hyperparams, gcn_inputs, gcn_sweep_spec
from glam.data import Dataset, boosted_features, load_dataset
from glam.model import GlamHyperParams, glam_forward, prepare_inputs
from glam.trainer import SweepSpec, evaluate_seeds, summarize, sweep, train

log = logging.getLogger(__name__)

FIVE_SEEDS = [0, 1, 2, 3, 4]


def data_root() -> Path | None:
    root = os.environ.get("GLAM_DATA_DIR")
    return Path(root) if root else None


def dataset_dir(name: str) -> Path | None:
    root = data_root()
    if root is None or not (root / name / "features.tsv").is_file():
        return None
    return root / name


def cache_root() -> Path:
    return Path(os.environ.get("GLAM_RESULTS_DIR", "results"))


class Experiments:
    """Lazy, disk-cached experiments on one dataset."""

    def __init__(self, name: str, cache: Path | None = None, budget: int = 200, workers: int | None = None):
        path = dataset_dir(name)
        if path is None:
            raise FileNotFoundError(f"dataset {name!r} not found under GLAM_DATA_DIR")
        self.name = name
        self.dataset: Dataset = load_dataset(path)
        self.cache = Path(cache or cache_root()) / name
        self.cache.mkdir(parents=True, exist_ok=True)
        self.budget = budget
        self.workers = workers
        self._boosted = None

    @property
    def boosted(self):
        if self._boosted is None:
            self._boosted = boosted_features(self.dataset.features)
        return self._boosted

    def _cached(self, key: str, compute):
        path = self.cache / f"{key}.json"
        if path.is_file():
            return json.loads(path.read_text())
        start = time.perf_counter()
        value = compute()
        log.info("%s/%s computed in %.1f s", self.name, key, time.perf_counter() - start)
        path.write_text(json.dumps(value, indent=2, sort_keys=True) + "\n")
        return value

    # --- tuning --------------------------------------------------------------

    def tuned(self, model: str) -> GlamHyperParams:
        """Best configuration of a ``budget``-trial random search for ``glam`` or ``gcn-knn``."""

        def run():
            spec = SweepSpec(budget=self.budget)
            base = GlamHyperParams()
            if model == "gcn-knn":
                spec, base = gcn_sweep_spec(spec), gcn_hyperparams(base)
            best, board = sweep(self.dataset, spec, base=base, workers=self.workers)
            return {"hyperparams": best.to_dict(), "val_acc": board[0]["val_acc"], "budget": spec.budget,
                    "leaderboard": board[:20]}

        got = self._cached(f"sweep_{model}_b{self.budget}", run)
        return GlamHyperParams.from_dict(got["hyperparams"])

    # --- evaluations -----------------------------------------------------------

    def accuracy(self, model: str) -> dict:
        """Five-seed test accuracy of the tuned model."""

        def run():
            hp = self.tuned(model)
            summary = evaluate_seeds(self.dataset, hp, FIVE_SEEDS, boosted=self.boosted)
            return {"mean": summary.mean, "std": summary.std, "accuracies": summary.accuracies,
                    "failed_seeds": summary.failed_seeds}

        return self._cached(f"accuracy_{model}_b{self.budget}", run)

    def ablation(self) -> dict:
        def run():
            hp = self.tuned("glam")
            rows = {}
            for name, vhp in (("glam", hp), ("w/o affinity graph", hp.replace(w_ck=1.0)),
                              ("w/o affinity loss", hp.replace(beta=0.0))):
                s = evaluate_seeds(self.dataset, vhp, FIVE_SEEDS, boosted=self.boosted)
                rows[name] = {"mean": s.mean, "std": s.std, "accuracies": s.accuracies}
            return rows

        return self._cached(f"ablation_b{self.budget}", run)

    def noise(self, mode: str, fractions, seeds=(0, 1, 2)) -> list[dict]:
        def run():
            hp = self.tuned("gcn-knn")
            points = analysis.noise_experiment(self.dataset, hp, list(fractions), mode, list(seeds),
                                               boosted=self.boosted)
            return [p.to_dict() for p in points]

        tag = "_".join(f"{f:g}" for f in fractions)
        return self._cached(f"noise_{mode}_{tag}_b{self.budget}", run)

    def weight_sweep(self, weights, seeds=tuple(FIVE_SEEDS)) -> list[dict]:
        def run():
            hp = self.tuned("glam")
            points = analysis.affinity_weight_sweep(self.dataset, hp, list(weights), list(seeds),
                                                    boosted=self.boosted)
            return [p.to_dict() for p in points]

        return self._cached(f"weight_sweep_b{self.budget}", run)

    def diagnostics(self, seeds=tuple(FIVE_SEEDS)) -> dict:
        """BNR and weighted homophily of the evaluation-time propagation graph, averaged over seeds."""

        def run():
            ds, labels = self.dataset, self.dataset.labels
            out = {}
            for model in ("glam", "gcn-knn"):
                hp = self.tuned(model)
                if model == "gcn-knn":
                    inputs = gcn_inputs(ds, hp, boosted=self.boosted)
                else:
                    inputs = prepare_inputs(ds, hp, labels[ds.split.train], boosted=self.boosted)
                scores = {f"{m}{s}": [] for m in ("bnr", "wh") for s in ("", "_no_self")}
                for seed in seeds:
                    params, _ = train(ds, hp.replace(seed=seed), inputs=inputs, evaluate_test=False)
                    view = glam_forward(params, hp, inputs).laplacian
                    for flag, suffix in ((False, ""), (True, "_no_self")):
                        scores["bnr" + suffix].append(analysis.bad_neighbor_ratio(view, labels, flag))
                        scores["wh" + suffix].append(analysis.weighted_homophily(view, labels, flag))
                out[model] = {k: summarize(v)[0] for k, v in scores.items()}
            return out

        return self._cached(f"diagnostics_b{self.budget}", run)


def timed_train(dataset: Dataset, hp: GlamHyperParams) -> tuple[float, int]:
    """Wall-clock seconds of one full training run, including feature and graph preparation."""
    start = time.perf_counter()
    _, report = train(dataset, hp)
    return time.perf_counter() - start, len(report.records)

