"""Full-batch training with early stopping, multi-seed evaluation and random search."""

from __future__ import annotations

import json
import logging
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from glam.data import Dataset, boosted_features
from glam.graphs import knn_graph
from glam.model import (
    GlamHyperParams,
    GlamParams,
    ModelInputs,
    Rngs,
    accuracy,
    glam_backward,
    glam_forward,
    glam_loss,
    init_params,
    prepare_inputs,
)
from glam.numerics import AdamState, adam_step, make_rng

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class LabelAccessError(RuntimeError):
    pass


class GuardedLabels:
    """Hands out train/val labels freely and test labels once, after :meth:`release_test`."""

    def __init__(self, dataset: Dataset):
        self._labels = dataset.labels
        self._split = dataset.split
        self._released = False
        self._test_reads = 0

    def train(self) -> np.ndarray:
        return self._labels[self._split.train]

    def val(self) -> np.ndarray:
        return self._labels[self._split.val]

    def release_test(self) -> None:
        self._released = True

    def test(self) -> np.ndarray:
        if not self._released:
            raise LabelAccessError("test labels read before training finished")
        if self._test_reads:
            raise LabelAccessError("test labels may be read only once per run")
        self._test_reads += 1
        return self._labels[self._split.test]


@dataclass
class EpochRecord:
    epoch: int
    loss_c: float
    loss_a: float
    total: float
    val_acc: float


@dataclass
class TrainReport:
    seed: int
    hyperparams: dict
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = 0.0
    best_total_loss: float = math.inf
    test_acc: float | None = None
    diverged: bool = False
    wall_clock_seconds: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_clock_seconds")
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def curve_csv(self) -> str:
        lines = ["epoch,loss_c,loss_a,total,val_acc"]
        lines += [f"{r.epoch},{r.loss_c!r},{r.loss_a!r},{r.total!r},{r.val_acc!r}" for r in self.records]
        return "\n".join(lines) + "\n"


def train(
    dataset: Dataset,
    hp: GlamHyperParams,
    inputs: ModelInputs | None = None,
    evaluate_test: bool = True,
    boosted=None,
) -> tuple[GlamParams, TrainReport]:
    """Train one model; parameters are restored to the best validation epoch.

    Stops after ``hp.patience`` epochs without a strictly better validation
    accuracy, or after ``hp.epochs``. A non-finite loss raises
    :class:`DivergenceError` carrying the partial report.
    """
    hp.validate()
    start = time.perf_counter()
    guard = GuardedLabels(dataset)
    if inputs is None:
        inputs = prepare_inputs(dataset, hp, guard.train(), boosted=boosted)
    params = init_params(hp, inputs.x_affinity.shape[1], inputs.x_gcn.shape[1], inputs.labeled, inputs.num_classes)
    state = AdamState(beta1=hp.adam_beta1, beta2=hp.adam_beta2, eps=hp.adam_eps)
    decay = {"w1": hp.alpha_a, "w2": hp.alpha_a, "w3": hp.alpha_c, "w4": hp.alpha_c}
    rngs = Rngs.from_seed(hp.seed)
    val_nodes, val_labels = dataset.split.val, guard.val()

    report = TrainReport(seed=hp.seed, hyperparams=hp.to_dict())
    best = params.copy()
    fixed_selection = None
    for epoch in range(1, hp.epochs + 1):
        result = glam_forward(params, hp, inputs, training=True, rngs=rngs, fixed_selection=fixed_selection)
        if hp.resample == "once" and fixed_selection is None:
            fixed_selection = result.cache["selection"]
        total, parts = glam_loss(result, inputs, hp, params)
        if not math.isfinite(total):
            report.diverged = True
            report.wall_clock_seconds = time.perf_counter() - start
            raise DivergenceError(f"non-finite loss at epoch {epoch}", report)
        grads = glam_backward(result, params, hp, inputs)
        adam_step(params.arrays(), grads, state, hp.lr, decay)

        z_c = glam_forward(params, hp, inputs, training=False).z_c
        val_acc = accuracy(z_c, val_labels, val_nodes)
        report.records.append(EpochRecord(epoch, parts["loss_c"], parts["loss_a"], total, val_acc))
        if val_acc > report.best_val_acc or report.best_epoch == 0:
            report.best_epoch = epoch
            report.best_val_acc = val_acc
            report.best_total_loss = total
            best = params.copy()
        elif epoch - report.best_epoch >= hp.patience:
            break

    if evaluate_test and dataset.split.test.size:
        guard.release_test()
        z_c = glam_forward(best, hp, inputs, training=False).z_c
        report.test_acc = accuracy(z_c, guard.test(), dataset.split.test)
    report.wall_clock_seconds = time.perf_counter() - start
    return best, report


@dataclass
class SeedSummary:
    mean: float
    std: float
    accuracies: list[float]
    seeds: list[int]
    failed_seeds: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(values: list[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    if not values:
        return math.nan, math.nan
    # statistics works in exact arithmetic: identical runs give std exactly 0
    # and the result does not depend on seed order
    vals = [float(v) for v in values]
    std = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return float(statistics.mean(vals)), std


def evaluate_seeds(dataset: Dataset, hp: GlamHyperParams, seeds, inputs=None, boosted=None, reports=None):
    """Train once per seed and summarize test accuracy at the best validation epoch."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if inputs is None and hp.boosted and boosted is None:
        boosted = boosted_features(dataset.features)
    if inputs is None:
        inputs = prepare_inputs(dataset, hp, dataset.labels[dataset.split.train], boosted=boosted)
    accs, failed = [], []
    for seed in seeds:
        try:
            _, rep = train(dataset, hp.replace(seed=seed), inputs=inputs)
        except DivergenceError as err:
            log.warning("seed %d diverged: %s", seed, err)
            failed.append(seed)
            if reports is not None and err.report is not None:
                reports.append(err.report)
            continue
        accs.append(rep.test_acc)
        if reports is not None:
            reports.append(rep)
    mean, std = summarize(accs)
    return SeedSummary(mean, std, accs, seeds, failed)


# --- random search -----------------------------------------------------------


@dataclass
class SweepSpec:
    """Search space. Each entry is ``("log", lo, hi)``, ``("uniform", lo, hi)`` or ``("choice", [..])``."""

    ranges: dict = field(
        default_factory=lambda: {
            "alpha_a": ("log", 1e-5, 1e4),
            "alpha_c": ("log", 1e-5, 1e4),
            "lr": ("log", 1e-3, 1e0),
            "dropout_a": ("uniform", 0.0, 1.0),
            "dropout_c": ("uniform", 0.0, 1.0),
            "w_ck": ("uniform", 0.0, 1.0),
            "beta": ("log", 1e-2, 1e2),
            "k": ("choice", [5, 10, 15, 20]),
            "hidden_a": ("choice", [32, 64, 128, 256]),
            "hidden_c": ("choice", [16, 32, 64, 128]),
        }
    )
    budget: int = 200
    seeds_per_trial: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if self.seeds_per_trial < 1:
            raise ValueError("seeds_per_trial must be at least 1")
        known = set(GlamHyperParams().to_dict())
        for name, spec in self.ranges.items():
            if name not in known:
                raise ValueError(f"unknown hyperparameter {name!r} in sweep ranges")
            kind = spec[0]
            if kind in ("log", "uniform"):
                lo, hi = spec[1], spec[2]
                if not lo < hi or (kind == "log" and lo <= 0):
                    raise ValueError(f"bad range for {name}: {spec}")
            elif kind == "choice":
                if not spec[1]:
                    raise ValueError(f"empty choice list for {name}")
            else:
                raise ValueError(f"unknown range kind {kind!r} for {name}")

    def sample(self, rng: np.random.Generator) -> dict:
        out = {}
        for name in sorted(self.ranges):
            kind, *args = self.ranges[name]
            if kind == "log":
                value = float(np.exp(rng.uniform(np.log(args[0]), np.log(args[1]))))
            elif kind == "uniform":
                # open interval: resample the (measure-zero) endpoints
                value = float(rng.uniform(args[0], args[1]))
                while value <= args[0] or value >= args[1]:
                    value = float(rng.uniform(args[0], args[1]))
            else:
                choices = args[0]
                value = choices[int(rng.integers(len(choices)))]
            out[name] = value
        return out

    def to_dict(self) -> dict:
        return {"ranges": {k: list(v) for k, v in self.ranges.items()}, "budget": self.budget,
                "seeds_per_trial": self.seeds_per_trial, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> SweepSpec:
        spec = cls()
        if "ranges" in d:
            spec.ranges = {k: tuple(v) for k, v in d["ranges"].items()}
        for key in ("budget", "seeds_per_trial", "seed"):
            if key in d:
                setattr(spec, key, int(d[key]))
        return spec


def _run_trial(args):
    index, dataset, hp, seeds, boosted, graph = args
    val_accs, losses, failed = [], [], 0
    inputs = prepare_inputs(dataset, hp, dataset.labels[dataset.split.train], boosted=boosted, graph=graph)
    for seed in seeds:
        try:
            _, rep = train(dataset, hp.replace(seed=seed), inputs=inputs, evaluate_test=False)
        except (DivergenceError, FloatingPointError):
            failed += 1
            continue
        val_accs.append(rep.best_val_acc)
        losses.append(rep.best_total_loss)
    return {
        "trial": index,
        "hyperparams": hp.to_dict(),
        "val_acc": float(np.mean(val_accs)) if val_accs else 0.0,
        "total_loss": float(np.mean(losses)) if losses else math.inf,
        "failed_seeds": failed,
    }


def default_workers() -> int:
    env = os.environ.get("GLAM_WORKERS")
    return max(1, int(env)) if env else 1


def sweep(dataset: Dataset, spec: SweepSpec, base: GlamHyperParams | None = None, workers: int | None = None):
    """Seeded random search ranked by mean validation accuracy (ties: lower loss).

    Returns ``(best_hyperparams, leaderboard)``; the leaderboard is sorted.
    """
    spec.validate()
    base = base or GlamHyperParams()
    workers = workers or default_workers()
    rng = make_rng(spec.seed, "sweep")
    configs = [base.replace(**spec.sample(rng)) for _ in range(spec.budget)]
    boosted = boosted_features(dataset.features) if base.boosted else None
    x_knn = boosted if base.boosted else dataset.features
    graphs = {k: knn_graph(x_knn, k) for k in sorted({c.k for c in configs})}
    seeds = list(range(base.seed, base.seed + spec.seeds_per_trial))
    jobs = [(i, dataset, c, seeds, boosted, graphs[c.k]) for i, c in enumerate(configs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_trial, jobs))
    else:
        rows = [_run_trial(j) for j in jobs]
    rows.sort(key=lambda r: (-r["val_acc"], r["total_loss"], r["trial"]))
    best = GlamHyperParams.from_dict(rows[0]["hyperparams"])
    return best, rows
