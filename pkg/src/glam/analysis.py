"""Graph-quality metrics and the diagnostic experiments built on them."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from glam.baseline import gcn_evaluate_seeds
from glam.data import Dataset, boosted_features
from glam.graphs import add_noisy_edges, knn_graph, perfect_knn, remove_good_edges
from glam.model import GlamHyperParams, glam_forward, prepare_inputs
from glam.numerics import make_rng
from glam.trainer import evaluate_seeds, summarize

log = logging.getLogger(__name__)


def _heads(view):
    if isinstance(view, (list, tuple)):
        return list(view)
    return [view]


def _entries(a, exclude_self_loops):
    coo = sp.coo_matrix(a)
    keep = coo.data != 0
    if exclude_self_loops:
        keep &= coo.row != coo.col
    if (coo.data[keep] < 0).any():
        raise ValueError("attention weights must be nonnegative")
    return coo.row[keep], coo.col[keep], coo.data[keep]


def bad_neighbor_ratio(view, labels, exclude_self_loops: bool = False) -> float:
    """Percent of nodes with any cross-label weight whose cross-label weight strictly exceeds
    their same-label weight, averaged over heads.

    Row ``i`` of each head holds the weights node ``i`` places on its neighbors.
    """
    labels = np.asarray(labels)
    ratios = []
    for a in _heads(view):
        n = a.shape[0]
        rows, cols, w = _entries(a, exclude_self_loops)
        bad = labels[rows] != labels[cols]
        bw = np.bincount(rows[bad], w[bad], minlength=n)
        gw = np.bincount(rows[~bad], w[~bad], minlength=n)
        exposed = int((bw > 0).sum())
        if exposed == 0:
            log.warning("no node has a cross-label neighbor; bad neighbor ratio is 0")
            ratios.append(0.0)
            continue
        ratios.append(100.0 * float((bw > gw).sum()) / exposed)
    return float(np.mean(ratios))


def weighted_homophily(view, labels, exclude_self_loops: bool = False) -> float:
    """Percent of total weight sitting on same-label entries, averaged over heads."""
    labels = np.asarray(labels)
    scores = []
    for a in _heads(view):
        rows, cols, w = _entries(a, exclude_self_loops)
        total = w.sum()
        if total == 0:
            log.warning("weighted homophily of an empty view is reported as 0")
            scores.append(0.0)
            continue
        scores.append(100.0 * float(w[labels[rows] == labels[cols]].sum() / total))
    return float(np.mean(scores))


def laplacian_view(params, hp: GlamHyperParams, dataset: Dataset, boosted=None):
    """The normalized graph a trained model propagates over at evaluation time."""
    inputs = prepare_inputs(dataset, hp, dataset.labels[dataset.split.train], boosted=boosted)
    return glam_forward(params, hp, inputs, training=False).laplacian


@dataclass
class CurvePoint:
    x: float
    mean: float
    std: float
    n_seeds: int
    failed_seeds: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def curve_csv(points: list[CurvePoint]) -> str:
    lines = ["x,mean,std,n_seeds"]
    lines += [f"{p.x!r},{p.mean!r},{p.std!r},{p.n_seeds}" for p in points]
    return "\n".join(lines) + "\n"


def noise_experiment(
    dataset: Dataset, hp: GlamHyperParams, fractions, mode: str, seeds, boosted=None
) -> list[CurvePoint]:
    """Accuracy of a plain GCN on a perfect kNN graph after adding noise or removing good edges.

    Uses the ground-truth labels of every node to edit the graph, so it is an
    analysis tool only.
    """
    if mode not in ("add_noise", "remove_good"):
        raise ValueError(f"mode must be add_noise or remove_good, got {mode!r}")
    if hp.boosted and boosted is None:
        boosted = boosted_features(dataset.features)
    x = boosted if hp.boosted else dataset.features
    perfect = perfect_knn(knn_graph(x, hp.k), dataset.labels)
    surgery = add_noisy_edges if mode == "add_noise" else remove_good_edges
    points = []
    for frac in fractions:
        accs, failed = [], 0
        for seed in seeds:
            graph = surgery(perfect, frac, dataset.labels, make_rng(seed, "noise"))
            summary = gcn_evaluate_seeds(dataset, graph, hp, [seed], boosted=boosted)
            accs += summary.accuracies
            failed += len(summary.failed_seeds)
        mean, std = summarize(accs)
        points.append(CurvePoint(float(frac), mean, std, len(accs), failed))
    return points


def affinity_weight_sweep(dataset: Dataset, hp: GlamHyperParams, weights, seeds, boosted=None) -> list[CurvePoint]:
    """GLAM test accuracy with the affinity graph weight ``w_A`` pinned to each value."""
    if hp.boosted and boosted is None:
        boosted = boosted_features(dataset.features)
    base_inputs = None
    points = []
    for w_a in weights:
        if not 0.0 <= w_a <= 1.0:
            raise ValueError(f"affinity weights must lie in [0, 1], got {w_a}")
        point_hp = hp.replace(w_ck=1.0 - float(w_a))
        if base_inputs is None:
            base_inputs = prepare_inputs(dataset, point_hp, dataset.labels[dataset.split.train], boosted=boosted)
        summary = evaluate_seeds(dataset, point_hp, seeds, inputs=base_inputs)
        points.append(CurvePoint(float(w_a), summary.mean, summary.std, len(summary.accuracies),
                                 len(summary.failed_seeds)))
    return points
