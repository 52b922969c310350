"""Plain two-layer GCN on a given (by default, uncropped kNN) graph.

This is the GLAM core with the affinity model switched off and no cropping,
so both share a single numerical implementation.
"""

from __future__ import annotations

from glam.data import Dataset
from glam.model import GlamHyperParams, prepare_inputs
from glam.trainer import SweepSpec, evaluate_seeds, train


def gcn_hyperparams(hp: GlamHyperParams) -> GlamHyperParams:
    return hp.replace(use_affinity=False, crop=False, w_ck=1.0, beta=0.0)


def gcn_inputs(dataset: Dataset, hp: GlamHyperParams, graph=None, boosted=None):
    hp = gcn_hyperparams(hp)
    return prepare_inputs(dataset, hp, dataset.labels[dataset.split.train], boosted=boosted, graph=graph)


def gcn_train(dataset: Dataset, graph, hp: GlamHyperParams, boosted=None, evaluate_test: bool = True):
    """Train ``softmax(G' relu(G' X W3) W4)`` on ``graph`` (kNN on the configured features if None)."""
    hp = gcn_hyperparams(hp)
    inputs = gcn_inputs(dataset, hp, graph=graph, boosted=boosted)
    return train(dataset, hp, inputs=inputs, evaluate_test=evaluate_test)


def gcn_evaluate_seeds(dataset: Dataset, graph, hp: GlamHyperParams, seeds, boosted=None, reports=None):
    hp = gcn_hyperparams(hp)
    inputs = gcn_inputs(dataset, hp, graph=graph, boosted=boosted)
    return evaluate_seeds(dataset, hp, seeds, inputs=inputs, reports=reports)


# hyperparameters a plain GCN actually uses; the rest stay pinned by gcn_hyperparams
GCN_SWEEP_KEYS = ("alpha_c", "lr", "dropout_c", "k", "hidden_c")


def gcn_sweep_spec(spec: SweepSpec) -> SweepSpec:
    """Restrict a GLAM search space to the knobs of the GCN-kNN baseline."""
    ranges = {k: v for k, v in spec.ranges.items() if k in GCN_SWEEP_KEYS}
    return SweepSpec(ranges=ranges, budget=spec.budget, seeds_per_trial=spec.seeds_per_trial, seed=spec.seed)
