"""Graph learning by modeling affinity to labeled nodes.

Semi-supervised node classification where the graph is learned jointly
with a two-layer GCN: a cropped cosine kNN graph is mixed with a graph
sampled from a label-affinity model.
"""

from glam.data import (
    Dataset,
    DatasetSplit,
    boosted_features,
    load_dataset,
    save_dataset,
)
from glam.model import (
    GlamHyperParams,
    GlamParams,
    glam_backward,
    glam_forward,
    glam_loss,
    predict,
)
from glam.trainer import SweepSpec, TrainReport, evaluate_seeds, sweep, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DatasetSplit",
    "GlamHyperParams",
    "GlamParams",
    "SweepSpec",
    "TrainReport",
    "boosted_features",
    "evaluate_seeds",
    "glam_backward",
    "glam_forward",
    "glam_loss",
    "load_dataset",
    "predict",
    "save_dataset",
    "sweep",
    "train",
]
