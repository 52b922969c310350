"""Time one Cora-scale training run and a PubMed-scale boosted kNN build.

Uses real data under GLAM_DATA_DIR when present, otherwise synthetic data of
the same shape.
"""

import os
import sys
import time

from glam.data import boosted_features, load_dataset
from glam.experiments import dataset_dir, timed_train
from glam.graphs import knn_graph
from glam.model import GlamHyperParams
from glam.synthetic import make_synthetic_dataset


def main() -> int:
    path = dataset_dir("cora")
    ds = load_dataset(path) if path else make_synthetic_dataset(
        n=2708, d=1433, num_classes=7, words_per_node=18, num_val=500, num_test=1000)
    seconds, epochs = timed_train(ds, GlamHyperParams())
    print(f"{'Cora' if path else 'synthetic Cora-shape'} training: {seconds:.1f} s, {epochs} epochs, "
          f"{os.cpu_count()} core(s)")
    path = dataset_dir("pubmed")
    x = load_dataset(path).features if path else make_synthetic_dataset(
        n=19717, d=500, num_classes=3, words_per_node=50, num_val=500, num_test=1000).features
    start = time.perf_counter()
    g = knn_graph(boosted_features(x), 10)
    print(f"{'PubMed' if path else 'synthetic PubMed-shape'} boosted kNN (k=10): "
          f"{time.perf_counter() - start:.1f} s, {g.nnz} entries")
    return 0


if __name__ == "__main__":
    sys.exit(main())
