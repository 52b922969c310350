"""Convert the public Planetoid citation files (ind.<name>.*) to the repo's TSV format.

    python scripts/convert_planetoid.py --raw path/to/planetoid/data --name cora --out data/cora

Uses the standard split: the first ``len(y)`` nodes train, the next 500
validate (--val), and the listed test indices test.  CiteSeer has test indices with no
feature row; those nodes get an all-zero feature row, label 0, and no split
membership, matching the usual preprocessing.
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from glam.data import Dataset, DatasetSplit, save_dataset
from glam.graphs import write_edges


def _load(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert(raw: Path, name: str, num_val: int = 500) -> tuple[Dataset, sp.csr_matrix]:
    _, y, tx, ty, allx, ally, graph = (_load(raw, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_idx = np.loadtxt(raw / f"ind.{name}.test.index", dtype=np.int64)
    order = np.sort(test_idx)
    lo, hi = order[0], order[-1]
    # tx rows follow the test.index file order; pad index gaps (CiteSeer) with empty rows
    tx_full = sp.lil_matrix((hi - lo + 1, tx.shape[1]))
    tx_full[order - lo] = tx
    ty_full = np.zeros((hi - lo + 1, ty.shape[1]))
    ty_full[order - lo] = ty
    features = sp.vstack([sp.csr_matrix(allx), sp.csr_matrix(tx_full)]).tolil()
    onehot = np.vstack([ally, ty_full])
    features[test_idx] = features[order]
    onehot[test_idx] = onehot[order]
    labels = np.where(onehot.any(axis=1), onehot.argmax(axis=1), 0).astype(np.int64)
    n = features.shape[0]
    split = DatasetSplit(np.arange(len(y)), np.arange(len(y), len(y) + num_val), order)
    ds = Dataset(sp.csr_matrix(features), labels, split, int(onehot.shape[1]))
    ds.validate()
    rows = [i for i, nbrs in graph.items() for j in nbrs if i < n and j < n]
    cols = [j for i, nbrs in graph.items() for j in nbrs if i < n and j < n]
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adj = ((adj + adj.T) > 0).astype(np.float64)
    adj.setdiag(0)
    adj.eliminate_zeros()
    return ds, adj


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--raw", required=True, help="directory holding the ind.<name>.* files")
    p.add_argument("--name", required=True, help="cora, citeseer or pubmed")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--val", type=int, default=500, help="validation nodes after the training block")
    args = p.parse_args(argv)
    try:
        ds, adj = convert(Path(args.raw), args.name, args.val)
    except FileNotFoundError as err:
        print(f"convert_planetoid: {err}", file=sys.stderr)
        return 1
    out = Path(args.out)
    save_dataset(ds, out)
    write_edges(adj, out / "citation_edges.tsv")
    print(f"{args.name}: {ds.n} nodes, {ds.d} features, {ds.num_classes} classes, "
          f"{ds.split.train.size}/{ds.split.val.size}/{ds.split.test.size} split -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
