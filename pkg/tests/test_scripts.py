import json
import pickle
import subprocess
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from glam.data import load_dataset, save_dataset
from glam.experiments import Experiments
from glam.synthetic import make_synthetic_dataset

SCRIPTS = Path(__file__).resolve().parents[1] / "scripts"


def _fake_planetoid(raw: Path):
    """12 nodes, 3 classes; node 8 and 10 sit inside the test range without rows (CiteSeer-style gap)."""
    rng = np.random.default_rng(0)
    n_all, test_idx = 7, [9, 7, 11]
    feats = {i: rng.random(5) + 0.1 for i in range(12)}
    lab = {i: i % 3 for i in range(12)}
    onehot = lambda ids: np.eye(3)[[lab[i] for i in ids]]  # noqa: E731
    tx_rows = test_idx  # stored in the order of the test.index file
    parts = {
        "x": sp.csr_matrix(np.array([feats[i] for i in range(3)])),
        "y": onehot(range(3)),
        "allx": sp.csr_matrix(np.array([feats[i] for i in range(n_all)])),
        "ally": onehot(range(n_all)),
        "tx": sp.csr_matrix(np.array([feats[i] for i in tx_rows])),
        "ty": onehot(tx_rows),
        "graph": {0: [1, 7], 1: [0], 7: [0], 11: [9]},
    }
    raw.mkdir()
    for name, obj in parts.items():
        with open(raw / f"ind.toy.{name}", "wb") as fh:
            pickle.dump(obj, fh)
    (raw / "ind.toy.test.index").write_text("\n".join(map(str, test_idx)) + "\n")
    return feats, lab


def test_convert_planetoid(tmp_path):
    feats, lab = _fake_planetoid(tmp_path / "raw")
    out = tmp_path / "toy"
    proc = subprocess.run([sys.executable, str(SCRIPTS / "convert_planetoid.py"), "--raw", str(tmp_path / "raw"),
                           "--name", "toy", "--out", str(out), "--val", "2"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    ds = load_dataset(out)
    assert ds.n == 12 and ds.num_classes == 3
    np.testing.assert_array_equal(ds.split.train, [0, 1, 2])
    np.testing.assert_array_equal(ds.split.val, [3, 4])
    np.testing.assert_array_equal(ds.split.test, [7, 9, 11])
    dense = ds.features.toarray()
    for i in (0, 5, 7, 9, 11):
        np.testing.assert_allclose(dense[i], feats[i])
        assert ds.labels[i] == lab[i]
    assert not dense[8].any() and not dense[10].any()


def test_experiments_pipeline(tmp_path, monkeypatch):
    ds = make_synthetic_dataset(n=120, d=40, num_classes=3, train_per_class=6, num_val=30, num_test=40, seed=2)
    save_dataset(ds, tmp_path / "data" / "syn")
    monkeypatch.setenv("GLAM_DATA_DIR", str(tmp_path / "data"))
    exp = Experiments("syn", cache=tmp_path / "cache", budget=2)
    hp = exp.tuned("gcn-knn")
    assert hp.use_affinity is False
    first = exp.accuracy("glam")
    assert len(first["accuracies"]) == 5
    # a second instance answers from the cache without retraining
    again = Experiments("syn", cache=tmp_path / "cache", budget=2).accuracy("glam")
    assert again == json.loads(json.dumps(first))
    assert (tmp_path / "cache" / "syn" / "sweep_glam_b2.json").is_file()
