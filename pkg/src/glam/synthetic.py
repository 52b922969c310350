"""Synthetic bag-of-words datasets for smoke tests and timing.

Each class owns a block of "topic" words; a document draws most of its
words from its class block and the rest from the whole vocabulary, so
kNN graphs built on it are homophilous but noisy.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from glam.data import Dataset, DatasetSplit


def make_synthetic_dataset(
    n: int = 400,
    d: int = 300,
    num_classes: int = 4,
    words_per_node: int = 18,
    topic_fraction: float = 0.35,
    train_per_class: int = 20,
    num_val: int = 100,
    num_test: int = 200,
    seed: int = 0,
) -> Dataset:
    rng = np.random.default_rng(seed)
    labels = rng.integers(num_classes, size=n)
    block = d // num_classes
    rows, cols = [], []
    for i in range(n):
        n_topic = rng.binomial(words_per_node, topic_fraction)
        topic = labels[i] * block + rng.integers(block, size=n_topic)
        background = rng.integers(d, size=words_per_node - n_topic)
        words = np.unique(np.concatenate([topic, background]))
        rows.append(np.full(words.size, i))
        cols.append(words)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    x = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, d))

    perm = rng.permutation(n)
    train = []
    for c in range(num_classes):
        members = perm[labels[perm] == c]
        train.extend(members[:train_per_class].tolist())
    rest = np.setdiff1d(perm, train, assume_unique=False)
    rest = rest[rng.permutation(rest.size)]
    val, test = rest[:num_val], rest[num_val : num_val + num_test]
    return Dataset(x, labels.astype(np.int64), DatasetSplit(np.array(train), val, test), num_classes)


def make_toy_separable(n_per_class: int = 10, d: int = 6, seed: int = 0) -> Dataset:
    """Two well-separated classes, ``2 * n_per_class`` nodes, every node labeled for training."""
    rng = np.random.default_rng(seed)
    n = 2 * n_per_class
    labels = np.repeat([0, 1], n_per_class)
    x = rng.uniform(0.0, 0.2, size=(n, d))
    half = d // 2
    x[labels == 0, :half] += 1.0
    x[labels == 1, half:] += 1.0
    train = np.arange(n)
    split = DatasetSplit(train[::2], train[1::2], np.array([], dtype=np.int64))
    return Dataset(sp.csr_matrix(x), labels.astype(np.int64), split, 2)
