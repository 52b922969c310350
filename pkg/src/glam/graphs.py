"""Graph construction and surgery.

Graphs are ``n x n`` ``scipy.sparse.csr_matrix`` adjacencies with a fixed
orientation: entry ``(i, j)`` is an edge from source ``j`` into destination
``i``. Row ``i`` therefore lists the in-neighbors of ``i`` and the in-degree
is a row sum.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from glam.numerics import ParameterError

log = logging.getLogger(__name__)

KNN_BLOCK = 1024


def _clean(g) -> sp.csr_matrix:
    g = sp.csr_matrix(g, dtype=np.float64)
    g.sum_duplicates()
    g.eliminate_zeros()
    g.sort_indices()
    return g


def empty_graph(n: int) -> sp.csr_matrix:
    return sp.csr_matrix((n, n), dtype=np.float64)


def _row_normalize(x) -> np.ndarray | sp.csr_matrix:
    if sp.issparse(x):
        x = sp.csr_matrix(x, dtype=np.float64)
        norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    else:
        x = np.asarray(x, dtype=np.float64)
        norms = np.linalg.norm(x, axis=1)
    inv = np.zeros_like(norms)
    np.divide(1.0, norms, out=inv, where=norms > 0)
    if sp.issparse(x):
        return sp.diags(inv) @ x, norms > 0
    return x * inv[:, None], norms > 0


def _top_k_lowest_index(sims: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k largest entries per row, ties going to lower indices.

    ``sims`` must have ``-inf`` at excluded positions and at least ``k`` finite
    entries per row that should be considered.
    """
    n_cols = sims.shape[1]
    kth = np.partition(sims, n_cols - k, axis=1)[:, n_cols - k]
    greater = sims > kth[:, None]
    equal = sims == kth[:, None]
    need = k - greater.sum(axis=1)
    # among ties with the k-th value keep the lowest column indices
    equal &= np.cumsum(equal, axis=1) <= need[:, None]
    chosen = greater | equal
    return chosen


def knn_graph(x, k: int, block: int = KNN_BLOCK) -> sp.csr_matrix:
    """Exact cosine kNN graph, union-symmetrized, unit weights.

    Each node receives edges from its ``k`` most cosine-similar other nodes
    (ties broken by ascending index). Nodes with an all-zero feature row
    take no part.
    """
    n = x.shape[0]
    if k < 1 or k >= n:
        raise ParameterError(f"k must satisfy 1 <= k < n={n}, got {k}")
    xn, nonzero = _row_normalize(x)
    if not nonzero.all():
        log.warning("%d nodes have all-zero features and get no kNN edges", int((~nonzero).sum()))
    active = np.flatnonzero(nonzero)
    k_eff = min(k, max(active.size - 1, 0))
    if k_eff < k:
        log.warning("only %d nodes with features; using k=%d", active.size, k_eff)
    xt = xn.T.tocsr() if sp.issparse(xn) else np.ascontiguousarray(xn.T)
    rows, cols = [], []
    if k_eff > 0:
        for start in range(0, n, block):
            idx = np.arange(start, min(start + block, n))
            idx = idx[nonzero[idx]]
            if idx.size == 0:
                continue
            sims = xn[idx] @ xt
            sims = sims.toarray() if sp.issparse(sims) else np.asarray(sims)
            sims[:, ~nonzero] = -np.inf
            sims[np.arange(idx.size), idx] = -np.inf
            chosen = _top_k_lowest_index(sims, k_eff)
            r, c = np.nonzero(chosen)
            rows.append(idx[r])
            cols.append(c)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    g = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    return _clean(g.maximum(g.T))


def crop_incoming_to_labeled(g, labeled) -> sp.csr_matrix:
    """Remove every edge whose destination is a labeled node."""
    g = _clean(g)
    keep = np.ones(g.shape[0])
    keep[np.asarray(labeled, dtype=np.int64)] = 0.0
    return _clean(sp.diags(keep) @ g)


def combine_graphs(g_a, g_ck, w_a: float) -> sp.csr_matrix:
    """Convex combination ``w_a * g_a + (1 - w_a) * g_ck``."""
    if g_a.shape != g_ck.shape:
        raise ParameterError(f"graph shapes differ: {g_a.shape} vs {g_ck.shape}")
    if not 0.0 <= w_a <= 1.0:
        raise ParameterError(f"w_a must lie in [0, 1], got {w_a}")
    if w_a == 0.0:
        return _clean(g_ck)
    if w_a == 1.0:
        return _clean(g_a)
    return _clean(w_a * sp.csr_matrix(g_a) + (1.0 - w_a) * sp.csr_matrix(g_ck))


def indegree_laplacian(g, return_degree: bool = False):
    """``D_in^-1/2 (G + I) D_in^-1/2`` with ``D_in`` the row sums of ``G + I``."""
    n = g.shape[0]
    a = _clean(sp.csr_matrix(g) + sp.identity(n, format="csr"))
    deg = np.asarray(a.sum(axis=1)).ravel()
    s = 1.0 / np.sqrt(deg)
    lap = _clean(sp.diags(s) @ a @ sp.diags(s))
    if return_degree:
        return lap, deg
    return lap


def _off_diagonal_coo(g) -> sp.coo_matrix:
    coo = sp.coo_matrix(g)
    off = coo.row != coo.col
    return sp.coo_matrix((coo.data[off], (coo.row[off], coo.col[off])), shape=coo.shape)


def homophily(g, labels) -> float:
    """Percentage of non-self-loop entries whose endpoints share a label."""
    coo = _off_diagonal_coo(g)
    coo = sp.coo_matrix((coo.data, (coo.row, coo.col)), shape=coo.shape)
    coo.sum_duplicates()
    nz = coo.data != 0
    rows, cols = coo.row[nz], coo.col[nz]
    if rows.size == 0:
        log.warning("homophily of an empty graph is reported as 0")
        return 0.0
    labels = np.asarray(labels)
    return 100.0 * float((labels[rows] == labels[cols]).sum()) / rows.size


def perfect_knn(g, labels) -> sp.csr_matrix:
    """Drop every entry joining nodes with different labels."""
    coo = sp.coo_matrix(_clean(g))
    labels = np.asarray(labels)
    same = labels[coo.row] == labels[coo.col]
    return _clean(sp.coo_matrix((coo.data[same], (coo.row[same], coo.col[same])), shape=coo.shape))


def undirected_pairs(g) -> np.ndarray:
    """Sorted array of unordered pairs ``(i, j)``, ``i < j``, present in either direction."""
    coo = _off_diagonal_coo(_clean(g))
    lo = np.minimum(coo.row, coo.col)
    hi = np.maximum(coo.row, coo.col)
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0) if lo.size else np.zeros((0, 2), dtype=np.int64)
    return pairs.astype(np.int64)


def _with_pairs(g, pairs, weight=1.0) -> sp.csr_matrix:
    n = g.shape[0]
    if len(pairs) == 0:
        return _clean(g)
    pairs = np.asarray(pairs, dtype=np.int64)
    r = np.concatenate([pairs[:, 0], pairs[:, 1]])
    c = np.concatenate([pairs[:, 1], pairs[:, 0]])
    extra = sp.csr_matrix((np.full(r.size, weight), (r, c)), shape=(n, n))
    return _clean(sp.csr_matrix(g) + extra)


def add_noisy_edges(g, fraction: float, labels, rng: np.random.Generator) -> sp.csr_matrix:
    """Add ``ceil(fraction * pairs)`` new symmetric unit edges between differently-labeled nodes.

    ``pairs`` is the number of undirected node pairs already connected.
    Candidates are sampled uniformly without replacement.
    """
    if fraction < 0:
        raise ParameterError(f"fraction must be >= 0, got {fraction}")
    labels = np.asarray(labels)
    n = g.shape[0]
    existing = undirected_pairs(g)
    wanted = math.ceil(fraction * len(existing))
    if wanted == 0:
        return _clean(g)
    counts = np.bincount(labels)
    cross_total = (n * n - int((counts.astype(np.int64) ** 2).sum())) // 2
    existing_cross = int((labels[existing[:, 0]] != labels[existing[:, 1]]).sum()) if len(existing) else 0
    available = cross_total - existing_cross
    if wanted > available:
        log.warning("only %d cross-label pairs available, %d requested", available, wanted)
        wanted = available
    if wanted == 0:
        return _clean(g)
    existing_keys = set((existing[:, 0] * n + existing[:, 1]).tolist())
    if wanted * 4 >= available:
        iu, ju = np.triu_indices(n, k=1)
        cand = (labels[iu] != labels[ju]) & ~np.isin(iu * n + ju, list(existing_keys))
        iu, ju = iu[cand], ju[cand]
        pick = rng.choice(iu.size, size=wanted, replace=False)
        new = np.stack([iu[pick], ju[pick]], axis=1)
    else:
        chosen: dict[int, None] = {}
        while len(chosen) < wanted:
            batch = rng.integers(0, n, size=(2 * (wanted - len(chosen)) + 16, 2))
            for a, b in batch.tolist():
                if a == b or labels[a] == labels[b]:
                    continue
                key = min(a, b) * n + max(a, b)
                if key in existing_keys or key in chosen:
                    continue
                chosen[key] = None
                if len(chosen) == wanted:
                    break
        keys = np.fromiter(chosen, dtype=np.int64)
        new = np.stack([keys // n, keys % n], axis=1)
    return _with_pairs(g, new)


def remove_good_edges(g, fraction: float, labels, rng: np.random.Generator) -> sp.csr_matrix:
    """Remove ``floor(fraction * good_pairs)`` same-label pairs (both directions), uniformly."""
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    labels = np.asarray(labels)
    g = _clean(g)
    pairs = undirected_pairs(g)
    good = pairs[labels[pairs[:, 0]] == labels[pairs[:, 1]]] if len(pairs) else pairs
    drop = math.floor(fraction * len(good))
    if drop == 0:
        return g
    victims = good[rng.choice(len(good), size=drop, replace=False)]
    lil = g.tolil()
    for a, b in victims.tolist():
        lil[a, b] = 0.0
        lil[b, a] = 0.0
    return _clean(lil.tocsr())


def write_edges(g, path) -> None:
    """Write ``dest src weight`` lines under a ``# n=<count>`` header."""
    coo = sp.coo_matrix(_clean(g))
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n={g.shape[0]}\n")
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}\n")


def read_edges(path) -> sp.csr_matrix:
    path = Path(path)
    n = None
    rows, cols, vals = [], [], []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("n="):
                    n = int(body[2:])
                continue
            fields = line.split()
            if len(fields) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'dest src weight'")
            i, j, w = int(fields[0]), int(fields[1]), float(fields[2])
            if (i, j) in seen:
                raise ValueError(f"{path}:{lineno}: duplicate entry ({i}, {j})")
            if not (np.isfinite(w) and w > 0):
                raise ValueError(f"{path}:{lineno}: weight must be finite and positive")
            seen.add((i, j))
            rows.append(i)
            cols.append(j)
            vals.append(w)
    if n is None:
        raise ValueError(f"{path}: missing '# n=<count>' header")
    if rows and (max(max(rows), max(cols)) >= n or min(min(rows), min(cols)) < 0):
        raise ValueError(f"{path}: node index outside [0, {n})")
    return _clean(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))
