"""Label-affinity model: a two-layer network giving each node a distribution
over the labeled nodes, plus the graph sampled from it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from glam.numerics import (
    DimensionError,
    DropMask,
    ParameterError,
    apply_mask,
    cross_entropy_rows,
    dropout_mask,
    log_softmax_rows,
    relu,
    softmax_rows,
)

# Below this temperature the relaxed sample is numerically one-hot and the
# straight-through identity replaces its Jacobian.
ST_TEMPERATURE_FLOOR = 1e-3


@dataclass
class AffinityModel:
    w1: np.ndarray
    w2: np.ndarray
    labeled: np.ndarray
    dropout: float = 0.0

    def __post_init__(self):
        self.labeled = np.asarray(self.labeled, dtype=np.int64)
        if self.w2.shape[1] != self.labeled.size:
            raise DimensionError(f"W2 has {self.w2.shape[1]} columns for {self.labeled.size} labeled nodes")


@dataclass
class AffinityTargets:
    matrix: np.ndarray
    active: np.ndarray  # rows with at least one same-class partner


def self_mask(n: int, labeled: np.ndarray) -> np.ndarray:
    """Boolean n x l matrix, True where a labeled node would point at itself."""
    mask = np.zeros((n, labeled.size), dtype=bool)
    mask[labeled, np.arange(labeled.size)] = True
    return mask


@dataclass
class AffinityCache:
    x_in: object
    in_mask: DropMask | None
    hidden_pre: np.ndarray
    hidden: np.ndarray
    hid_mask: DropMask | None
    forbidden: np.ndarray
    log_z: np.ndarray
    z: np.ndarray


def affinity_forward(model: AffinityModel, x, training: bool = False, rng=None, cache: bool = False):
    """Row-stochastic n x l affinity matrix; a labeled node never gets mass on itself."""
    if x.shape[1] != model.w1.shape[0]:
        raise DimensionError(f"features have {x.shape[1]} columns, W1 expects {model.w1.shape[0]}")
    rate = model.dropout if training else 0.0
    in_mask = dropout_mask(x.data.shape if sp.issparse(x) else x.shape, rate, rng) if rate else None
    x_in = apply_mask(x, in_mask)
    hidden_pre = np.asarray(x_in @ model.w1)
    hidden = relu(hidden_pre)
    hid_mask = dropout_mask(hidden.shape, rate, rng) if rate else None
    hidden_d = apply_mask(hidden, hid_mask)
    logits = hidden_d @ model.w2
    forbidden = self_mask(x.shape[0], model.labeled)
    logits = np.where(forbidden, -np.inf, logits)
    log_z = log_softmax_rows(logits)
    z = softmax_rows(logits)
    if cache:
        return z, AffinityCache(x_in, in_mask, hidden_pre, hidden_d, hid_mask, forbidden, log_z, z)
    return z


def affinity_backward(model: AffinityModel, c: AffinityCache, grad_logits: np.ndarray):
    """Gradients of W1 and W2 given d loss / d (pre-softmax logits)."""
    grad_logits = np.where(c.forbidden, 0.0, grad_logits)
    g_w2 = c.hidden.T @ grad_logits
    g_hidden = grad_logits @ model.w2.T
    if c.hid_mask is not None:
        g_hidden = apply_mask(g_hidden, c.hid_mask)
    g_hidden = g_hidden * (c.hidden_pre > 0)
    g_w1 = np.asarray(c.x_in.T @ g_hidden)
    return g_w1, g_w2


def build_affinity_targets(train_labels) -> AffinityTargets:
    """Row-normalized same-label indicator over the labeled set, zero diagonal."""
    y = np.asarray(train_labels)
    same = (y[:, None] == y[None, :]).astype(np.float64)
    np.fill_diagonal(same, 0.0)
    sums = same.sum(axis=1, keepdims=True)
    matrix = np.divide(same, sums, out=np.zeros_like(same), where=sums > 0)
    return AffinityTargets(matrix, np.flatnonzero(sums.ravel() > 0))


def affinity_loss(z_a: np.ndarray, targets: AffinityTargets, labeled: np.ndarray) -> float:
    """Summed cross-entropy of the labeled rows against their affinity targets."""
    rows = z_a[np.asarray(labeled)]
    return cross_entropy_rows(rows, targets.matrix, targets.active)


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    return rng.gumbel(size=shape)


@dataclass
class AffinitySample:
    choice: np.ndarray  # chosen labeled column per row, -1 if none allowed
    onehot: np.ndarray  # n x l hard (or relaxed) selection matrix
    noise: np.ndarray | None
    soft: np.ndarray | None  # relaxed sample softmax((log z + g) / tau)
    temperature: float


def _relaxed(log_z, noise, temperature):
    return softmax_rows((log_z + noise) / temperature)


def choose_columns(z_a, mode="sample", temperature=1e-10, rng=None, noise=None, log_z=None) -> AffinitySample:
    """Pick one labeled column per row, either by argmax or by Gumbel-argmax."""
    if temperature <= 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    if log_z is None:
        with np.errstate(divide="ignore"):
            log_z = np.log(z_a)
    allowed = np.isfinite(log_z)
    n, l = z_a.shape
    if mode == "argmax":
        scores = np.where(allowed, z_a, -np.inf)
        noise = None
    elif mode == "sample":
        if noise is None:
            noise = gumbel_noise((n, l), rng)
        scores = log_z + noise
    else:
        raise ParameterError(f"unknown sampling mode {mode!r}")
    choice = np.argmax(scores, axis=1)
    has_any = allowed.any(axis=1)
    choice = np.where(has_any, choice, -1)
    onehot = np.zeros((n, l))
    rows = np.flatnonzero(has_any)
    onehot[rows, choice[rows]] = 1.0
    soft = _relaxed(log_z, noise, temperature) if noise is not None and temperature >= ST_TEMPERATURE_FLOOR else None
    return AffinitySample(choice, onehot, noise, soft, temperature)


def selection_to_graph(selection: np.ndarray, labeled: np.ndarray, clip: bool = False) -> sp.csr_matrix:
    """``P + P^T`` where ``P = [selection : 0]`` placed on the labeled columns."""
    n = selection.shape[0]
    r, c = np.nonzero(selection)
    p = sp.csr_matrix((selection[r, c], (r, labeled[c])), shape=(n, n))
    g = (p + p.T).tocsr()
    g.sum_duplicates()
    g.eliminate_zeros()
    if clip:
        g.data = np.minimum(g.data, 1.0)
    g.sort_indices()
    return g


def sample_affinity_graph(z_a, labeled, mode="sample", temperature=1e-10, rng=None, noise=None, clip=False):
    """Symmetric affinity graph linking every node to its chosen labeled node.

    Returns ``(graph, sample)``; mutual choices accumulate to weight 2.
    """
    sample = choose_columns(z_a, mode=mode, temperature=temperature, rng=rng, noise=noise)
    return selection_to_graph(sample.onehot, np.asarray(labeled), clip=clip), sample


def straight_through_grad(upstream, z_a, onehot, temperature, noise=None, log_z=None) -> np.ndarray:
    """Gradient w.r.t. ``log Z^A`` for a hard Gumbel sample.

    At usable temperatures the hard sample is differentiated as the relaxed
    sample ``softmax((log Z^A + g) / tau)``. Below ``ST_TEMPERATURE_FLOOR``
    that Jacobian underflows, so the upstream gradient passes straight
    through on the chosen coordinate only.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if temperature < ST_TEMPERATURE_FLOOR or noise is None:
        return upstream * onehot
    if log_z is None:
        with np.errstate(divide="ignore"):
            log_z = np.log(z_a)
    soft = _relaxed(log_z, noise, temperature)
    inner = (upstream * soft).sum(axis=1, keepdims=True)
    return soft * (upstream - inner) / temperature


def log_softmax_backward(z: np.ndarray, grad_log_z: np.ndarray, forbidden: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given the gradient w.r.t. their log-softmax."""
    g = np.where(forbidden, 0.0, grad_log_z)
    return g - z * g.sum(axis=1, keepdims=True)
