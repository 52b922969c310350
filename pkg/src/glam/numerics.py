"""Small numerical kernels shared by the affinity model and the GCN.

Dense matrices are float64 ``numpy`` arrays and sparse matrices are
``scipy.sparse`` CSR matrices. Everything here is full-batch and 64-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

EPS_LOG = 1e-12

# Named random sub-streams; every consumer of randomness draws from its own.
STREAMS = {
    "init_affinity": 1,
    "init_gcn": 2,
    "dropout_affinity": 3,
    "dropout_gcn": 4,
    "gumbel": 5,
    "split": 6,
    "sweep": 7,
    "noise": 8,
}


class DimensionError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class StateError(RuntimeError):
    pass


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Generator for one named sub-stream of a master seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[stream],)))


def as_csr(m) -> sp.csr_matrix:
    return m if sp.isspmatrix_csr(m) else sp.csr_matrix(m)


def spmm(a, b: np.ndarray) -> np.ndarray:
    """Sparse (or dense) times dense, returned dense."""
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    return np.asarray(out, dtype=np.float64)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row softmax with max subtraction. Rows that are entirely ``-inf`` map to zeros."""
    m = np.asarray(m, dtype=np.float64)
    row_max = m.max(axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(m - row_max)
    s = e.sum(axis=1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


def log_softmax_rows(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    row_max = m.max(axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    shifted = m - row_max
    total = np.exp(shifted).sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        lse = np.log(total)
    # rows with no finite entry stay -inf
    return shifted - np.where(total > 0, lse, 0.0)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the softmax input given the gradient w.r.t. its output."""
    inner = (grad_probs * probs).sum(axis=1, keepdims=True)
    return probs * (grad_probs - inner)


def relu(m: np.ndarray) -> np.ndarray:
    # the + 0.0 turns -0.0 into 0.0
    return np.maximum(m, 0.0) + 0.0


_MASK_LEVELS = 1 << 16


class DropMask(NamedTuple):
    keep: np.ndarray
    scale: float


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> DropMask | None:
    """Keep-mask and rescale factor, or None when nothing is dropped.

    Uniform draws are 16-bit, so the drop probability is ``rate`` rounded to
    a multiple of 2**-16; the scale uses that rounded probability, keeping
    the expectation exact.
    """
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return None
    threshold = min(int(round(rate * _MASK_LEVELS)), _MASK_LEVELS - 1)
    size = int(np.prod(shape))
    words = rng.bit_generator.random_raw((size + 3) // 4)
    draws = np.ascontiguousarray(words).view(np.uint16)[:size].reshape(shape)
    return DropMask(draws >= threshold, _MASK_LEVELS / (_MASK_LEVELS - threshold))


def apply_mask(m, mask: DropMask | None):
    if mask is None:
        return m
    if sp.issparse(m):
        out = m.copy()
        out.data = out.data * mask.keep
        out.data *= mask.scale
        return out
    out = m * mask.keep
    out *= mask.scale
    return out


def dropout(m, rate: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout. Sparse inputs only drop stored entries."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return m
    shape = m.data.shape if sp.issparse(m) else np.shape(m)
    return apply_mask(m, dropout_mask(shape, rate, rng))


def cross_entropy_rows(pred: np.ndarray, target: np.ndarray, row_mask=None) -> float:
    """Summed cross-entropy ``-sum target * log(pred + EPS_LOG)`` over the masked rows.

    The log is capped at 0 so a prediction of exactly 1 costs nothing rather
    than ``-EPS_LOG``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} and target {target.shape} differ")
    rows = np.arange(pred.shape[0]) if row_mask is None else np.asarray(row_mask, dtype=np.int64)
    t = target[rows]
    p = pred[rows]
    nz = t != 0
    return float(-(t[nz] * np.minimum(np.log(p[nz] + EPS_LOG), 0.0)).sum())


def cross_entropy_grad(pred: np.ndarray, target: np.ndarray, row_mask=None) -> np.ndarray:
    """d cross_entropy_rows / d pred."""
    grad = np.zeros_like(pred, dtype=np.float64)
    rows = np.arange(pred.shape[0]) if row_mask is None else np.asarray(row_mask, dtype=np.int64)
    grad[rows] = -target[rows] / (pred[rows] + EPS_LOG)
    return grad


def glorot(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: dict[str, float] | None = None,
) -> None:
    """One in-place Adam update with bias correction.

    ``weight_decay`` maps a parameter name to the coefficient of its squared
    Frobenius penalty; ``2 * coef * W`` is added to the raw gradient.
    """
    weight_decay = weight_decay or {}
    state.step += 1
    t = state.step
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {w.shape}")
        coef = weight_decay.get(name, 0.0)
        if coef:
            g = g + 2.0 * coef * w
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m, v = state.m[name], state.v[name]
        if m.shape != w.shape:
            raise DimensionError(f"optimizer state for {name} has shape {m.shape}, parameter {w.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        w -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
