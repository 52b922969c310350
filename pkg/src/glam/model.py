"""End-to-end GLAM: affinity graph + cropped kNN graph feeding a two-layer GCN.

The forward pass keeps every intermediate needed by :func:`glam_backward`,
which differentiates ``L_C + beta * L_A`` by hand for this fixed graph of
operations. Weight decay is added by the optimizer.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from glam import affinity as aff
from glam.graphs import (
    combine_graphs,
    crop_incoming_to_labeled,
    empty_graph,
    indegree_laplacian,
    knn_graph,
)
from glam.numerics import (
    ParameterError,
    StateError,
    apply_mask,
    cross_entropy_grad,
    cross_entropy_rows,
    dropout_mask,
    glorot,
    make_rng,
    relu,
    softmax_backward,
    softmax_rows,
)

CHECKPOINT_VERSION = 1


@dataclass
class GlamHyperParams:
    k: int = 10
    w_ck: float = 0.67
    beta: float = 1.0
    alpha_a: float = 5e-4
    alpha_c: float = 5e-4
    lr: float = 0.01
    dropout_a: float = 0.5
    dropout_c: float = 0.5
    hidden_a: int = 128
    hidden_c: int = 64
    temperature: float = 1e-10
    epochs: int = 500
    patience: int = 25
    seed: int = 0
    boosted: bool = True
    gcn_input: str = "boosted"  # raw | boosted
    resample: str = "per-epoch"  # per-epoch | once
    clip_affinity_weights: bool = False
    graph_mode: str = "hard"  # hard (Gumbel-argmax + straight-through) | relaxed
    straight_through: bool = True
    use_affinity: bool = True
    crop: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    @property
    def w_a(self) -> float:
        return 1.0 - self.w_ck

    def validate(self) -> None:
        if not 0.0 <= self.w_ck <= 1.0:
            raise ParameterError(f"w_ck must lie in [0, 1], got {self.w_ck}")
        if self.beta < 0 or self.alpha_a < 0 or self.alpha_c < 0:
            raise ParameterError("beta, alpha_a and alpha_c must be nonnegative")
        if self.lr <= 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        for name in ("dropout_a", "dropout_c"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie in [0, 1)")
        if self.temperature <= 0:
            raise ParameterError("temperature must be positive")
        if not 1 <= self.epochs <= 500:
            raise ParameterError(f"epochs must lie in [1, 500], got {self.epochs}")
        if self.patience < 1 or self.k < 1 or self.hidden_a < 1 or self.hidden_c < 1:
            raise ParameterError("patience, k and hidden sizes must be positive")
        if self.gcn_input not in ("raw", "boosted"):
            raise ParameterError(f"gcn_input must be raw or boosted, got {self.gcn_input!r}")
        if self.resample not in ("per-epoch", "once"):
            raise ParameterError(f"resample must be per-epoch or once, got {self.resample!r}")
        if self.graph_mode not in ("hard", "relaxed"):
            raise ParameterError(f"graph_mode must be hard or relaxed, got {self.graph_mode!r}")
        if self.graph_mode == "relaxed" and self.temperature < aff.ST_TEMPERATURE_FLOOR:
            raise ParameterError(f"relaxed graphs need temperature >= {aff.ST_TEMPERATURE_FLOOR}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> GlamHyperParams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> GlamHyperParams:
        return GlamHyperParams(**{**asdict(self), **changes})


@dataclass
class GlamParams:
    w3: np.ndarray
    w4: np.ndarray
    labeled: np.ndarray
    w1: np.ndarray | None = None
    w2: np.ndarray | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"w3": self.w3, "w4": self.w4}
        if self.w1 is not None:
            out["w1"] = self.w1
            out["w2"] = self.w2
        return out

    def copy(self) -> GlamParams:
        return GlamParams(
            self.w3.copy(),
            self.w4.copy(),
            self.labeled.copy(),
            None if self.w1 is None else self.w1.copy(),
            None if self.w2 is None else self.w2.copy(),
        )


def init_params(hp: GlamHyperParams, d_affinity: int, d_gcn: int, labeled, num_classes: int) -> GlamParams:
    labeled = np.asarray(labeled, dtype=np.int64)
    rng_c = make_rng(hp.seed, "init_gcn")
    w3 = glorot((d_gcn, hp.hidden_c), rng_c)
    w4 = glorot((hp.hidden_c, num_classes), rng_c)
    w1 = w2 = None
    if hp.use_affinity:
        rng_a = make_rng(hp.seed, "init_affinity")
        w1 = glorot((d_affinity, hp.hidden_a), rng_a)
        w2 = glorot((hp.hidden_a, labeled.size), rng_a)
    return GlamParams(w3, w4, labeled, w1, w2)


@dataclass
class ModelInputs:
    """Everything the forward pass reads that does not change during training."""

    x_affinity: object
    x_gcn: object
    g_ck: sp.csr_matrix
    labeled: np.ndarray
    train_labels: np.ndarray
    num_classes: int
    targets: aff.AffinityTargets = field(init=False)
    onehot: np.ndarray = field(init=False)

    def __post_init__(self):
        self.labeled = np.asarray(self.labeled, dtype=np.int64)
        self.train_labels = np.asarray(self.train_labels, dtype=np.int64)
        self.targets = aff.build_affinity_targets(self.train_labels)
        n = self.x_gcn.shape[0]
        self.onehot = np.zeros((n, self.num_classes))
        self.onehot[self.labeled, self.train_labels] = 1.0

    @property
    def n(self) -> int:
        return self.x_gcn.shape[0]


def prepare_inputs(dataset, hp: GlamHyperParams, train_labels, boosted=None, graph=None) -> ModelInputs:
    """Feature transforms and the (cropped) kNN graph for one dataset and config.

    ``boosted`` may carry precomputed boosted features; ``graph`` overrides
    the kNN graph.
    """
    from glam.data import boosted_features

    raw = dataset.features
    if hp.boosted:
        xb = boosted if boosted is not None else boosted_features(raw)
        x_aff = xb
        x_gcn = xb if hp.gcn_input == "boosted" else raw
    else:
        x_aff = x_gcn = raw
    labeled = dataset.split.train
    g = graph if graph is not None else knn_graph(x_aff, hp.k)
    g_ck = crop_incoming_to_labeled(g, labeled) if hp.crop else g
    return ModelInputs(x_aff, x_gcn, g_ck, labeled, train_labels, dataset.num_classes)


@dataclass
class Rngs:
    dropout_affinity: np.random.Generator
    dropout_gcn: np.random.Generator
    gumbel: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> Rngs:
        return cls(make_rng(seed, "dropout_affinity"), make_rng(seed, "dropout_gcn"), make_rng(seed, "gumbel"))


@dataclass
class ForwardResult:
    z_c: np.ndarray
    z_a: np.ndarray | None
    graph: sp.csr_matrix
    laplacian: sp.csr_matrix
    diagnostics: dict
    cache: dict = field(repr=False)


def glam_forward(
    params: GlamParams,
    hp: GlamHyperParams,
    inputs: ModelInputs,
    training: bool = False,
    rngs: Rngs | None = None,
    noise: np.ndarray | None = None,
    fixed_selection: np.ndarray | None = None,
) -> ForwardResult:
    """Compute Z^C (and Z^A) for the current parameters.

    During training the affinity graph is a Gumbel-argmax sample (or the
    relaxed sample in ``graph_mode="relaxed"``); in evaluation it is the
    argmax. ``noise`` freezes the Gumbel draw, ``fixed_selection`` reuses a
    previous selection matrix.
    """
    if training and rngs is None:
        rngs = Rngs.from_seed(hp.seed)
    w_a = hp.w_a
    use_aff = params.w1 is not None
    need_affinity = use_aff and (w_a > 0 or hp.beta > 0)
    z_a = a_cache = sample = None
    if need_affinity:
        model = aff.AffinityModel(params.w1, params.w2, inputs.labeled, hp.dropout_a)
        z_a, a_cache = aff.affinity_forward(
            model, inputs.x_affinity, training, rngs.dropout_affinity if training else None, cache=True
        )

    built = False
    selection = None
    if use_aff and w_a > 0:
        if fixed_selection is not None:
            selection = fixed_selection
        elif not training:
            sample = aff.choose_columns(z_a, mode="argmax", temperature=hp.temperature, log_z=a_cache.log_z)
            selection = sample.onehot
        else:
            if noise is None:
                noise = aff.gumbel_noise(z_a.shape, rngs.gumbel)
            sample = aff.choose_columns(
                z_a, mode="sample", temperature=hp.temperature, noise=noise, log_z=a_cache.log_z
            )
            selection = sample.soft if hp.graph_mode == "relaxed" else sample.onehot
        g_a = aff.selection_to_graph(selection, inputs.labeled, clip=hp.clip_affinity_weights)
        graph = combine_graphs(g_a, inputs.g_ck, w_a)
        built = True
    else:
        graph = combine_graphs(empty_graph(inputs.n), inputs.g_ck, 0.0)

    lap, deg = indegree_laplacian(graph, return_degree=True)

    rate = hp.dropout_c if training else 0.0
    x = inputs.x_gcn
    in_mask = dropout_mask(x.data.shape if sp.issparse(x) else x.shape, rate, rngs.dropout_gcn) if rate else None
    x_in = apply_mask(x, in_mask)
    v = np.asarray(x_in @ params.w3)
    h = np.asarray(lap @ v)
    r = relu(h)
    hid_mask = dropout_mask(r.shape, rate, rngs.dropout_gcn) if rate else None
    r_d = apply_mask(r, hid_mask)
    u = r_d @ params.w4
    o = np.asarray(lap @ u)
    z_c = softmax_rows(o)

    cache = dict(
        a_cache=a_cache,
        sample=sample,
        selection=selection,
        x_in=x_in,
        v=v,
        h=h,
        r_d=r_d,
        hid_mask=hid_mask,
        u=u,
        deg=deg,
        training=training,
    )
    diagnostics = {"affinity_graph_built": built, "graph_entries": int(graph.nnz)}
    return ForwardResult(z_c, z_a, graph, lap, diagnostics, cache)


def glam_loss(result: ForwardResult, inputs: ModelInputs, hp: GlamHyperParams, params: GlamParams):
    """Total objective and its parts ``loss_c``, ``loss_a``, ``reg_a``, ``reg_c``."""
    loss_c = cross_entropy_rows(result.z_c, inputs.onehot, inputs.labeled)
    loss_a = 0.0
    if result.z_a is not None:
        loss_a = aff.affinity_loss(result.z_a, inputs.targets, inputs.labeled)
    reg_c = float((params.w3**2).sum() + (params.w4**2).sum())
    reg_a = 0.0 if params.w1 is None else float((params.w1**2).sum() + (params.w2**2).sum())
    total = loss_c + hp.beta * loss_a + hp.alpha_a * reg_a + hp.alpha_c * reg_c
    return total, {"loss_c": loss_c, "loss_a": loss_a, "reg_a": reg_a, "reg_c": reg_c}


def _rowdot(a, b):
    return np.einsum("ij,ij->i", a, b)


def _selection_grad(result, inputs, hp, d_o, d_h):
    """d (L_C) / d selection, through the combined graph and its in-degree scaling."""
    c = result.cache
    lap = result.laplacian.tocoo()
    u, v, deg = c["u"], c["v"], c["deg"]
    s = 1.0 / np.sqrt(deg)
    # gradient w.r.t. the stored Laplacian entries
    d_lap = _rowdot(d_o[lap.row], u[lap.col]) + _rowdot(d_h[lap.row], v[lap.col])
    prod = d_lap * lap.data
    n = inputs.n
    t = (np.bincount(lap.row, prod, minlength=n) + np.bincount(lap.col, prod, minlength=n)) / s
    d_deg = -0.5 * t * s**3

    lab = inputs.labeled
    # entries (i, lab[c]) and (lab[c], i) of G + I
    d_out = (d_o @ u[lab].T + d_h @ v[lab].T) * s[:, None] * s[lab][None, :] + d_deg[:, None]
    d_in = (u @ d_o[lab].T + v @ d_h[lab].T) * s[:, None] * s[lab][None, :] + d_deg[lab][None, :]
    return hp.w_a * (d_out + d_in)


def glam_backward(result: ForwardResult, params: GlamParams, hp: GlamHyperParams, inputs: ModelInputs):
    """Gradients of ``L_C + beta * L_A`` w.r.t. W1..W4 from a cached forward pass.

    With a hard Gumbel sample the affinity graph is differentiated with the
    straight-through rule (disabled by ``hp.straight_through=False``); a
    relaxed graph is differentiated exactly.
    """
    c = result.cache
    if not c or "v" not in c:
        raise StateError("glam_backward needs the cache of a forward pass")
    lap_t = result.laplacian.T.tocsr()

    d_zc = cross_entropy_grad(result.z_c, inputs.onehot, inputs.labeled)
    d_o = softmax_backward(result.z_c, d_zc)
    d_u = np.asarray(lap_t @ d_o)
    g_w4 = c["r_d"].T @ d_u
    d_r = d_u @ params.w4.T
    if c["hid_mask"] is not None:
        d_r = apply_mask(d_r, c["hid_mask"])
    d_h = d_r * (c["h"] > 0)
    d_v = np.asarray(lap_t @ d_h)
    g_w3 = np.asarray(c["x_in"].T @ d_v)
    grads = {"w3": g_w3, "w4": g_w4}

    if params.w1 is None:
        return grads
    a_cache = c["a_cache"]
    if a_cache is None:
        grads["w1"] = np.zeros_like(params.w1)
        grads["w2"] = np.zeros_like(params.w2)
        return grads

    z_a = a_cache.z
    d_logits = np.zeros_like(z_a)
    sample = c["sample"]
    if c["selection"] is not None and sample is not None and sample.noise is not None:
        d_sel = _selection_grad(result, inputs, hp, d_o, d_h)
        if hp.graph_mode == "relaxed" or hp.straight_through:
            # relaxed graphs: exact Jacobian of the soft sample; hard graphs: straight-through
            d_log_z = aff.straight_through_grad(
                d_sel, z_a, sample.onehot, hp.temperature, sample.noise, a_cache.log_z
            )
            d_logits += aff.log_softmax_backward(z_a, d_log_z, a_cache.forbidden)
    if hp.beta > 0:
        d_za = np.zeros_like(z_a)
        rows = inputs.labeled[inputs.targets.active]
        d_za[rows] = hp.beta * cross_entropy_grad(
            z_a[inputs.labeled], inputs.targets.matrix, inputs.targets.active
        )[inputs.targets.active]
        d_logits += softmax_backward(z_a, d_za)
    model = aff.AffinityModel(params.w1, params.w2, inputs.labeled, hp.dropout_a)
    grads["w1"], grads["w2"] = aff.affinity_backward(model, a_cache, d_logits)
    return grads


def predict(z_c: np.ndarray) -> np.ndarray:
    """Row argmax; ties go to the lowest class id."""
    return np.argmax(z_c, axis=1)


def accuracy(z_c: np.ndarray, labels: np.ndarray, nodes: np.ndarray) -> float:
    nodes = np.asarray(nodes)
    if nodes.size == 0:
        return math.nan
    return float((predict(z_c[nodes]) == labels).mean()) * 100.0


def save_checkpoint(path, params: GlamParams, hp: GlamHyperParams) -> None:
    payload = {
        "format": "glam-checkpoint",
        "version": CHECKPOINT_VERSION,
        "hyperparams": hp.to_dict(),
        "labeled": params.labeled.tolist(),
        "weights": {
            name: {"shape": list(w.shape), "values": w.ravel().tolist()} for name, w in params.arrays().items()
        },
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[GlamParams, GlamHyperParams]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "glam-checkpoint":
        raise ValueError(f"{path} is not a GLAM checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    w = {
        name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["weights"].items()
    }
    params = GlamParams(w["w3"], w["w4"], np.array(payload["labeled"], dtype=np.int64), w.get("w1"), w.get("w2"))
    return params, GlamHyperParams.from_dict(payload["hyperparams"])
