"""Training objectives: identity, cross-modality triplet, multi-level contrastive, GOT.

All losses take and return :class:`~gotreid.autodiff.Tensor` objects so that
their gradients flow back into the encoder and graph parameters.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import ot
from .autodiff import Tensor
from .errors import LabelOutOfRange, LossDimensionMismatch, NonFinite, NoValidTriplet, ZeroNormRow

RGB, IR = 0, 1


@dataclass(frozen=True)
class LossConfig:
    triplet_margin: float = 0.3
    contrastive_margin: float = 2.0
    phi: float = 0.5
    lambda_b: float = 1.0
    lambda_o: float = 1.0
    lambda_c: float = 0.1
    lambda_id: float = 1.0
    theta: float = 0.02
    merge_identity: bool = False  # one classifier for both identity terms

    def __post_init__(self):
        if self.triplet_margin < 0:
            raise ValueError("triplet_margin must be >= 0")
        if self.contrastive_margin <= 0:
            raise ValueError("contrastive_margin must be > 0")
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("phi must lie in [0, 1]")
        for name in ("lambda_b", "lambda_o", "lambda_c", "lambda_id"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0")

    def as_dict(self) -> dict:
        return asdict(self)


def safe_sqrt(x: Tensor) -> Tensor:
    """Square root whose gradient is zero (rather than NaN) at 0."""
    x = ad.as_tensor(x)
    out = np.sqrt(np.maximum(x.data, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(out > 0, 0.5 / out, 0.0)
    return ad.custom(out, [x], lambda g: (g * scale,))


def pairwise_distances(X: Tensor, Y: Tensor | None = None) -> Tensor:
    """Euclidean distances between rows, ``(n, m)``."""
    X = ad.as_tensor(X)
    Y = X if Y is None else ad.as_tensor(Y)
    diff = X.reshape(X.shape[0], 1, -1) - Y.reshape(1, Y.shape[0], -1)
    return safe_sqrt((diff * diff).sum(axis=-1))


def identity_loss(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise LossDimensionMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    C = logits.shape[1]
    if C < 2:
        raise LossDimensionMismatch("identity loss needs at least two classes")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise LabelOutOfRange(f"labels must lie in [0, {C}), got {labels.min()}..{labels.max()}")
    logp = ad.log_softmax(logits, axis=1)
    return -logp[np.arange(len(labels)), labels].mean()


def hard_triplet_loss(embeddings: Tensor, identities, modalities, margin: float = 0.3) -> Tensor:
    """Batch-hard triplet loss where positives and negatives come from the other modality."""
    emb = ad.as_tensor(embeddings)
    ids = np.asarray(identities)
    mods = np.asarray(modalities)
    if emb.ndim != 2 or ids.shape != (emb.shape[0],) or mods.shape != ids.shape:
        raise LossDimensionMismatch("embeddings, identities and modalities disagree in length")
    cross = mods[:, None] != mods[None, :]
    same = ids[:, None] == ids[None, :]
    pos, neg = cross & same, cross & ~same
    if not (pos.any(axis=1).all() and neg.any(axis=1).all()):
        bad = int(np.flatnonzero(~(pos.any(axis=1) & neg.any(axis=1)))[0])
        raise NoValidTriplet(f"anchor {bad} lacks a cross-modality positive or negative")
    dist = pairwise_distances(emb)
    hardest_pos = ad.where(pos, dist, -np.inf).max(axis=1)
    hardest_neg = ad.where(neg, dist, np.inf).min(axis=1)
    return ad.relu(hardest_pos - hardest_neg + margin).mean()


def multilevel_contrastive_loss(rgb_nodes: Tensor, ir_nodes: Tensor, pair_labels,
                                margin: float = 2.0) -> Tensor:
    """Contrastive loss over every node level of ``N`` RGB/IR pairs.

    ``rgb_nodes`` and ``ir_nodes`` are ``(N, K+1, d)``; ``pair_labels[n]`` is 0
    for a same-identity pair and 1 otherwise.
    """
    a, b = ad.as_tensor(rgb_nodes), ad.as_tensor(ir_nodes)
    y = np.asarray(pair_labels, dtype=np.float64)
    if a.ndim != 3 or a.shape != b.shape or y.shape != (a.shape[0],):
        raise LossDimensionMismatch(f"pairs {a.shape} vs {b.shape}, labels {y.shape}")
    N, levels = a.shape[:2]
    diff = a - b
    sq = (diff * diff).sum(axis=-1)                    # (N, K+1)
    hinge = ad.relu(margin - safe_sqrt(sq))
    per = sq * (1.0 - y)[:, None] + hinge * hinge * y[:, None]
    return per.sum() / float(2 * N * levels)


# ---------------------------------------------------------------------------
# GOT distance with frozen plans


NORM_EPS = 1e-12


def cosine_cost(A: Tensor, B: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Differentiable cosine distance ``1 - cos`` between rows, batched over axis 0.

    Norms are computed as ``sqrt(|x|^2 + eps)`` so that zero nodes (occluded
    parts) get cost 1 to everything instead of failing; pass ``eps=0`` for
    the strict behaviour of :func:`gotreid.ot.cost_matrix`.
    """
    A, B = ad.as_tensor(A), ad.as_tensor(B)
    na = (A * A).sum(axis=-1, keepdims=True)
    nb = (B * B).sum(axis=-1, keepdims=True)
    if eps == 0 and ((na.data == 0).any() or (nb.data == 0).any()):
        raise ZeroNormRow("cosine cost of a zero-norm node")
    An, Bn = A / (na + eps).sqrt(), B / (nb + eps).sqrt()
    return 1.0 - An @ Bn.swapaxes(-1, -2)


def gw_energy_frozen(Ca: Tensor, Cb: Tensor, T: np.ndarray, D: np.ndarray | None = None) -> Tensor:
    """``sum T_ij T_kl |Ca_ik - Cb_jl|`` per pair, with the plans held constant."""
    Ca, Cb = ad.as_tensor(Ca), ad.as_tensor(Cb)
    T = np.asarray(T, dtype=np.float64)
    D = ot.gw_difference(Ca.data, Cb.data) if D is None else D
    W = T[..., :, :, None, None] * T[..., None, None, :, :]   # (P, i, j, k, l)
    WS = W * np.sign(D)
    value = (W * np.abs(D)).sum(axis=(-4, -3, -2, -1))

    def vjp(g):
        g = np.asarray(g)[..., None, None]
        return (g * WS.sum(axis=(-3, -1)), -g * WS.sum(axis=(-4, -2)))

    return ad.custom(value, [Ca, Cb], vjp)


def got_loss(rgb_nodes: Tensor, ir_nodes: Tensor, phi: float = 0.5,
             cfg: ot.SinkhornConfig = ot.SinkhornConfig(), plans: np.ndarray | None = None):
    """Mean GOT distance over ``P`` paired node sets ``(P, K+1, d)``.

    Plans are solved on the current values (or taken from ``plans``) and then
    treated as constants, so gradients flow only through the cost matrices.
    Returns ``(loss, plans)``.
    """
    a, b = ad.as_tensor(rgb_nodes), ad.as_tensor(ir_nodes)
    if a.ndim != 3 or a.shape != b.shape:
        raise LossDimensionMismatch(f"paired node stacks differ: {a.shape} vs {b.shape}")
    P = a.shape[0]
    Cw, Ca, Cb = cosine_cost(a, b), cosine_cost(a, a), cosine_cost(b, b)
    D = ot.gw_difference(Ca.data, Cb.data)
    if plans is None:
        plans = ot.got_plans_batch(Cw.data, Ca.data, Cb.data, phi, cfg, D=D)
    wd = (Cw * plans).sum(axis=(-1, -2))
    gw = gw_energy_frozen(Ca, Cb, plans, D)
    per_pair = wd * phi + gw * (1.0 - phi)
    return per_pair.sum() / float(max(P, 1)), plans


# ---------------------------------------------------------------------------
# total objective

COMPONENTS = ("id", "tri", "ot", "contrastive", "id_graph")


def total_loss(components: dict, cfg: LossConfig = LossConfig()):
    """Weighted sum ``lb (id + tri) + lo ot + lc contrastive + lid id_graph``.

    Missing components count as zero; when ``id_graph`` is absent the
    standalone identity term reuses ``id``.  Returns ``(total, breakdown)``
    where ``breakdown`` maps every component and ``total`` to a float.
    """
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise KeyError(f"unknown loss components {sorted(unknown)}")
    terms = {}
    for key, value in components.items():
        value = ad.as_tensor(value)
        if not np.all(np.isfinite(value.data)):
            raise NonFinite(f"loss component {key!r} is not finite")
        terms[key] = value
    zero = Tensor(0.0)
    get = lambda key: terms.get(key, zero)  # noqa: E731
    standalone = terms.get("id_graph", get("id"))
    total = ((get("id") + get("tri")) * cfg.lambda_b + get("ot") * cfg.lambda_o
             + get("contrastive") * cfg.lambda_c + standalone * cfg.lambda_id)
    breakdown = {key: float(terms[key].data) if key in terms else 0.0 for key in COMPONENTS}
    breakdown["total"] = float(total.data)
    if not math.isfinite(breakdown["total"]):
        raise NonFinite("total loss is not finite")
    return total, breakdown
