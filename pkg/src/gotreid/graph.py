"""Geometry-guided graph attention over part and global node embeddings.

The graph has ``K`` local nodes (body keypoints) plus one global node that is
connected to everything.  A single multi-head attention layer refines the
nodes, a batch-norm gate exchanges weak channels between heads, and a learned
weighted sum of refined nodes is added to the normalised backbone global
feature to form the retrieval embedding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import EdgeOutOfRange, SingleHeadExchange, ShapeMismatch

# 13 keypoints: head, shoulders, elbows, wrists, hips, knees, ankles (left, right)
KEYPOINTS = (
    "head",
    "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow",
    "l_wrist", "r_wrist",
    "l_hip", "r_hip",
    "l_knee", "r_knee",
    "l_ankle", "r_ankle",
)
DEFAULT_SKELETON = (
    (0, 1), (0, 2),      # head - shoulders
    (1, 3), (2, 4),      # shoulders - elbows
    (3, 5), (4, 6),      # elbows - wrists
    (1, 7), (2, 8),      # shoulders - hips
    (7, 9), (8, 10),     # hips - knees
    (9, 11), (10, 12),   # knees - ankles
)


@dataclass(frozen=True)
class GraphSpec:
    num_local: int
    adjacency: np.ndarray
    global_index: int

    @property
    def num_nodes(self) -> int:
        return self.num_local + 1

    @property
    def mask(self) -> np.ndarray:
        return self.adjacency.astype(bool)


def build_adjacency(K: int, skeleton=DEFAULT_SKELETON) -> GraphSpec:
    """Symmetric 0/1 adjacency with self-loops; node ``K`` is the global node."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    A = np.eye(K + 1, dtype=np.int8)
    for i, j in skeleton:
        if not (0 <= i < K and 0 <= j < K):
            raise EdgeOutOfRange(f"edge ({i}, {j}) outside 0..{K - 1}")
        A[i, j] = A[j, i] = 1
    A[K, :] = 1
    A[:, K] = 1
    A.setflags(write=False)
    return GraphSpec(K, A, K)


def read_skeleton(path) -> list[tuple[int, int]]:
    """Parse an edge list file: one ``i j`` pair per line, 0-indexed, ``#`` comments."""
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'i j', got {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return edges


def write_skeleton(edges, path) -> None:
    Path(path).write_text("".join(f"{i} {j}\n" for i, j in edges))


def _glorot(rng, fan_in, fan_out, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class GatParams:
    """Learnable tensors and fixed hyper-parameters of the refinement stage."""

    W: Tensor            # (d, d') shared transform inside the attention logits
    W_heads: Tensor      # (L, d, d') per-head value transforms
    att: Tensor          # (L, 2 d') attention vectors
    bn_gamma: Tensor     # (K+1, L, d')
    bn_beta: Tensor      # (K+1, L, d')
    omega: Tensor        # (K+1,) aggregation weights
    g_gamma: Tensor      # (d,) batch norm on the backbone global feature
    g_beta: Tensor       # (d,)
    leaky_slope: float = 0.2
    bn_eps: float = 1e-5
    theta: float = 0.02

    @property
    def heads(self) -> int:
        return self.W_heads.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    @classmethod
    def init(cls, d: int, K: int, heads: int = 4, rng=None, **hyper) -> "GatParams":
        if heads < 1 or d % heads:
            raise ShapeMismatch(f"feature dim {d} not divisible by {heads} heads")
        rng = np.random.default_rng(rng)
        dh = d // heads
        n = K + 1
        return cls(
            W=ad.parameter(_glorot(rng, d, dh, (d, dh)), "gat.W"),
            W_heads=ad.parameter(_glorot(rng, d, dh, (heads, d, dh)), "gat.W_heads"),
            att=ad.parameter(_glorot(rng, 2 * dh, 1, (heads, 2 * dh)), "gat.att"),
            bn_gamma=ad.parameter(np.ones((n, heads, dh)), "gat.bn_gamma"),
            bn_beta=ad.parameter(np.zeros((n, heads, dh)), "gat.bn_beta"),
            omega=ad.parameter(np.full(n, 1.0 / n), "gat.omega"),
            g_gamma=ad.parameter(np.ones(d), "gat.g_gamma"),
            g_beta=ad.parameter(np.zeros(d), "gat.g_beta"),
            **hyper,
        )

    def tensors(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.W, self.W_heads, self.att, self.bn_gamma,
                                    self.bn_beta, self.omega, self.g_gamma, self.g_beta)}


@dataclass
class BatchNormStats:
    """Running statistics used at evaluation time."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def zeros(cls, shape, momentum: float = 0.1) -> "BatchNormStats":
        return cls(np.zeros(shape), np.ones(shape), momentum)

    def update(self, batch_mean: np.ndarray, batch_var_unbiased: np.ndarray) -> None:
        m = self.momentum
        self.mean = (1 - m) * self.mean + m * batch_mean
        self.var = (1 - m) * self.var + m * batch_var_unbiased


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float,
               stats: BatchNormStats | None = None, training: bool = True) -> Tensor:
    """Normalise over axis 0 with per-position scale and offset.

    In training mode batch statistics are used (and ``stats`` updated); in
    evaluation mode the running statistics are used and nothing is mutated.
    """
    if training:
        mu = x.mean(axis=0, keepdims=True)
        centred = x - mu
        var = (centred * centred).mean(axis=0, keepdims=True)
        if stats is not None:
            B = x.shape[0]
            unbiased = var.data[0] * (B / (B - 1)) if B > 1 else var.data[0]
            stats.update(mu.data[0], unbiased)
        xhat = centred / (var + eps).sqrt()
    else:
        if stats is None:
            raise ValueError("evaluation-mode batch norm needs running statistics")
        xhat = (x - stats.mean) / np.sqrt(stats.var + eps)
    return xhat * gamma + beta


# ---------------------------------------------------------------------------
# attention


def attention_coefficients(nodes: Tensor, graph: GraphSpec, head: int,
                           params: GatParams) -> Tensor:
    """Masked softmax of ``LeakyReLU(a . [W v_i || W v_j])`` over neighbours ``j``.

    Returns ``(B, K+1, K+1)``; entries outside the adjacency are exactly zero.
    """
    nodes = ad.as_tensor(nodes)
    _check_nodes(nodes, graph, params)
    dh = params.W.shape[1]
    Wh = nodes @ params.W                          # (B, N, d')
    a = params.att[head]
    src = Wh @ a[:dh]                              # (B, N)
    dst = Wh @ a[dh:]
    logits = ad.leaky_relu(src.reshape(*src.shape, 1) + dst.reshape(dst.shape[0], 1, -1),
                           params.leaky_slope)
    return ad.masked_softmax(logits, graph.mask, axis=-1)


def gat_head_forward(nodes: Tensor, graph: GraphSpec, head: int, alpha: Tensor,
                     params: GatParams) -> Tensor:
    """Partial representation ``ELU(sum_j alpha_ij W^l v_j)`` of one head."""
    nodes = ad.as_tensor(nodes)
    return ad.elu(alpha @ (nodes @ params.W_heads[head]))


def channel_exchange(per_head: Tensor, params: GatParams, stats: BatchNormStats | None = None,
                     training: bool = True, exchange: bool = True,
                     counter: dict | None = None) -> Tensor:
    """Per-(node, head, channel) batch norm with the scale gate between heads.

    Where ``gamma > theta`` the batch-norm value is kept; elsewhere it is
    replaced with the mean of the other heads' batch-norm values at the same
    node and channel.  The gate is a constant mask for differentiation.  With a
    single head nothing can be exchanged: the plain value is kept, a
    :class:`SingleHeadExchange` warning is issued, and ``counter`` (if given)
    records how many channels were affected.
    """
    per_head = ad.as_tensor(per_head)
    bn = batch_norm(per_head, params.bn_gamma, params.bn_beta, params.bn_eps, stats, training)
    if not exchange:
        return bn
    gate = params.bn_gamma.data <= params.theta
    if not gate.any():
        return bn
    L = per_head.shape[2]
    if L == 1:
        n_fired = int(gate.sum())
        warnings.warn(f"{n_fired} channel(s) gated with a single head; keeping BN values",
                      SingleHeadExchange, stacklevel=2)
        if counter is not None:
            counter["single_head_exchange"] = counter.get("single_head_exchange", 0) + n_fired
        return bn
    others = (bn.sum(axis=2, keepdims=True) - bn) / float(L - 1)
    return ad.where(np.broadcast_to(gate, bn.shape), others, bn)


def aggregate(refined: Tensor, backbone_global: Tensor, params: GatParams,
              stats: BatchNormStats | None = None, training: bool = True) -> Tensor:
    """Retrieval embedding ``BN(g) + sum_k omega_k v_k``."""
    refined, backbone_global = ad.as_tensor(refined), ad.as_tensor(backbone_global)
    if refined.shape[1] != params.omega.shape[0]:
        raise ShapeMismatch(f"{refined.shape[1]} nodes vs {params.omega.shape[0]} weights")
    base = batch_norm(backbone_global, params.g_gamma, params.g_beta, params.bn_eps,
                      stats, training)
    return base + weighted_nodes(refined, params)


def weighted_nodes(refined: Tensor, params: GatParams) -> Tensor:
    """``sum_k omega_k v_k`` over the node axis."""
    return (ad.as_tensor(refined) * params.omega.reshape(1, -1, 1)).sum(axis=1)


def _check_nodes(nodes: Tensor, graph: GraphSpec, params: GatParams) -> None:
    if nodes.ndim != 3 or nodes.shape[1] != graph.num_nodes or nodes.shape[2] != params.dim:
        raise ShapeMismatch(
            f"nodes {nodes.shape} do not match (B, {graph.num_nodes}, {params.dim})")


@dataclass
class GraphAttention:
    """The refinement stage with its evaluation-time batch-norm statistics."""

    graph: GraphSpec
    params: GatParams
    node_stats: BatchNormStats = None
    global_stats: BatchNormStats = None
    counters: dict = field(default_factory=dict)

    def __post_init__(self):
        n, L, dh = self.params.bn_gamma.shape
        if self.node_stats is None:
            self.node_stats = BatchNormStats.zeros((n, L, dh))
        if self.global_stats is None:
            self.global_stats = BatchNormStats.zeros((self.params.dim,))

    @classmethod
    def create(cls, d: int, K: int, heads: int = 4, skeleton=DEFAULT_SKELETON, rng=None,
               **hyper) -> "GraphAttention":
        return cls(build_adjacency(K, skeleton), GatParams.init(d, K, heads, rng, **hyper))

    def refine(self, nodes: Tensor, training: bool = True, exchange: bool = True) -> Tensor:
        """Per-node refined embeddings ``(B, K+1, d)`` (heads concatenated)."""
        nodes = ad.as_tensor(nodes)
        _check_nodes(nodes, self.graph, self.params)
        heads = []
        for head in range(self.params.heads):
            alpha = attention_coefficients(nodes, self.graph, head, self.params)
            heads.append(gat_head_forward(nodes, self.graph, head, alpha, self.params))
        per_head = ad.stack(heads, axis=2)  # (B, N, L, d')
        mixed = channel_exchange(per_head, self.params, self.node_stats, training, exchange,
                                 self.counters)
        B, N = nodes.shape[:2]
        return mixed.reshape(B, N, -1)

    def __call__(self, nodes: Tensor, backbone_global: Tensor, training: bool = True,
                 exchange: bool = True) -> Tensor:
        refined = self.refine(nodes, training, exchange)
        return aggregate(refined, backbone_global, self.params, self.global_stats, training)

    def embed_global(self, backbone_global: Tensor, training: bool = True) -> Tensor:
        """Graph branch disabled: the embedding is just ``BN(g)``."""
        return batch_norm(ad.as_tensor(backbone_global), self.params.g_gamma,
                          self.params.g_beta, self.params.bn_eps, self.global_stats, training)
