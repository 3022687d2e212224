"""Toy two-stream encoder, part pooling, the training pipeline and checkpoints."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import graph as gat_mod
from . import losses as L
from . import ot
from .autodiff import Tensor
from .data import IR, RGB, Batch, FeatureDataset, PartFeatureSet, sample_batch
from .errors import CheckpointError, DivergenceDetected, NonFinite, ShapeMismatch, UnknownModality


# ---------------------------------------------------------------------------
# part pooling


def pool_parts(F_cnn, F_kp, identity: int = 0, modality: int = RGB) -> PartFeatureSet:
    """Heatmap-weighted average pooling of a ``C x H x W`` map.

    Part ``k`` is the spatial mean of ``F_cnn * F_kp[k]``; the global vector
    is the spatial mean plus the spatial max of ``F_cnn``.
    """
    F = np.asarray(F_cnn, dtype=np.float64)
    H = np.asarray(F_kp, dtype=np.float64)
    if F.ndim != 3 or H.ndim != 3 or F.shape[1:] != H.shape[1:]:
        raise ShapeMismatch(f"feature map {F.shape} and heatmaps {H.shape} disagree")
    if (H < 0).any():
        raise ValueError("heatmaps must be nonnegative")
    C, h, w = F.shape
    parts = np.einsum("chw,khw->kc", F, H) / (h * w)
    flat = F.reshape(C, -1)
    return PartFeatureSet(parts, flat.mean(1) + flat.max(1), identity, modality)


def load_heatmaps(path) -> np.ndarray:
    """Heatmaps saved with ``numpy.save`` as a ``K x H x W`` array."""
    H = np.load(path, allow_pickle=False)
    if H.ndim != 3:
        raise ShapeMismatch(f"{path}: heatmaps must be K x H x W, got {H.shape}")
    return H


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ModelConfig:
    d_in: int = 32
    widths: tuple = (64, 64, 32)
    K: int = 13
    heads: int = 4
    num_classes: int = 16
    precomputed: bool = False
    use_ot: bool = True
    use_contrastive: bool = True
    use_gat: bool = True
    use_channel_exchange: bool = True
    skeleton: tuple = gat_mod.DEFAULT_SKELETON
    leaky_slope: float = 0.2
    bn_eps: float = 1e-5
    theta: float = 0.02  # channel-exchange gate threshold

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "skeleton", tuple(tuple(int(x) for x in e) for e in self.skeleton))
        if len(self.widths) != 3:
            raise ValueError("widths must list three layer sizes")
        if self.use_channel_exchange and not self.use_gat:
            raise ValueError("channel exchange requires the graph branch")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")

    @property
    def dim(self) -> int:
        return self.d_in if self.precomputed else self.widths[-1]

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainSchedule:
    base_lr: float = 0.02
    decay_epochs: tuple = (15, 25)
    decay_factors: tuple = (0.1, 0.01)
    total_epochs: int = 40
    momentum: float = 0.9
    seed: int = 0
    steps_per_epoch: int = 0  # 0 means one pass over the samples
    P: int = 8
    Q: int = 4

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))
        object.__setattr__(self, "decay_factors", tuple(float(f) for f in self.decay_factors))
        if len(self.decay_epochs) != len(self.decay_factors):
            raise ValueError("decay_epochs and decay_factors must have equal length")
        if not self.base_lr >= 0:
            raise ValueError("base_lr must be >= 0")
        if self.total_epochs < 0:
            raise ValueError("total_epochs must be >= 0")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch; ``decay_factors`` are absolute multipliers."""
        factor = 1.0
        for e, f in zip(self.decay_epochs, self.decay_factors):
            if epoch >= e:
                factor = f
        return self.base_lr * factor

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# network


def _dense(rng, fan_in, fan_out, shape=None):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


class Model:
    """Encoder, graph refinement and classifier heads with their state."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 1])
        h1, h2, d = cfg.widths
        C = cfg.num_classes
        p = {}
        if not cfg.precomputed:
            p["enc.W_mod"] = ad.parameter(_dense(rng, cfg.d_in, h1, (2, cfg.d_in, h1)))
            p["enc.b_mod"] = ad.parameter(np.zeros((2, h1)))
            p["enc.W1"] = ad.parameter(_dense(rng, h1, h2))
            p["enc.b1"] = ad.parameter(np.zeros(h2))
            p["enc.W2"] = ad.parameter(_dense(rng, h2, d))
            p["enc.b2"] = ad.parameter(np.zeros(d))
            p["enc.bn_gamma"] = ad.parameter(np.ones((cfg.K + 1, d)))
            p["enc.bn_beta"] = ad.parameter(np.zeros((cfg.K + 1, d)))
        dim = cfg.dim
        p["cls_b.W"] = ad.parameter(_dense(rng, dim, C))
        p["cls_b.b"] = ad.parameter(np.zeros(C))
        p["cls_g.W"] = ad.parameter(_dense(rng, dim, C))
        p["cls_g.b"] = ad.parameter(np.zeros(C))
        for name, t in p.items():
            t.name = name
        self.gat = gat_mod.GraphAttention.create(
            dim, cfg.K, cfg.heads, cfg.skeleton, rng, leaky_slope=cfg.leaky_slope,
            bn_eps=cfg.bn_eps, theta=cfg.theta)
        self._own = p
        self.enc_stats = gat_mod.BatchNormStats.zeros((cfg.K + 1, d))
        self.ot_calls = 0

    # -- parameters -------------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        out = dict(self._own)
        out.update(self.gat.params.tensors())
        return out

    def _stats(self) -> dict[str, gat_mod.BatchNormStats]:
        out = {"node": self.gat.node_stats, "global": self.gat.global_stats}
        if not self.cfg.precomputed:
            out["enc"] = self.enc_stats
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for key, st in self._stats().items():
            out[f"stats.{key}.mean"] = st.mean
            out[f"stats.{key}.var"] = st.var
        return out

    def state(self) -> dict[str, np.ndarray]:
        out = {k: t.data for k, t in self.parameters().items()}
        out.update(self.buffers())
        return out

    def load_state(self, state: dict) -> None:
        params = self.parameters()
        expected = set(params) | set(self.buffers())
        if set(state) != expected:
            missing, extra = expected - set(state), set(state) - expected
            raise CheckpointError(f"state mismatch: missing {sorted(missing)}, "
                                  f"unexpected {sorted(extra)}")
        for k, t in params.items():
            if state[k].shape != t.shape:
                raise CheckpointError(f"{k}: shape {state[k].shape} != {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)
        for key, st in self._stats().items():
            st.mean = np.array(state[f"stats.{key}.mean"], dtype=np.float64)
            st.var = np.array(state[f"stats.{key}.var"], dtype=np.float64)

    # -- forward ---------------------------------------------------------------
    def encode(self, nodes, modalities, training: bool = True) -> Tensor:
        """Node-wise two-stream encoder: ``(B, K+1, d_in) -> (B, K+1, d)``.

        A modality-specific dense layer feeds two shared dense layers and a
        shared per-node batch norm.  In precomputed mode the input is
        returned unchanged.
        """
        mods = np.asarray(modalities)
        if mods.size and not np.isin(mods, (RGB, IR)).all():
            bad = mods[~np.isin(mods, (RGB, IR))][0]
            raise UnknownModality(f"modality tag {bad!r} is neither RGB (0) nor IR (1)")
        x = ad.as_tensor(np.asarray(nodes, dtype=np.float64) if not isinstance(nodes, Tensor)
                         else nodes)
        if x.ndim != 3 or x.shape[1] != self.cfg.K + 1 or x.shape[0] != len(mods):
            raise ShapeMismatch(f"input {x.shape} vs (B={len(mods)}, {self.cfg.K + 1}, d)")
        if self.cfg.precomputed:
            if x.shape[2] != self.cfg.d_in:
                raise ShapeMismatch(f"feature dim {x.shape[2]} != {self.cfg.d_in}")
            return x
        if x.shape[2] != self.cfg.d_in:
            raise ShapeMismatch(f"feature dim {x.shape[2]} != {self.cfg.d_in}")
        p = self._own
        h = ad.elu(x @ p["enc.W_mod"][mods] + p["enc.b_mod"][mods].reshape(len(mods), 1, -1))
        h = ad.elu(h @ p["enc.W1"] + p["enc.b1"])
        h = h @ p["enc.W2"] + p["enc.b2"]
        return gat_mod.batch_norm(h, p["enc.bn_gamma"], p["enc.bn_beta"], self.cfg.bn_eps,
                                  self.enc_stats, training)

    def embed_nodes(self, nodes: Tensor, training: bool):
        """Returns ``(V_G, BN(g))`` for encoded nodes."""
        base = self.gat.embed_global(nodes[:, self.cfg.K], training)
        if not self.cfg.use_gat:
            return base, base
        refined = self.gat.refine(nodes, training, self.cfg.use_channel_exchange)
        return base + gat_mod.weighted_nodes(refined, self.gat.params), base

    def embed(self, nodes, modalities, batch_size: int = 512) -> np.ndarray:
        """Evaluation-mode retrieval embeddings; no OT, no state changes."""
        out = []
        for s in range(0, len(modalities), batch_size):
            enc = self.encode(np.asarray(nodes[s:s + batch_size], dtype=np.float64),
                              np.asarray(modalities[s:s + batch_size]), training=False)
            out.append(self.embed_nodes(enc, training=False)[0].data)
        dim = self.cfg.dim
        return np.concatenate(out) if out else np.zeros((0, dim))

    def forward_pipeline(self, batch: Batch, labels, loss_cfg: L.LossConfig = L.LossConfig(),
                         sinkhorn_cfg: ot.SinkhornConfig = ot.SinkhornConfig(),
                         training: bool = True):
        """Returns ``(V_G, logits, total, breakdown)``.

        In evaluation mode only ``V_G`` and the logits are computed (``total``
        and ``breakdown`` are ``None``) and the OT solver is never called.
        """
        nodes = self.encode(batch.nodes, batch.modalities, training)
        V, base = self.embed_nodes(nodes, training)
        p = self._own
        logits_b = base @ p["cls_b.W"] + p["cls_b.b"]
        if not training:
            return V, logits_b, None, None
        comps = {"id": L.identity_loss(logits_b, labels),
                 "tri": L.hard_triplet_loss(V, batch.identities, batch.modalities,
                                            loss_cfg.triplet_margin)}
        if not loss_cfg.merge_identity:
            comps["id_graph"] = L.identity_loss(V @ p["cls_g.W"] + p["cls_g.b"], labels)
        rgb = np.flatnonzero(batch.modalities == RGB)
        ir = np.flatnonzero(batch.modalities == IR)
        if self.cfg.use_ot and loss_cfg.lambda_o > 0:
            same = batch.identities[rgb][:, None] == batch.identities[ir][None, :]
            ri, si = np.nonzero(same)
            self.ot_calls += 1
            comps["ot"], _ = L.got_loss(nodes[rgb[ri]], nodes[ir[si]], loss_cfg.phi, sinkhorn_cfg)
        if self.cfg.use_contrastive and loss_cfg.lambda_c > 0:
            ri, si = np.meshgrid(rgb, ir, indexing="ij")
            ri, si = ri.ravel(), si.ravel()
            y = (batch.identities[ri] != batch.identities[si]).astype(np.float64)
            comps["contrastive"] = L.multilevel_contrastive_loss(
                nodes[ri], nodes[si], y, loss_cfg.contrastive_margin)
        total, breakdown = L.total_loss(comps, loss_cfg)
        return V, logits_b, total, breakdown


# ---------------------------------------------------------------------------
# training


class SGD:
    """Momentum SGD: ``v <- mu v + g``, ``p <- p - lr v``."""

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, lr: float) -> None:
        for k, t in self.params.items():
            if t.grad is None:
                continue
            v = self.velocity[k]
            v *= self.momentum
            v += t.grad
            t.data = t.data - lr * v


@dataclass
class TrainResult:
    model: Model
    log: list = field(default_factory=list)
    label_map: dict = field(default_factory=dict)


def label_map_for(dataset: FeatureDataset) -> dict:
    return {int(i): k for k, i in enumerate(dataset.identity_set())}


def train(model: Model, dataset: FeatureDataset, schedule: TrainSchedule = TrainSchedule(),
          loss_cfg: L.LossConfig = L.LossConfig(),
          sinkhorn_cfg: ot.SinkhornConfig = ot.SinkhornConfig(),
          on_epoch=None) -> TrainResult:
    """SGD over identity-balanced batches; logs every loss component per epoch."""
    labels_of = label_map_for(dataset)
    if len(labels_of) > model.cfg.num_classes:
        raise ShapeMismatch(f"{len(labels_of)} identities but {model.cfg.num_classes} classes")
    batch_size = 2 * schedule.P * schedule.Q
    steps = schedule.steps_per_epoch or max(1, math.ceil(len(dataset) / batch_size))
    opt = SGD(model.parameters(), schedule.momentum)
    result = TrainResult(model, [], labels_of)
    for epoch in range(schedule.total_epochs):
        lr = schedule.lr_at(epoch)
        sums: dict[str, float] = {}
        for s in range(steps):
            batch = sample_batch(dataset, schedule.P, schedule.Q, schedule.seed,
                                 epoch * steps + s)
            labels = np.array([labels_of[int(i)] for i in batch.identities])
            try:
                _, _, total, parts = model.forward_pipeline(batch, labels, loss_cfg,
                                                            sinkhorn_cfg, training=True)
            except NonFinite as exc:
                raise DivergenceDetected(f"epoch {epoch + 1} step {s}: {exc}") from exc
            opt.zero_grad()
            total.backward()
            bad = [k for k, t in opt.params.items()
                   if t.grad is not None and not np.isfinite(t.grad).all()]
            if bad:
                raise DivergenceDetected(f"epoch {epoch + 1} step {s}: non-finite gradient "
                                         f"in {bad[0]}")
            opt.step(lr)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
        entry = {"epoch": epoch + 1, "lr": lr, "steps": steps}
        entry.update({k: v / steps for k, v in sums.items()})
        result.log.append(entry)
        if on_epoch is not None:
            on_epoch(entry)
    return result


# ---------------------------------------------------------------------------
# checkpoints
#
# layout (little-endian):
#   4s magic b"GOTC" | u32 version | 32s sha256 of the config text
#   u32 config length | config text (utf-8)
#   u32 tensor count | per tensor: u16 name length, name (utf-8), u8 ndim,
#                      ndim x u32 dims, float32 data (row-major)

CKPT_MAGIC = b"GOTC"
CKPT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    tensors: dict
    config_text: str
    config_hash: str


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def save_checkpoint(model: Model, path, config_text: str) -> None:
    cfg = config_text.encode("utf-8")
    out = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION), hashlib.sha256(cfg).digest(),
           struct.pack("<I", len(cfg)), cfg]
    state = model.state()
    out.append(struct.pack("<I", len(state)))
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        key = name.encode("utf-8")
        out.append(struct.pack("<H", len(key)) + key + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    try:
        Path(path).write_bytes(b"".join(out))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc.strerror}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    if take(4) != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    digest = take(32)
    (n,) = struct.unpack("<I", take(4))
    text = take(n)
    if hashlib.sha256(text).digest() != digest:
        raise CheckpointError(f"{path}: config hash mismatch")
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (k,) = struct.unpack("<H", take(2))
        name = take(k).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).copy()
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return Checkpoint(tensors, text.decode("utf-8"), digest.hex())
