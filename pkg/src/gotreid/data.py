"""Synthetic two-modality part features, the binary feature file, and the batch sampler.

Feature file layout (all integers and floats little-endian, no padding)::

    offset  size  field
    0       4     magic  b"GOTF"
    4       4     u32 version (currently 1)
    8       4     u32 record count N
    12      4     u32 K (local parts; each record holds K+1 node vectors)
    16      4     u32 d (feature dimension)
    20      ...   N records, each:
                    u32 identity
                    u8  modality (0 = RGB, 1 = IR)
                    (K+1) * d float32, node-major (the global node is last)
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import (BadMagic, FileAccessError, InsufficientSamples, TruncatedFile,
                     VersionMismatch)

RGB, IR = 0, 1
MODALITY_NAMES = {RGB: "RGB", IR: "IR"}

MAGIC = b"GOTF"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class PartFeatureSet:
    """K local part vectors plus one global vector for a single sample."""

    parts: np.ndarray
    global_: np.ndarray
    identity: int
    modality: int

    @property
    def nodes(self) -> np.ndarray:
        """``(K+1, d)`` node matrix with the global vector last."""
        return np.vstack([self.parts, self.global_[None, :]])

    @property
    def K(self) -> int:
        return self.parts.shape[0]

    @classmethod
    def from_nodes(cls, nodes, identity: int, modality: int) -> "PartFeatureSet":
        nodes = np.asarray(nodes)
        return cls(nodes[:-1], nodes[-1], int(identity), int(modality))


class FeatureDataset:
    """Immutable collection of samples stored as float32 node arrays."""

    def __init__(self, nodes, identities, modalities):
        nodes = np.ascontiguousarray(nodes, dtype="<f4")
        if nodes.ndim != 3:
            raise ValueError(f"nodes must be (N, K+1, d), got {nodes.shape}")
        identities = np.ascontiguousarray(identities, dtype="<u4")
        modalities = np.ascontiguousarray(modalities, dtype=np.uint8)
        if identities.shape != (len(nodes),) or modalities.shape != (len(nodes),):
            raise ValueError("identities and modalities must have one entry per sample")
        if not np.isin(modalities, (RGB, IR)).all():
            raise ValueError("modalities must be 0 (RGB) or 1 (IR)")
        for arr in (nodes, identities, modalities):
            arr.setflags(write=False)
        self.nodes, self.identities, self.modalities = nodes, identities, modalities

    @classmethod
    def empty(cls, K: int, d: int) -> "FeatureDataset":
        return cls(np.zeros((0, K + 1, d)), [], [])

    @classmethod
    def from_sets(cls, sets, K: int | None = None, d: int | None = None) -> "FeatureDataset":
        sets = list(sets)
        if not sets:
            return cls.empty(K or 0, d or 0)
        return cls(np.stack([s.nodes for s in sets]), [s.identity for s in sets],
                   [s.modality for s in sets])

    @property
    def K(self) -> int:
        return self.nodes.shape[1] - 1

    @property
    def d(self) -> int:
        return self.nodes.shape[2]

    def __len__(self) -> int:
        return len(self.nodes)

    def __getitem__(self, i: int) -> PartFeatureSet:
        return PartFeatureSet.from_nodes(self.nodes[i], self.identities[i], self.modalities[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        return (self.nodes.shape == other.nodes.shape
                and self.nodes.tobytes() == other.nodes.tobytes()
                and np.array_equal(self.identities, other.identities)
                and np.array_equal(self.modalities, other.modalities))

    __hash__ = None

    def subset(self, mask_or_index) -> "FeatureDataset":
        idx = np.asarray(mask_or_index)
        return FeatureDataset(self.nodes[idx], self.identities[idx], self.modalities[idx])

    def identity_set(self) -> np.ndarray:
        return np.unique(self.identities)

    def counts(self) -> dict:
        return {MODALITY_NAMES[m]: int((self.modalities == m).sum()) for m in (RGB, IR)}


# ---------------------------------------------------------------------------
# synthesis


@dataclass(frozen=True)
class SynthConfig:
    num_identities: int = 16
    samples_per_modality: int = 20
    d: int = 32
    K: int = 13
    modality_gap: float = 6.5
    noise_std: float = 0.6
    occlusion_prob: float = 0.1
    part_spread: float = 0.5
    scale_spread: float = 0.15
    seed: int = 0

    def __post_init__(self):
        for name in ("num_identities", "samples_per_modality", "d"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if min(self.modality_gap, self.noise_std, self.part_spread, self.scale_spread) < 0:
            raise ValueError("modality_gap, noise_std, part_spread and scale_spread must be >= 0")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ValueError("occlusion_prob must lie in [0, 1]")

    def as_dict(self) -> dict:
        return asdict(self)


def synthesize(cfg: SynthConfig = SynthConfig()) -> FeatureDataset:
    """Draw a two-modality dataset.

    Each identity has a latent centre and per-node offsets around a node
    template shared by all identities.  Each modality has a fixed node-wise
    offset scaled by ``modality_gap`` and a positive per-node, per-channel
    scaling ``exp(scale_spread * gap * z)``; RGB is the reference modality.  Samples add isotropic
    noise and zero local parts with ``occlusion_prob``.  Output order is
    identity-major, then RGB before IR, then sample index.
    """
    rng = np.random.default_rng(cfg.seed)
    n, d = cfg.K + 1, cfg.d
    template = rng.normal(size=(n, d))
    centres = rng.normal(size=(cfg.num_identities, 1, d))
    offsets = cfg.part_spread * rng.normal(size=(cfg.num_identities, n, d))
    base = template[None] + centres + offsets                       # (I, n, d)
    shift = cfg.modality_gap * rng.normal(size=(2, n, d))
    shift[RGB] = 0.0
    scale = np.exp(cfg.scale_spread * cfg.modality_gap * rng.normal(size=(2, n, d)))
    scale[RGB] = 1.0
    S = cfg.samples_per_modality
    noise = cfg.noise_std * rng.normal(size=(cfg.num_identities, 2, S, n, d))
    occluded = rng.random((cfg.num_identities, 2, S, cfg.K)) < cfg.occlusion_prob
    x = (base[:, None, None] * scale[None, :, None] + shift[None, :, None]) + noise
    x[..., :cfg.K, :][occluded] = 0.0
    ids = np.repeat(np.arange(cfg.num_identities), 2 * S)
    mods = np.tile(np.repeat([RGB, IR], S), cfg.num_identities)
    return FeatureDataset(x.reshape(-1, n, d), ids, mods)


# ---------------------------------------------------------------------------
# file format


def write_features(dataset: FeatureDataset, path) -> None:
    N, n, d = dataset.nodes.shape
    record = np.dtype([("identity", "<u4"), ("modality", "u1"), ("nodes", "<f4", (n, d))])
    recs = np.empty(N, dtype=record)
    recs["identity"] = dataset.identities
    recs["modality"] = dataset.modalities
    recs["nodes"] = dataset.nodes
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, N, n - 1, d))
            fh.write(recs.tobytes())
    except OSError as exc:
        raise FileAccessError(f"cannot write {path}: {exc.strerror}") from exc


def read_features(path) -> FeatureDataset:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FileAccessError(f"cannot read {path}: {exc.strerror}") from exc
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a feature file (magic {raw[:4]!r})")
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: header needs {_HEADER.size} bytes, file has {len(raw)}")
    _, version, N, K, d = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {VERSION}")
    record = np.dtype([("identity", "<u4"), ("modality", "u1"), ("nodes", "<f4", (K + 1, d))])
    expected = _HEADER.size + N * record.itemsize
    if len(raw) != expected:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, header implies {expected}")
    recs = np.frombuffer(raw, dtype=record, count=N, offset=_HEADER.size)
    if N == 0:
        return FeatureDataset.empty(K, d)
    return FeatureDataset(recs["nodes"], recs["identity"], recs["modality"])


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class Batch:
    """``P`` identities with ``Q`` RGB then ``Q`` IR samples each.

    The first ``P*Q`` rows are RGB and the last ``P*Q`` are IR; row ``r`` and
    row ``P*Q + r`` share the same identity.
    """

    indices: np.ndarray
    nodes: np.ndarray
    identities: np.ndarray
    modalities: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def split_by_identity(dataset: FeatureDataset, train_fraction: float = 0.5, seed: int = 0):
    """Disjoint identity split; returns ``(train, test)``."""
    ids = dataset.identity_set()
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(ids)[:max(1, int(round(train_fraction * len(ids))))]
    mask = np.isin(dataset.identities, chosen)
    return dataset.subset(mask), dataset.subset(~mask)


def split_by_sample(dataset: FeatureDataset, train_fraction: float = 0.5, seed: int = 0):
    """Every identity in both parts, samples of each (identity, modality) divided."""
    rng = np.random.default_rng(seed)
    train = np.zeros(len(dataset), dtype=bool)
    for ident in dataset.identity_set():
        for m in (RGB, IR):
            idx = np.flatnonzero((dataset.identities == ident) & (dataset.modalities == m))
            k = int(round(train_fraction * len(idx)))
            train[rng.permutation(idx)[:k]] = True
    return dataset.subset(train), dataset.subset(~train)


def sample_batch(dataset: FeatureDataset, P: int = 8, Q: int = 4, seed: int = 0,
                 step: int = 0) -> Batch:
    """Identity-balanced cross-modality batch, deterministic in ``(seed, step)``."""
    if P < 1 or Q < 1:
        raise ValueError("P and Q must be >= 1")
    pools = _pools(dataset)
    eligible = [i for i, (r, s) in pools.items() if len(r) >= Q and len(s) >= Q]
    if len(eligible) < P:
        raise InsufficientSamples(
            f"{len(eligible)} identities have >= {Q} samples per modality, need {P}")
    rng = np.random.default_rng([seed, step])
    chosen = rng.choice(np.array(eligible), size=P, replace=False)
    rgb, ir = [], []
    for ident in chosen:
        r, s = pools[int(ident)]
        rgb.extend(rng.choice(r, size=Q, replace=False))
        ir.extend(rng.choice(s, size=Q, replace=False))
    idx = np.array(rgb + ir, dtype=np.int64)
    return Batch(idx, dataset.nodes[idx], dataset.identities[idx].astype(np.int64),
                 dataset.modalities[idx].astype(np.int64))


def _pools(dataset: FeatureDataset) -> dict:
    pools = {}
    for ident in dataset.identity_set():
        sel = dataset.identities == ident
        pools[int(ident)] = (np.flatnonzero(sel & (dataset.modalities == RGB)),
                             np.flatnonzero(sel & (dataset.modalities == IR)))
    return pools
