"""Cross-modality retrieval metrics and the single/multi-shot gallery protocol."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import IR, RGB
from .errors import EmptyGallery, InsufficientGallerySamples, NoRelevantItem

MODES = {"v2t": (RGB, IR), "t2v": (IR, RGB)}  # (query modality, gallery modality)
MODE_ALIASES = {"visible_to_thermal": "v2t", "thermal_to_visible": "t2v"}


@dataclass(frozen=True)
class RankingResult:
    query_id: int
    ranked_gallery_ids: np.ndarray
    similarities: np.ndarray
    ranked_indices: np.ndarray

    def first_hit(self) -> int | None:
        """1-based rank of the first correct match, ``None`` if absent."""
        hits = np.flatnonzero(self.ranked_gallery_ids == self.query_id)
        return int(hits[0]) + 1 if hits.size else None


def similarity_matrix(Q, G, metric: str = "cosine") -> np.ndarray:
    Q, G = np.asarray(Q, dtype=np.float64), np.asarray(G, dtype=np.float64)
    if metric == "cosine":
        qn = np.linalg.norm(Q, axis=1, keepdims=True)
        gn = np.linalg.norm(G, axis=1, keepdims=True)
        return (Q / np.where(qn > 0, qn, 1.0)) @ (G / np.where(gn > 0, gn, 1.0)).T
    if metric == "euclidean":
        sq = (Q * Q).sum(1)[:, None] + (G * G).sum(1)[None, :] - 2.0 * Q @ G.T
        return -np.sqrt(np.maximum(sq, 0.0))
    raise ValueError(f"unknown similarity {metric!r}")


def rank(query_embeddings, gallery_embeddings, query_ids=None, gallery_ids=None,
         metric: str = "cosine", similarities: np.ndarray | None = None) -> list[RankingResult]:
    """Sort the gallery by descending similarity for every query.

    Ties keep ascending gallery index.  ``similarities`` may be supplied
    directly instead of embeddings (used to test score transforms).
    """
    if similarities is None:
        Q, G = np.atleast_2d(query_embeddings), np.atleast_2d(gallery_embeddings)
        if G.shape[0] == 0 or np.size(gallery_embeddings) == 0:
            raise EmptyGallery("gallery is empty")
        if Q.shape[1] != G.shape[1]:
            raise ValueError(f"embedding dimensions differ: {Q.shape[1]} vs {G.shape[1]}")
        S = similarity_matrix(Q, G, metric)
    else:
        S = np.atleast_2d(np.asarray(similarities, dtype=np.float64))
        if S.shape[1] == 0:
            raise EmptyGallery("gallery is empty")
    nq, ng = S.shape
    qids = np.arange(nq) if query_ids is None else np.asarray(query_ids)
    gids = np.arange(ng) if gallery_ids is None else np.asarray(gallery_ids)
    order = np.argsort(-S, axis=1, kind="stable")
    return [RankingResult(int(qids[q]), gids[order[q]], S[q, order[q]], order[q])
            for q in range(nq)]


def cmc(rankings: list[RankingResult], max_rank: int) -> np.ndarray:
    """``cmc[k-1]`` is the fraction of queries with a correct match within the top ``k``."""
    if not rankings:
        return np.zeros(max_rank)
    gallery = len(rankings[0].ranked_gallery_ids)
    if max_rank > gallery:
        raise ValueError(f"max_rank {max_rank} exceeds gallery size {gallery}")
    counts = np.zeros(max_rank)
    for r in rankings:
        hit = r.first_hit()
        if hit is not None and hit <= max_rank:
            counts[hit - 1:] += 1
    return counts / len(rankings)


def average_precision(r: RankingResult) -> float:
    rel = r.ranked_gallery_ids == r.query_id
    if not rel.any():
        raise NoRelevantItem(f"query identity {r.query_id} has no gallery match")
    positions = np.flatnonzero(rel) + 1
    return float(np.mean(np.arange(1, len(positions) + 1) / positions))


def mean_ap(rankings: list[RankingResult]) -> float:
    if not rankings:
        raise NoRelevantItem("no queries")
    return float(np.mean([average_precision(r) for r in rankings]))


# ---------------------------------------------------------------------------
# protocol


@dataclass(frozen=True)
class ProtocolConfig:
    mode: str = "t2v"
    shots: int = 1
    trials: int = 10
    seed: int = 0
    max_rank: int = 20
    similarity: str = "cosine"

    def __post_init__(self):
        object.__setattr__(self, "mode", MODE_ALIASES.get(self.mode, self.mode))
        if self.mode not in MODES:
            raise ValueError(f"mode must be v2t or t2v, got {self.mode!r}")
        if self.shots not in (1, 10):
            raise ValueError("shots must be 1 or 10")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.max_rank < 1:
            raise ValueError("max_rank must be >= 1")

    def as_dict(self) -> dict:
        return asdict(self)


def run_protocol(embeddings, identities, modalities,
                 cfg: ProtocolConfig = ProtocolConfig()) -> dict:
    """Repeated random-gallery evaluation.

    Every sample of the query modality is a query.  Each trial draws
    ``cfg.shots`` gallery samples per identity from the other modality with
    a generator seeded by ``(cfg.seed, trial)``.
    """
    E = np.asarray(embeddings, dtype=np.float64)
    ids, mods = np.asarray(identities), np.asarray(modalities)
    qmod, gmod = MODES[cfg.mode]
    qsel = np.flatnonzero(mods == qmod)
    pools = {int(i): np.flatnonzero((ids == i) & (mods == gmod)) for i in np.unique(ids[qsel])}
    short = sorted(i for i, p in pools.items() if len(p) < cfg.shots)
    if short:
        raise InsufficientGallerySamples(
            f"identities {short[:5]} have fewer than {cfg.shots} gallery samples")
    if not pools:
        raise EmptyGallery("no queries or gallery identities")
    per_trial = []
    for trial in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, trial])
        gsel = np.concatenate([rng.choice(pools[i], size=cfg.shots, replace=False)
                               for i in sorted(pools)])
        rankings = rank(E[qsel], E[gsel], ids[qsel], ids[gsel], metric=cfg.similarity)
        k = min(cfg.max_rank, len(gsel))
        curve = cmc(rankings, k)
        per_trial.append({"trial": trial, "rank1": float(curve[0]), "map": mean_ap(rankings),
                          "cmc": curve.tolist()})
    curves = np.array([t["cmc"] for t in per_trial])
    maps = np.array([t["map"] for t in per_trial])
    return {
        "protocol": cfg.as_dict(),
        "trials": cfg.trials,
        "cmc": curves.mean(0).tolist(),
        "cmc_std": curves.std(0).tolist(),
        "rank1": float(curves[:, 0].mean()),
        "rank1_std": float(curves[:, 0].std()),
        "map": float(maps.mean()),
        "map_std": float(maps.std()),
        "per_trial": per_trial,
    }


def write_metrics_json(result: dict, path, extra: dict | None = None) -> None:
    doc = dict(result)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_cmc_csv(result: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "cmc"])
        for k, value in enumerate(result["cmc"], 1):
            w.writerow([k, repr(float(value))])
