"""Glue between :class:`~gotreid.config.ExperimentConfig` and the library.

Builds models, schedules and solver settings from a config, and runs the
train-then-evaluate loop used by the command line and the ablation study.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import data as D
from . import evaluation as E
from . import graph as gat_mod
from . import model as M
from .config import ExperimentConfig, from_text
from .errors import CheckpointError
from .ot import SinkhornConfig

# (tag, use_ot, use_contrastive, use_gat, use_channel_exchange)
ABLATION_ROWS = (
    ("B", False, False, False, False),
    ("B+O", True, False, False, False),
    ("B+O+CL", True, True, False, False),
    ("B+O+CL+G", True, True, True, False),
    ("B+O+CL+G+CE", True, True, True, True),
)


def with_flags(cfg: ExperimentConfig, use_ot, use_contrastive, use_gat, use_channel_exchange):
    return cfg.override({"flags.use_ot": use_ot, "flags.use_contrastive": use_contrastive,
                         "flags.use_gat": use_gat,
                         "flags.use_channel_exchange": use_channel_exchange})


def skeleton_of(cfg: ExperimentConfig):
    if cfg.model.skeleton_file:
        return tuple(gat_mod.read_skeleton(cfg.model.skeleton_file))
    return gat_mod.DEFAULT_SKELETON


def model_config(cfg: ExperimentConfig, d_in: int, K: int, num_classes: int) -> M.ModelConfig:
    f, m = cfg.flags, cfg.model
    return M.ModelConfig(d_in=d_in, widths=m.widths, K=K, heads=m.heads,
                         num_classes=num_classes, precomputed=m.precomputed,
                         use_ot=f.use_ot, use_contrastive=f.use_contrastive, use_gat=f.use_gat,
                         use_channel_exchange=f.use_channel_exchange, skeleton=skeleton_of(cfg),
                         leaky_slope=m.leaky_slope, bn_eps=m.bn_eps, theta=cfg.loss.theta)


def schedule(cfg: ExperimentConfig) -> M.TrainSchedule:
    t = cfg.train
    return M.TrainSchedule(base_lr=t.base_lr, decay_epochs=t.decay_epochs,
                           decay_factors=t.decay_factors, total_epochs=t.total_epochs,
                           momentum=t.momentum, seed=t.seed, steps_per_epoch=t.steps_per_epoch,
                           P=t.P, Q=t.Q)


def training_sinkhorn(cfg: ExperimentConfig) -> SinkhornConfig:
    return replace(cfg.sinkhorn, outer_iter=cfg.train.ot_outer_iter)


def dataset_for(cfg: ExperimentConfig, path=None) -> D.FeatureDataset:
    return D.read_features(path) if path is not None else D.synthesize(cfg.synth)


def split(cfg: ExperimentConfig, dataset: D.FeatureDataset):
    fn = D.split_by_identity if cfg.split.kind == "identity" else D.split_by_sample
    return fn(dataset, cfg.split.train_fraction, cfg.split.seed)


def build_model(cfg: ExperimentConfig, train_set: D.FeatureDataset) -> M.Model:
    n_classes = max(2, len(train_set.identity_set()))
    return M.Model(model_config(cfg, train_set.d, train_set.K, n_classes), seed=cfg.train.seed)


def train(cfg: ExperimentConfig, train_set: D.FeatureDataset, on_epoch=None) -> M.TrainResult:
    model = build_model(cfg, train_set)
    return M.train(model, train_set, schedule(cfg), cfg.loss, training_sinkhorn(cfg), on_epoch)


def evaluate(model: M.Model, dataset: D.FeatureDataset, cfg: ExperimentConfig) -> dict:
    emb = model.embed(dataset.nodes, dataset.modalities)
    return E.run_protocol(emb, dataset.identities, dataset.modalities, cfg.protocol)


def run_once(cfg: ExperimentConfig, dataset: D.FeatureDataset | None = None) -> dict:
    """Split, train and evaluate; returns the protocol metrics plus the final log entry."""
    dataset = dataset_for(cfg) if dataset is None else dataset
    train_set, test_set = split(cfg, dataset)
    result = train(cfg, train_set)
    metrics = evaluate(result.model, test_set, cfg)
    metrics["final_epoch"] = result.log[-1] if result.log else {}
    return metrics


def ablation(cfg: ExperimentConfig, seeds=(0,), dataset: D.FeatureDataset | None = None,
             rows=ABLATION_ROWS, on_row=None) -> list[dict]:
    """Five-row flag study.  Every row sees the same seeds.

    With ``dataset=None`` each seed draws its own synthetic dataset; otherwise
    the given dataset is reused and only training and gallery draws change.
    """
    table = []
    for tag, *flags in rows:
        rank1, maps = [], []
        for seed in seeds:
            run_cfg = with_flags(cfg.with_seed(int(seed)), *flags)
            metrics = run_once(run_cfg, dataset)
            rank1.append(metrics["rank1"])
            maps.append(metrics["map"])
        row = {"row": tag,
               "flags": dict(zip(("use_ot", "use_contrastive", "use_gat",
                                  "use_channel_exchange"), flags)),
               "seeds": [int(s) for s in seeds],
               "rank1": rank1, "map": maps,
               "rank1_mean": float(np.mean(rank1)), "rank1_std": float(np.std(rank1)),
               "map_mean": float(np.mean(maps)), "map_std": float(np.std(maps))}
        table.append(row)
        if on_row is not None:
            on_row(row)
    return table


def model_from_checkpoint(ckpt: M.Checkpoint) -> tuple[M.Model, ExperimentConfig]:
    """Rebuild the model and its effective config from a loaded checkpoint."""
    cfg = from_text(ckpt.config_text)
    t = ckpt.tensors
    try:
        C = t["cls_b.W"].shape[1]
        K = t["gat.bn_gamma"].shape[0] - 1
        d_in = t["enc.W_mod"].shape[1] if "enc.W_mod" in t else t["cls_b.W"].shape[0]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks tensor {exc.args[0]}") from exc
    model = M.Model(model_config(cfg, d_in, K, C), seed=cfg.train.seed)
    model.load_state(t)
    return model, cfg
