"""``gotreid`` command line: synth, train, eval, ablate, got.

Every subcommand accepts ``--config FILE`` (flat ``key = value`` text) and
any number of ``--set key=value`` overrides.  Errors are printed as
``error: <module>.<ErrorName>: message`` with exit status 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import evaluation as E
from . import experiment as X
from . import model as M
from . import ot
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DimensionMismatch, GotReidError, ZeroNormRow


def _dump(doc, path=None) -> str:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    for flag, key in (("phi", "loss.phi"), ("reg", "sinkhorn.reg"), ("shots", "protocol.shots"),
                      ("mode", "protocol.mode")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    for flag, key in (("no_ot", "flags.use_ot"), ("no_cl", "flags.use_contrastive"),
                      ("no_gat", "flags.use_gat"), ("no_ce", "flags.use_channel_exchange")):
        if getattr(args, flag, False):
            out[key] = False
    if getattr(args, "no_gat", False):
        out["flags.use_channel_exchange"] = False
    return out


def _config(args, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = load_config(args.config, base=base)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg.override(_overrides(args))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = _config(args)
    ds = D.synthesize(cfg.synth)
    D.write_features(ds, args.out)
    counts = ds.counts()
    print(f"wrote {len(ds)} records ({counts['RGB']} RGB, {counts['IR']} IR, "
          f"{len(ds.identity_set())} identities, K={ds.K}, d={ds.d}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    dataset = X.dataset_for(cfg, args.data)
    train_set, _ = X.split(cfg, dataset)
    log_path = Path(args.log if args.log else str(args.out) + ".log.jsonl")
    lines = [json.dumps({"config": cfg.as_json(), "config_hash": cfg.hash()}, sort_keys=True)]

    def on_epoch(entry):
        lines.append(json.dumps(entry, sort_keys=True))
        print(" ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                       for k, v in entry.items()), flush=True)

    try:
        result = X.train(cfg, train_set, on_epoch)
    finally:
        log_path.write_text("\n".join(lines) + "\n")
    M.save_checkpoint(result.model, args.out, cfg.to_text())
    print(f"saved checkpoint {args.out}; log {log_path}")
    return 0


def cmd_eval(args) -> int:
    model, stored = X.model_from_checkpoint(M.load_checkpoint(args.checkpoint))
    cfg = _config(args, stored)
    dataset = X.dataset_for(cfg, args.data)
    target = dataset if args.split == "all" else X.split(cfg, dataset)[1]
    result = X.evaluate(model, target, cfg)
    doc = dict(result)
    doc.update({"config": cfg.as_json(), "split": args.split, "checkpoint_config_hash":
                stored.hash(), "num_samples": len(target)})
    out = args.out or "metrics.json"
    _dump(doc, out)
    E.write_cmc_csv(result, args.cmc or str(Path(out).with_suffix(".csv")))
    print(f"{cfg.protocol.mode} shots={cfg.protocol.shots}: Rank-1 {result['rank1']:.4f} "
          f"mAP {result['map']:.4f} -> {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    dataset = D.read_features(args.data) if args.data else None
    base_seed = cfg.train.seed
    seeds = [base_seed + s for s in range(args.seeds)]

    def on_row(row):
        print(f"{row['row']:<12s} Rank-1 {row['rank1_mean']:.4f} ± {row['rank1_std']:.4f}  "
              f"mAP {row['map_mean']:.4f} ± {row['map_std']:.4f}", flush=True)

    table = X.ablation(cfg, seeds, dataset, on_row=on_row)
    _dump({"config": cfg.as_json(), "seeds": seeds, "rows": table}, args.out or "ablation.json")
    return 0


def cmd_got(args) -> int:
    cfg = _config(args)
    a, b = D.read_features(args.file_a), D.read_features(args.file_b)
    if len(a) != len(b) or a.nodes.shape[1:] != b.nodes.shape[1:]:
        raise DimensionMismatch(f"files hold {len(a)} x {a.nodes.shape[1:]} and "
                                f"{len(b)} x {b.nodes.shape[1:]} node sets")
    phi = cfg.loss.phi
    pairs = []
    for i in range(len(a)):
        Va, Vb = a.nodes[i].astype(np.float64), b.nodes[i].astype(np.float64)
        entry = {"index": i, "identity_a": int(a.identities[i]),
                 "identity_b": int(b.identities[i])}
        try:
            plan, dist = ot.got_distance(Va, Vb, phi, cfg.sinkhorn)
        except ZeroNormRow as exc:
            # occluded parts have no direction; report and move on
            entry.update({"got": None, "wd": None, "gw": None, "error": exc.qualified_name})
        else:
            wd, gw = ot.got_terms(plan, Va, Vb)
            entry.update({"got": dist, "wd": wd, "gw": gw,
                          "marginal_violation": plan.marginal_violation()})
        pairs.append(entry)
    valid = [p["got"] for p in pairs if p["got"] is not None]
    doc = {"config": cfg.as_json(), "phi": phi, "pairs": pairs, "skipped": len(pairs) - len(valid),
           "mean_got": float(np.mean(valid)) if valid else None}
    text = _dump(doc, args.out)
    if args.out is None:
        sys.stdout.write(text)
    else:
        print(f"{len(valid)} pairs ({doc['skipped']} skipped), mean D_ot {doc['mean_got']} "
              f"-> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p, flags: bool = True):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="sets synth, train, split and protocol seeds")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    if flags:
        p.add_argument("--phi", type=str, help="loss.phi")
        p.add_argument("--reg", type=str, help="sinkhorn.reg")
        p.add_argument("--no-ot", action="store_true")
        p.add_argument("--no-cl", action="store_true")
        p.add_argument("--no-gat", action="store_true", help="also disables channel exchange")
        p.add_argument("--no-ce", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gotreid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic feature file")
    _common(p, flags=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model, write checkpoint and JSONL log")
    _common(p)
    p.add_argument("--data", help="feature file (default: synthesize from config)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSONL log path (default: <out>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p, flags=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="feature file (default: synthesize from config)")
    p.add_argument("--shots", type=str, choices=("1", "10"))
    p.add_argument("--mode", choices=("v2t", "t2v"))
    p.add_argument("--split", choices=("test", "all"), default="test")
    p.add_argument("--out", help="metrics JSON (default: metrics.json)")
    p.add_argument("--cmc", help="CMC CSV (default: metrics path with .csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="five-row flag study")
    _common(p)
    p.add_argument("--data", help="feature file (default: one synthetic set per seed)")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--out", help="table JSON (default: ablation.json)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("got", help="per-pair GOT distances between two feature files")
    _common(p)
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--out", help="report JSON (default: stdout)")
    p.set_defaults(func=cmd_got)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GotReidError as exc:
        print(f"error: {exc.qualified_name}: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: cli.OSError: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
