"""Command-line entry point.

Subcommands cover the whole workflow: ``synth`` (generate a labeled
dataset), ``preprocess`` (raw echoes to maps), ``train`` (episodic
meta-training), ``eval`` (protocol tables, ablation, scenario sweeps) and
``inspect`` (peek at one map file).  Every run directory receives the full
serialized configuration (``run_config.toml``) so results can be reproduced
bit for bit.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .configio import dump_toml, load_toml
from .episodes import (EpisodicTrainer, SplitSpec, TrainConfig, evaluate,
                       load_network, protocol_name, scenario_sweep)
from .exceptions import (ConfigError, DegenerateInputError, FormatError,
                         RdFewShotError, SamplingError)
from .radar import ChirpConfig
from .rdm_io import load_dataset, read_rdm
from .synth import DEFAULT_CLASSES, SynthSpec, preprocess_raw, synth_dataset


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _chirp_from_config(cfg: dict) -> ChirpConfig:
    radar = cfg.get("radar", {})
    known = {k: radar[k] for k in ("bandwidth", "carrier_start", "chirp_duration",
                                   "sample_rate", "samples_per_chirp",
                                   "chirps_per_frame") if k in radar}
    if "samples_per_chirp" in known:
        known["samples_per_chirp"] = int(known["samples_per_chirp"])
    if "chirps_per_frame" in known:
        known["chirps_per_frame"] = int(known["chirps_per_frame"])
    return ChirpConfig(**known)


# ---------------------------------------------------------------------------
# synth / preprocess
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_toml(args.config) if args.config else {}
    section = dict(cfg.get("synth", {}))
    if args.classes:
        section["classes"] = args.classes
    for flag, key in (("frames", "frames_per_class_per_aspect"), ("snr", "snr_db"),
                      ("aspects", "aspects"), ("distances", "distances"),
                      ("subject_scales", "subject_scales")):
        value = getattr(args, flag)
        if value is not None:
            section[key] = value
    if args.seed is not None:
        section["seed"] = args.seed
    for name in section.get("classes", []):
        if name not in DEFAULT_CLASSES:
            raise UsageError(
                f"unknown motion class {name!r}; available classes: "
                + ", ".join(DEFAULT_CLASSES))
    for key in ("classes", "aspects", "distances", "subject_scales"):
        if key in section:
            section[key] = tuple(section[key])
    spec = SynthSpec(**section)
    chirp = _chirp_from_config(cfg)
    out = Path(args.out)
    manifest = synth_dataset(spec, chirp, out, emit_raw=args.raw)
    dump_toml({"synth": {k: (list(v) if isinstance(v, tuple) else v)
                         for k, v in vars(spec).items()},
               "radar": chirp.to_dict()}, out / "run_config.toml")
    n_files = sum(sum(per.values()) for per in manifest["counts"].values())
    print(f"wrote {n_files} {'raw frames' if args.raw else 'maps'} "
          f"({len(manifest['classes'])} classes x {len(manifest['aspects'])} aspects) "
          f"to {out}")
    return 0


def cmd_preprocess(args) -> int:
    manifest = preprocess_raw(args.input, args.out, window=args.window)
    n_files = sum(sum(per.values()) for per in manifest["counts"].values())
    print(f"converted {n_files} raw frames to maps in {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train_config(args) -> tuple:
    cfg = load_toml(args.config) if args.config else {}
    section = dict(cfg.get("train", {}))
    overrides = {"n_way": args.n, "k_shot": args.k, "t_query": args.t,
                 "epochs": args.epochs, "episodes_per_epoch": args.episodes_per_epoch,
                 "lr": args.lr, "optimizer": args.optimizer, "seed": args.seed,
                 "metric": args.metric, "val_episodes": args.val_episodes}
    for key, value in overrides.items():
        if value is not None:
            section[key] = value
    if args.no_se:
        section["se_enabled"] = False
    train_cfg = TrainConfig(**section)
    split_section = dict(cfg.get("split", {}))
    split = SplitSpec(
        train_aspects=tuple(split_section.get("train_aspects", (0.0,))),
        test_aspects=tuple(split_section.get("test_aspects", (90.0,))))
    return train_cfg, split


def _write_run_config(out: Path, train_cfg: TrainConfig, split: SplitSpec,
                      data_path: str) -> None:
    dump_toml({
        "data": {"path": str(data_path)},
        "train": train_cfg.to_dict(),
        "split": {"train_aspects": list(split.train_aspects),
                  "test_aspects": list(split.test_aspects)},
    }, out / "run_config.toml")


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").exists():
        raise FormatError(
            f"{data_dir}: no manifest.json found; generate a dataset first "
            f"(rdfewshot synth --out {data_dir})")
    train_cfg, split = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_config(out, train_cfg, split, args.data)
    dataset = load_dataset(data_dir)
    train_view = split.train_view(dataset)
    trainer = EpisodicTrainer(train_cfg)
    trainer.fit(train_view, ckpt_dir=out / "ckpt", resume_from=args.resume)
    metrics = {"history": trainer.history_,
               "best_epoch": trainer.best_epoch_,
               "best_val_acc": trainer.best_val_acc_,
               "train_config": train_cfg.to_dict()}
    (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=1))
    print(f"trained {train_cfg.epochs} epochs; best val acc "
          f"{trainer.best_val_acc_:.2f}% at epoch {trainer.best_epoch_}; "
          f"checkpoints in {out / 'ckpt'}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _method_name(network, se_override=None) -> str:
    if network.config.metric == "prototype":
        return "prototype_mean"
    if network.config.se_enabled and se_override is None:
        return "knn_cosine_se"
    return "knn_cosine"


def cmd_eval(args) -> int:
    data_dir = Path(args.data)
    dataset = load_dataset(data_dir)
    split = SplitSpec(test_aspects=tuple(args.test_aspects)) \
        if args.test_aspects else SplitSpec()
    test_view = split.test_view(dataset)
    network = load_network(args.ckpt)
    if args.metric:
        network.config = replace(network.config,
                                 metric={"knn": "knn", "proto": "prototype"}[args.metric])
    if args.n and args.k:
        protocols = [(args.n, args.k, args.t or 15)]
    else:
        protocols = [(3, 1, 15), (3, 5, 15), (3, 10, 15)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    variants = [(None, _method_name(network))]
    if args.ablate:
        ones = np.ones(network.config.descriptor_dim, dtype=np.float32)
        variants = [(None, _method_name(network)), (ones, _method_name(network, ones))]

    all_results, rows = {}, []
    for se_override, method in variants:
        results = evaluate(network, test_view, protocols, episodes=args.episodes,
                           seed=args.seed or 0, se_override=se_override)
        all_results[method] = {k: m.to_dict() for k, m in results.items()}
        for (n, k, t), (name, m) in zip(protocols, results.items()):
            rows.append({"method": method, "N": n, "K": k,
                         "mean_acc": f"{m.mean_acc:.3f}", "ci95": f"{m.ci95:.3f}"})
    if args.ablate and len(variants) == 2:
        base = variants[1][1]
        for name in all_results[variants[0][1]]:
            delta = (all_results[variants[0][1]][name]["mean_acc"]
                     - all_results[base][name]["mean_acc"])
            print(f"{name}: attention delta {delta:+.3f} points")

    sweep_rows = []
    if args.sweep:
        n, k, t = protocols[0]
        sweep = scenario_sweep(network, test_view, args.sweep, protocol=(n, k, t),
                               episodes=min(args.episodes, 300), seed=args.seed or 0)
        for row in sweep:
            sweep_rows.append({"by": row["by"], "value": row["value"],
                               "metrics": row["metrics"].to_dict()})

    metrics = {"results": all_results, "sweep": sweep_rows,
               "episodes": args.episodes, "protocols": [list(p) for p in protocols]}
    (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=1))
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", "N", "K", "mean_acc", "ci95"])
        writer.writeheader()
        writer.writerows(rows)
    with open(out / "confusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        for method, per_protocol in all_results.items():
            for name, m in per_protocol.items():
                writer.writerow([method, name])
                writer.writerows(m["confusion"])
    dump_toml({"eval": {"data": str(args.data), "ckpt": str(args.ckpt),
                         "episodes": args.episodes, "seed": args.seed or 0,
                         "ablate": bool(args.ablate),
                         "protocols": [list(p) for p in protocols]}},
              out / "run_config.toml")
    for row in rows:
        print(f"{row['method']:>14} {row['N']}-way {row['K']}-shot: "
              f"{row['mean_acc']}% +- {row['ci95']}")
    return 0


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------

def cmd_inspect(args) -> int:
    rdmap = read_rdm(args.file)
    values = rdmap.values
    r, dpl = rdmap.peak_bins
    print(f"file: {args.file}")
    print(f"shape: {values.shape[0]} range bins x {values.shape[1]} doppler bins")
    print(f"min/max: {values.min():.6f} / {values.max():.6f}")
    print(f"peak: range bin {r}, doppler bin {dpl}")
    meta = rdmap.meta
    print(f"meta: class={meta.class_label!r} aspect={meta.aspect_deg:g} "
          f"subject={meta.subject_id} distance={meta.distance_m:g} "
          f"frame={meta.frame_index}")
    if args.png:
        try:
            import matplotlib
            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError as exc:
            raise RdFewShotError("matplotlib is required for --png output") from exc
        plt.imsave(args.png, values, cmap="viridis", origin="lower")
        print(f"wrote {args.png}")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="rdfewshot",
                     description="Few-shot motion recognition on range-Doppler maps")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="synth.toml with [synth] and [radar] sections")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--classes", nargs="+", metavar="NAME")
    p.add_argument("--frames", type=int, help="frames per class per aspect")
    p.add_argument("--aspects", nargs="+", type=float)
    p.add_argument("--distances", nargs="+", type=float)
    p.add_argument("--subject-scales", dest="subject_scales", nargs="+", type=float)
    p.add_argument("--snr", type=float, help="SNR in dB at the reference distance")
    p.add_argument("--raw", action="store_true", help="emit raw echoes instead of maps")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="convert raw echoes into maps")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", default="rect", choices=("rect", "hann"))
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="episodic meta-training")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", help="train.toml with [train] and [split] sections")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="training way count")
    p.add_argument("--k", type=int, help="training shot count")
    p.add_argument("--t", type=int, help="queries per episode")
    p.add_argument("--epochs", type=int)
    p.add_argument("--episodes-per-epoch", dest="episodes_per_epoch", type=int)
    p.add_argument("--val-episodes", dest="val_episodes", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--metric", choices=("knn", "prototype"))
    p.add_argument("--no-se", action="store_true", help="disable channel attention")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over test protocols")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--metric", choices=("knn", "proto"))
    p.add_argument("--ablate", action="store_true",
                   help="also evaluate with attention forced to identity")
    p.add_argument("--sweep", choices=("distance", "subject"))
    p.add_argument("--test-aspects", dest="test_aspects", nargs="+", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize one .rdm file")
    p.add_argument("file")
    p.add_argument("--png", help="write a colormapped PNG for viewing")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, SamplingError, DegenerateInputError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except RdFewShotError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
