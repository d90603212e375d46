"""``vocoder-ood`` command line: synth, train, eval, probe, plot-mse.

Exit codes: 0 success, 1 usage or config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import datastore, detector, metrics, plotting
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .datastore import OOD
from .probe import probe_layers
from .trainer import fit, load_checkpoint, save_checkpoint, with_ablation
from .model import VocoderAutoencoder

log = logging.getLogger("vocoder_ood")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output = args.out
    if getattr(args, "slack", None) is not None:
        cfg.trainer.slack = args.slack
    return cfg


def _prepare_out(out: Path, marker: str, force: bool) -> None:
    if (out / marker).exists() and not force:
        raise UsageError(f"{out / marker} already exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(json.dumps(obj, indent=2), encoding="utf-8")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output) / "data"
    _prepare_out(out, "manifest.jsonl", args.force)
    syn, n_ood = cfg.synthetic_config()
    manifest = datastore.generate_synthetic(syn, n_ood, out)
    print(manifest)
    return 0


def _dataset_for(cfg: ExperimentConfig, out: Path) -> datastore.FeatureDataset:
    if cfg.data.manifest:
        return datastore.load_dataset(cfg.data.manifest)
    syn, n_ood = cfg.synthetic_config()
    manifest = datastore.generate_synthetic(syn, n_ood, out / "data")
    cfg.data.manifest = str(manifest)
    return datastore.load_dataset(manifest)


def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output)
    _prepare_out(out, "checkpoint.ckpt", args.force)
    train_cfg = with_ablation(cfg.train_config(), args.ablate or [])
    cfg.losses.alpha, cfg.losses.beta = train_cfg.weights.alpha, train_cfg.weights.beta

    ds = _dataset_for(cfg, out)
    train, dev = ds.split("train"), ds.split("dev")
    dtype = getattr(torch, cfg.model.dtype)
    model = VocoderAutoencoder(cfg.model_config(ds.dim, ds.n_classes), n_layers=ds.n_layers,
                               combiner=cfg.combiner_spec(), seed=cfg.seed, dtype=dtype)
    dump_config(cfg, out / "config.yaml")
    model, report = fit(model, train, train_cfg, dev=dev, log_path=out / "train_log.jsonl")
    save_checkpoint(model, report.thresholds, out / "checkpoint.ckpt")
    rep = report.to_dict()
    rep["ablate"] = list(args.ablate or [])
    _write_json(out / "train_report.json", rep)
    print(out / "checkpoint.ckpt")
    return 0


def cmd_eval(args) -> int:
    model, thresholds = load_checkpoint(args.checkpoint)
    if thresholds is None:
        raise detector.UncalibratedModelError("checkpoint has no thresholds; cannot evaluate")
    ds = datastore.load_dataset(args.manifest).split(args.split)
    if len(ds) == 0:
        raise ValueError(f"split {args.split!r} is empty")
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    rows = detector.score_matrix(model, thresholds, ds)
    cm = metrics.confusion([r.decision for r in rows], ds.labels, model.n_classes)
    rep = metrics.report(cm)
    detector.write_score_table(out / f"scores_{args.split}.jsonl", rows, thresholds)
    _write_json(out / f"metrics_{args.split}.json", {**dataclasses.asdict(rep), "confusion": cm.tolist()})
    print(rep.table(Path(args.checkpoint).parent.name or "model"))
    return 0


def cmd_probe(args) -> int:
    cfg = _config(args)
    manifest = args.manifest or cfg.data.manifest
    if not manifest:
        raise UsageError("probe needs --manifest or data.manifest in the config")
    ds = datastore.load_dataset(manifest)
    keep = [i for i, lab in enumerate(ds.labels) if lab != OOD]
    result = probe_layers(ds.take(keep), cfg.probe_config())
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / "probe.json.partial"
    tmp.write_text(result.to_json(), encoding="utf-8")
    os.replace(tmp, out / "probe.json")
    plotting.plot_probe(result, out / "probe.png")
    for k, a in enumerate(result.accuracies):
        print(f"layer {k:3d}  acc {a:.4f}{'  *' if k == result.best_layer else ''}")
    return 0


def cmd_plot_mse(args) -> int:
    rows, thresholds = detector.read_score_table(args.scores)
    out = Path(args.out) if args.out else Path(args.scores).with_suffix(".png")
    plotting.plot_mse_heatmap(rows, thresholds, out)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vocoder-ood", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="torch intra-op threads (1 = deterministic)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic feature dataset")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train, calibrate thresholds, write checkpoint")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--force", action="store_true")
    s.add_argument("--slack", type=float)
    s.add_argument("--ablate", action="append", choices=["no-contrastive", "no-classifier"])
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a split and report Acc/MAP/Recall/F1")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test", choices=datastore.SPLITS)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("probe", help="per-layer linear probe accuracy")
    s.add_argument("--config")
    s.add_argument("--manifest")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("plot-mse", help="heatmap of a score table")
    s.add_argument("--scores", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_plot_mse)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
