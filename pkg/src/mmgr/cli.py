"""Command-line entry point: ``mmgr <command> [options]``.

Commands: gen, flow, train, score, fuse, eval, pipeline.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .errors import ConfigError, MMGRError
from .flow import sequence_flow
from .fusion import (FusionSpec, PipelineConfig, StreamScore, fuse_scores, pipeline_predict,
                     read_labels, read_scores, write_predictions, write_scores)
from .metrics import PredictionSet, accuracy, change_analysis, confusion
from .optim import format_log_line
from .streams import StreamConfig, StreamModel, parse_bool
from .video.dataset import DatasetManifest, load_sample, write_sequence
from .video.synthetic import gen_synthetic
from .video.transforms import resample_to

log = logging.getLogger("mmgr")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MMGR_THREADS", "1")))
    except ValueError:
        return 1


def _ordered_map(fn: Callable, items: Sequence) -> list:
    """Map over ``items`` with up to ``MMGR_THREADS`` workers, results in input order."""
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _stream_config(args, modality: str | None = None) -> StreamConfig:
    values = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "agg", None):
        values["agg"] = args.agg
    if getattr(args, "classes", None):
        values["num_classes"] = str(args.classes)
    return StreamConfig.from_mapping(values, modality or args.modality)


def _manifest(args, num_classes: int | None = None) -> DatasetManifest:
    return DatasetManifest.load(args.data, args.split, num_classes)


def _needed_modalities(modality: str, sample_dir: Path) -> tuple[str, ...]:
    if modality == "flow":
        return ("flow",) if (sample_dir / "flow").is_dir() else ("rgb",)
    return (modality,)


def _load_samples(manifest: DatasetManifest, modality: str):
    def one(sid):
        return load_sample(manifest, sid, _needed_modalities(modality, manifest.split_dir / sid))
    return _ordered_map(one, manifest.ids)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    seed = 0 if args.seed is None else args.seed
    root, classes = args.out or "data", args.classes or 8
    kw = dict(frames=args.frames, size=args.size, seed=seed, rgb_noise=args.rgb_noise)
    m = gen_synthetic(root, classes, args.per_class, split="train", **kw)
    print(f"wrote {len(m)} samples to {m.split_dir}")
    if args.test_per_class:
        m = gen_synthetic(root, classes, args.test_per_class, split="test", **kw)
        print(f"wrote {len(m)} samples to {m.split_dir}")
    return 0


def cmd_flow(args) -> int:
    cfg = _stream_config(args, "flow")
    manifest = _manifest(args)

    def one(sid):
        sample = load_sample(manifest, sid, ("rgb",))
        rgb = resample_to(sample["rgb"], cfg.frames)
        write_sequence(manifest.split_dir / sid, sequence_flow(rgb, cfg.flow_alpha, cfg.flow_iters))
        return sid

    done = _ordered_map(one, manifest.ids)
    print(f"flow cached for {len(done)} samples in {manifest.split_dir}")
    return 0


def cmd_train(args) -> int:
    if not args.out:
        raise ConfigError("train needs --out for the checkpoint")
    cfg = _stream_config(args)
    manifest = _manifest(args, cfg.num_classes)
    samples = _load_samples(manifest, cfg.modality)
    model = StreamModel(cfg)
    model.fit(samples, args.epochs,
              on_epoch=lambda e, s: print(format_log_line(e, s), flush=True))
    save_checkpoint(args.out, model.net, model.optimizer)
    print(f"saved {args.out}")
    return 0


def _load_model(cfg: StreamConfig, path) -> StreamModel:
    model = StreamModel(cfg)
    load_checkpoint(path, model.net, model.optimizer)
    return model


def cmd_score(args) -> int:
    if not args.model or not args.out:
        raise ConfigError("score needs --model and --out")
    cfg = _stream_config(args)
    manifest = _manifest(args, cfg.num_classes)
    model = _load_model(cfg, args.model)
    samples = _load_samples(manifest, cfg.modality)
    scores = _ordered_map(model.score, samples)
    write_scores(args.out, StreamScore(cfg.modality, manifest.ids, np.stack(scores),
                                       model.emits_probabilities))
    print(f"wrote {args.out}")
    return 0


def _parse_weights(text: str | None, n: int) -> list[float]:
    if text is None:
        return [1.0] * n
    try:
        weights = [float(w) for w in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad --weights {text!r}") from None
    if len(weights) != n:
        raise ConfigError(f"--weights has {len(weights)} entries for {n} inputs")
    return weights


def cmd_fuse(args) -> int:
    if not args.out:
        raise ConfigError("fuse needs --out")
    streams = [read_scores(p, tag=f"s{i}") for i, p in enumerate(args.inputs)]
    spec = FusionSpec([s.tag for s in streams], _parse_weights(args.weights, len(streams)),
                      parse_bool(args.normalize) if args.normalize else False)
    fused = fuse_scores(streams, spec)
    write_scores(args.out, fused)
    pred_path = args.pred or str(Path(args.out).with_suffix("")) + "_pred.csv"
    write_predictions(pred_path, fused.ids, fused.predictions())
    print(f"wrote {args.out} and {pred_path}")
    return 0


def cmd_eval(args) -> int:
    if not args.pred or not args.truth:
        raise ConfigError("eval needs --pred and --truth")
    truth = read_labels(args.truth)
    pred = read_labels(args.pred)
    l = args.classes or max(list(truth.values()) + list(pred.values())) + 1
    p = PredictionSet.from_mappings(truth, pred, l)
    print(f"accuracy={accuracy(p):.6f} n={len(p)}")
    cm = confusion(p)
    if args.out:
        cm.to_csv(args.out)
        cm.to_csv(str(Path(args.out).with_suffix("")) + "_norm.csv", normalized=True)
    if args.base:
        base = PredictionSet.from_mappings(truth, read_labels(args.base), l)
        report = change_analysis(base, p)
        for c, (ok, bad) in enumerate(zip(report.correct, report.error)):
            print(f"class={c} correct={int(ok)} error={int(bad)}")
        print(f"total correct={report.total_correct} error={report.total_error}")
    return 0


def _parse_models(text: str | None) -> dict[str, str]:
    if not text:
        raise ConfigError("pipeline needs --models tag=ckpt[,tag=ckpt...]")
    out = {}
    for item in text.split(","):
        tag, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"bad --models entry {item!r}")
        out[tag.strip()] = path.strip()
    return out


def cmd_pipeline(args) -> int:
    if not args.out:
        raise ConfigError("pipeline needs --out")
    values = load_config(args.config)
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.classes:
        values["num_classes"] = str(args.classes)
    if args.normalize:
        values["normalize"] = args.normalize
    if args.agg:
        values["agg"] = args.agg
    pcfg = PipelineConfig.from_mapping(values)
    models = {tag: _load_model(StreamConfig.from_mapping(values, tag), path)
              for tag, path in _parse_models(args.models).items()}
    l = next(iter(models.values())).config.num_classes
    manifest = _manifest(args, l)

    def one(sid):
        wanted = set()
        for tag in models:
            wanted.update(_needed_modalities(tag, manifest.split_dir / sid))
        sample = load_sample(manifest, sid, tuple(sorted(wanted)))
        return pipeline_predict(sample, models, pcfg)

    results = _ordered_map(one, manifest.ids)
    write_predictions(args.out, manifest.ids, [r.label for r in results])
    if args.scores:
        write_scores(args.scores, StreamScore("fused", manifest.ids,
                                              np.stack([r.fused for r in results])))
    p = PredictionSet(manifest.ids, [manifest.label_of(s) for s in manifest.ids],
                      [r.label for r in results], l)
    print(f"accuracy={accuracy(p):.6f} n={len(p)}")
    return 0


COMMANDS = {"gen": cmd_gen, "flow": cmd_flow, "train": cmd_train, "score": cmd_score,
            "fuse": cmd_fuse, "eval": cmd_eval, "pipeline": cmd_pipeline}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="dataset root")
    common.add_argument("--split", default="train", help="dataset split (default: train)")
    common.add_argument("--modality", default="rgb", choices=["rgb", "flow", "depth", "saliency"])
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output path")
    common.add_argument("--weights", help="comma-separated fusion weights")
    common.add_argument("--agg", choices=["max", "mean"], help="snippet aggregation")
    common.add_argument("--normalize", choices=["true", "false"], help="softmax scores before fusing")
    common.add_argument("--classes", type=int, help="class count")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mmgr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mmgr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common],
                       help="write a synthetic dataset (default: 8 classes under ./data)")
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--test-per-class", type=int, default=0)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--rgb-noise", type=float, default=0.02)

    sub.add_parser("flow", parents=[common], help="precompute and cache optical flow")

    p = sub.add_parser("train", parents=[common], help="train one stream")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("score", parents=[common], help="write a stream's score CSV")
    p.add_argument("--model", help="checkpoint path")

    p = sub.add_parser("fuse", parents=[common], help="fuse score CSVs")
    p.add_argument("inputs", nargs="+", help="score CSV files")
    p.add_argument("--pred", help="predictions CSV (default: <out>_pred.csv)")

    p = sub.add_parser("eval", parents=[common], help="accuracy, confusion and change analysis")
    p.add_argument("--pred", help="predictions or score CSV")
    p.add_argument("--truth", help="ground-truth id,label CSV (a manifest works)")
    p.add_argument("--base", help="baseline predictions for change analysis")

    p = sub.add_parser("pipeline", parents=[common], help="score and fuse every stream end to end")
    p.add_argument("--models", help="tag=checkpoint list, e.g. rgb=a.ckpt,depth=b.ckpt")
    p.add_argument("--scores", help="also write the fused score CSV here")
    return parser


def main(argv: Iterable[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(None if argv is None else list(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"mmgr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"mmgr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except MMGRError as exc:
        print(f"mmgr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
