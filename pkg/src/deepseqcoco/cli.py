"""Command-line entry point: ``deepseqcoco train|evaluate|predict|inspect|synth``.

Exit codes: 0 success, 1 partial prediction failure, 2 config error,
3 numeric abort, 4 checkpoint mismatch, 5 data error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .augment import rescale
from .checkpoint import load_checkpoint
from .config import OUT_DIR_ENV, RunConfig, load_config
from .dataset import (ImageSet, SplitConfig, decode_image, make_synthetic_dataset, read_manifest, resize,
                      scan_dataset, split)
from .errors import CheckpointError, ConfigError, DataError, NumericError, SpecError
from .nn import PRESETS, build_network, count_params, preset
from .tensor import Tensor, no_tape, save_tensor
from .trainer import TrainConfig, evaluate, fit, predict

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECKPOINT, EXIT_DATA = range(6)


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_samples(root=None, manifest=None):
    if manifest is not None:
        samples, classes = read_manifest(manifest)
    else:
        samples, classes = scan_dataset(root)
    if not samples:
        raise DataError(f"no images found under {root or manifest}")
    return samples, classes


def cmd_train(args) -> int:
    try:
        cfg: RunConfig = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.preset:
            cfg = cfg.with_preset(args.preset)
        if args.out:
            cfg.output_dir = Path(args.out)
        if args.data:
            cfg.dataset_root, cfg.manifest = Path(args.data), None
        if cfg.dataset_root is None and cfg.manifest is None:
            raise ConfigError("no dataset given (dataset.root, dataset.manifest or --data)")
        train_cfg = TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                                seed=cfg.seed if cfg.train_seed is None else cfg.train_seed,
                                schedule=cfg.schedule, augment=cfg.augment, eval_every_epoch=cfg.eval_every_epoch)
    except (ConfigError, SpecError) as exc:
        return _fail(EXIT_CONFIG, str(exc))

    out = cfg.resolved_output_dir()
    try:
        samples, classes = _load_samples(cfg.dataset_root, cfg.manifest)
        if len(classes) != cfg.network.num_classes:
            return _fail(EXIT_DATA, f"dataset has {len(classes)} classes, network expects {cfg.network.num_classes}")
        train_samples, val_samples = split(samples, cfg.split)
        size = tuple(cfg.network.input_size[:2])
        train_set, val_set = ImageSet(train_samples, size), ImageSet(val_samples, size)
        network, store = build_network(cfg.network, cfg.seed)
        train_cfg.checkpoint_path = out / "model.dsqc"
        meta = {"class_names": classes, "split": cfg.split.to_dict(), "preset": cfg.preset_name}
        result = fit(network, store, train_set, val_set, train_cfg, metadata=meta)
        metrics.write_history_csv(result.history, out / "history.csv")
        metrics.write_timing_csv(result.history, out / "epoch_times.csv")
        ev = evaluate(network, val_set, batch_size=cfg.batch_size, class_names=classes)
        metrics.emit_report(ev.report, result.history, ev.confusion, ev.roc, out, loss=ev.loss,
                            top_k=_top_k(ev, cfg.network.num_classes))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, f"training aborted: {exc}")
    except DataError as exc:
        return _fail(EXIT_DATA, str(exc))
    for r in result.history:
        print(f"epoch {r.epoch} {r.optimizer} train_loss={r.train_loss:.4f} train_acc={r.train_accuracy:.4f} "
              f"val_loss={r.val_loss:.4f} val_acc={r.val_accuracy:.4f} time={r.seconds:.1f}s")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def _top_k(ev, num_classes: int) -> dict:
    return {k: ev.top_k(k) for k in sorted({1, min(5, num_classes)})}


def cmd_evaluate(args) -> int:
    try:
        network, store, meta = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, str(exc))
    root = Path(args.data) if args.data else None
    manifest = Path(args.manifest) if args.manifest else None
    if root is None and manifest is None:
        return _fail(EXIT_CONFIG, "give --data or --manifest")
    try:
        samples, classes = _load_samples(root, manifest)
    except DataError as exc:
        return _fail(EXIT_DATA, str(exc))
    if len(classes) != network.spec.num_classes:
        return _fail(EXIT_CHECKPOINT,
                     f"dataset has {len(classes)} classes, checkpoint expects {network.spec.num_classes}")
    stored = meta.get("class_names")
    if stored is not None and list(stored) != classes:
        return _fail(EXIT_CHECKPOINT, f"dataset classes {classes} differ from checkpoint classes {stored}")

    subset = args.split
    if subset == "val" and "split" not in meta:
        subset = "all"
    if subset == "val":
        _, samples = split(samples, SplitConfig(**meta["split"]))
    out = Path(args.out or Path(_default_out()) / "eval")
    try:
        ev = evaluate(network, ImageSet(samples, tuple(network.spec.input_size[:2])), class_names=classes)
    except DataError as exc:
        return _fail(EXIT_DATA, str(exc))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    metrics.emit_report(ev.report, None, ev.confusion, ev.roc, out, loss=ev.loss,
                        top_k=_top_k(ev, network.spec.num_classes))
    print(f"evaluated {len(samples)} images ({subset}): loss={ev.loss:.6g} accuracy={ev.accuracy:.6g} "
          f"auc_macro={ev.roc.macro_auc:.6g}")
    print(metrics.format_class_report(ev.report), end="")
    print(f"report: {out}")
    return EXIT_OK


def _default_out() -> str:
    return os.environ.get(OUT_DIR_ENV, "runs")


def cmd_predict(args) -> int:
    try:
        network, _, meta = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, str(exc))
    names = meta.get("class_names") or [str(k) for k in range(network.spec.num_classes)]
    failures = 0
    times = []
    features = []
    for path in args.images:
        try:
            name, probs, elapsed = predict(network, path, names)
        except DataError as exc:
            failures += 1
            print(f"{path} ERROR {exc}")
            continue
        times.append(elapsed)
        probs_txt = " ".join(f"{p:.6f}" for p in probs)
        print(f"{path} {name} {probs_txt} {elapsed * 1000:.3f}")
        if args.dump_features:
            features.append(_features(network, path))
    if times:
        print(f"# images={len(args.images)} ok={len(times)} failed={failures} "
              f"mean_ms={1000 * float(np.mean(times)):.3f}")
    if args.dump_features and features:
        save_tensor(args.dump_features, np.concatenate(features))
    return EXIT_PARTIAL if failures else EXIT_OK


def _features(network, path) -> np.ndarray:
    h, w, _ = network.spec.input_size
    img = resize(decode_image(path), (h, w))[None]
    with no_tape():
        return network.forward_features(Tensor(rescale(img))).data


def cmd_inspect(args) -> int:
    if args.checkpoint:
        try:
            network, store, _ = load_checkpoint(args.checkpoint)
        except CheckpointError as exc:
            return _fail(EXIT_CHECKPOINT, str(exc))
        label = str(args.checkpoint)
    else:
        name = args.preset or "fidelity-b3"
        try:
            network, store = build_network(preset(name), 0)
        except SpecError as exc:
            return _fail(EXIT_CONFIG, str(exc))
        label = f"preset {name}"
    print(render_summary(network, store, label), end="")
    return EXIT_OK


def render_summary(network, store, label: str) -> str:
    rows = network.layer_table()
    lines = [f"Model: {label}", f"{'Layer':<20}{'Output Shape':<24}{'Param #':>12}", "-" * 56]
    for row in rows:
        lines.append(f"{row.name:<20}{_shape(row.output_shape):<24}{row.params:>12}")
    total, trainable, frozen = count_params(store)
    head = rows[-1]
    extractor = total - head.params
    lines += ["-" * 56,
              f"{'feature_extractor':<20}{_shape((None, network.spec.head_channels)):<24}{extractor:>12}",
              f"{'dense':<20}{_shape(head.output_shape):<24}{head.params:>12}",
              "-" * 56,
              f"Total params: {total}",
              f"Trainable params: {trainable}",
              f"Non-trainable params: {frozen}"]
    return "\n".join(lines) + "\n"


def _shape(shape) -> str:
    return "(" + ", ".join("None" if d is None else str(d) for d in shape) + ")"


def cmd_synth(args) -> int:
    classes = make_synthetic_dataset(args.root, args.count, args.classes, args.size, args.seed)
    print(f"wrote {args.count} images in {len(classes)} classes under {args.root}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepseqcoco", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a run configuration")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--data", help="dataset root (overrides the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default: config, then ${OUT_DIR_ENV}, then ./runs)")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint and write report files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset root")
    p.add_argument("--manifest", help="path<TAB>class manifest")
    p.add_argument("--split", choices=("val", "all"), default="val",
                   help="'val' re-derives the validation split stored in the checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify image files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dump-features", help="write pooled features of the images as a DSQT file")
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", help="print the layer table and parameter totals")
    p.add_argument("--checkpoint")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("synth", help="write a synthetic colour-coded toy dataset")
    p.add_argument("root")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
