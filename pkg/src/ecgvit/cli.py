"""Command-line entry point: ``ecgvit <subcommand> ...``.

Exit codes: 0 success, 1 runtime/training failure, 2 input/config error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, pipeline, plotting
from .attention import attention_maps
from .errors import CheckpointError, EcgVitError, IngestionError, InputError, ParameterError
from .imageio import read_tensor, write_pgm, write_tensor
from .models import MODEL_KINDS, build_model, load_params, save_params
from .reports import format_table, write_report
from .signal_io import read_manifest
from .spectrogram import segment_to_image
from .training import fold_seed, run_losocv, train_model
from .vit import VisionTransformer

log = logging.getLogger("ecgvit")

LABEL_MODES = {"three": "three_class", "binary": "binary"}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_run(out: Path, command: str, config: dict) -> None:
    """Config snapshot plus timestamp; the only non-deterministic file in an output directory."""
    run = {"command": command, "version": __version__, "created": _now(), "config": config}
    (out / "run.json").write_text(json.dumps(run, indent=1, sort_keys=True))


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ParameterError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _parse_layers(values) -> list[int]:
    layers: list[int] = []
    for v in values:
        for part in str(v).split(","):
            if part.strip():
                try:
                    layers.append(int(part))
                except ValueError as exc:
                    raise ParameterError(f"bad layer index {part!r}") from exc
    if not layers:
        raise ParameterError("no layers requested")
    return layers


def _load(args):
    manifest = read_manifest(args.manifest)
    mode = LABEL_MODES[args.labels] if getattr(args, "labels", None) else None
    stft = pipeline.stft_config(manifest, getattr(args, "stft_win", None), getattr(args, "stft_hop", None))
    render = pipeline.render_config(manifest)
    segments, scheme = manifest.load_segments(mode)
    return manifest, segments, scheme, stft, render


def _train_cfg(args, manifest):
    return pipeline.train_config(
        manifest,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )


def cmd_spectrogram(args) -> int:
    manifest, segments, scheme, stft, render = _load(args)
    if not segments:
        raise IngestionError(f"{args.manifest}: manifest yields no segments")
    out = _out_dir(args.out)
    img_dir = out / "images"
    img_dir.mkdir(exist_ok=True)
    index = []
    for seg in segments:
        img = segment_to_image(seg.samples, stft, render, seg.segment_id)
        name = f"{seg.segment_id}.f32"
        write_tensor(img_dir / name, img.pixels, segment_id=seg.segment_id, stft=img.config_hash)
        index.append({
            "segment_id": seg.segment_id,
            "file": f"images/{name}",
            "label": seg.label,
            "class_name": scheme.class_names[seg.label],
            "subject_id": seg.subject_id,
        })
    (out / "index.json").write_text(json.dumps({"segments": index}, indent=1, sort_keys=True))
    _write_run(out, "spectrogram", {"stft": asdict(stft), "image": asdict(render), "labels": scheme.to_dict()})
    print(f"wrote {len(index)} spectrogram images to {img_dir}")
    return 0


def cmd_losocv(args) -> int:
    manifest, segments, scheme, stft, render = _load(args)
    train = _train_cfg(args, manifest)
    if not segments:
        raise IngestionError(f"{args.manifest}: manifest yields no segments")
    input_len = segments[0].samples.size
    model_cfg = pipeline.model_config(args.model, manifest, scheme.num_classes, render, input_len)
    out = _out_dir(args.out)
    snap = pipeline.snapshot(args.model, model_cfg, stft, render, train, scheme, manifest)
    data = pipeline.labeled_data(args.model, segments, scheme, stft, render)
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    report = run_losocv(
        data,
        lambda seed: build_model(args.model, model_cfg, seed),
        train,
        scheme.num_classes,
        checkpoint_dir=ckpt,
        config_snapshot=snap,
    )
    report.created = _now()
    write_report(report, out, scheme.class_names, figures=not args.no_figures)
    _write_run(out, "losocv", snap)
    sys.stdout.write(format_table(report))
    return 0


def cmd_train(args) -> int:
    manifest, segments, scheme, stft, render = _load(args)
    train = _train_cfg(args, manifest)
    if args.hold_out:
        segments = [s for s in segments if s.subject_id != args.hold_out]
    if not segments:
        raise IngestionError("no training segments")
    model_cfg = pipeline.model_config(args.model, manifest, scheme.num_classes, render, segments[0].samples.size)
    out = _out_dir(args.out)
    data = pipeline.labeled_data(args.model, segments, scheme, stft, render)
    model = build_model(args.model, model_cfg, fold_seed(train.seed, args.hold_out or ""))
    curve = train_model(model, data.inputs, data.labels, train, seed=train.seed)
    save_params(out / "model.esvt", model)
    (out / "curve.json").write_text(json.dumps({"curve": curve}, indent=1))
    _write_run(out, "train", pipeline.snapshot(args.model, model_cfg, stft, render, train, scheme, manifest))
    print(f"trained {args.model} on {len(segments)} segments; final loss {curve[-1] if curve else float('nan'):.4f}")
    return 0


def cmd_attn(args) -> int:
    model = load_params(args.checkpoint)
    if not isinstance(model, VisionTransformer):
        raise CheckpointError(f"{args.checkpoint}: attention maps need a vit checkpoint")
    image = read_tensor(args.image)
    cfg = model.config
    if image.shape != (cfg.image_h, cfg.image_w, cfg.channels):
        raise CheckpointError(f"image shape {image.shape} does not match model input {(cfg.image_h, cfg.image_w, cfg.channels)}")
    layers = _parse_layers(args.layers)
    maps = attention_maps(model, image, layers)
    out = _out_dir(args.out)
    stem = Path(args.image).stem
    for m in maps:
        base = out / f"{stem}_layer{m.layer}"
        write_pgm(base.with_suffix(".pgm"), m.image)
        write_tensor(
            base.with_suffix(".f32"),
            m.image,
            layer=m.layer,
            flat=m.flat,
            grid=m.grid.tolist(),
            grid_sum=float(m.grid.sum()),
        )
    if not args.no_figures:
        plotting.attention_overlay(image, maps, out / f"{stem}_attention.png")
    print(f"wrote attention maps for layers {layers} to {out}")
    return 0


def cmd_features(args) -> int:
    model = load_params(args.checkpoint)
    if not isinstance(model, VisionTransformer):
        raise CheckpointError(f"{args.checkpoint}: feature export needs a vit checkpoint")
    manifest, segments, scheme, stft, render = _load(args)
    cfg = model.config
    if (render.height, render.width, render.channels) != (cfg.image_h, cfg.image_w, cfg.channels):
        raise CheckpointError(
            f"checkpoint expects {cfg.image_h}x{cfg.image_w}x{cfg.channels} images, manifest renders "
            f"{render.height}x{render.width}x{render.channels}"
        )
    out = _out_dir(args.out)
    inputs = pipeline.model_inputs("vit", segments, stft, render)
    feats = np.concatenate([model.features(inputs[i : i + 64]) for i in range(0, len(inputs), 64)]) if segments else []
    path = out / "features.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "subject_id", "label"] + [f"f{i}" for i in range(cfg.embed_dim)])
        for seg, vec in zip(segments, feats):
            w.writerow([seg.segment_id, seg.subject_id, scheme.class_names[seg.label]] + [repr(float(v)) for v in vec])
    print(f"wrote {len(segments)} feature rows to {path}")
    return 0


def cmd_synth(args) -> int:
    from .synthetic import write_dataset

    extra = {}
    if args.toy:
        extra = {
            "image": {"height": 32, "width": 32},
            "vit": {"patch": 16, "embed_dim": 32, "depth": 2, "heads": 4},
        }
    path = write_dataset(args.out, args.subjects, args.seed, args.seconds, extra=extra)
    print(f"wrote synthetic dataset manifest {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecgvit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_args(sp, labels=True, stft=True):
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--out", required=True)
        if labels:
            sp.add_argument("--labels", choices=sorted(LABEL_MODES), default=None)
        if stft:
            sp.add_argument("--stft-win", type=int, default=None)
            sp.add_argument("--stft-hop", type=int, default=None)

    def train_args(sp):
        sp.add_argument("--model", choices=MODEL_KINDS, default="vit")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--batch-size", type=int, default=None)
        sp.add_argument("--lr", type=float, default=None)
        sp.add_argument("--momentum", type=float, default=None)
        sp.add_argument("--weight-decay", type=float, default=None)

    sp = sub.add_parser("spectrogram", help="render one spectrogram image per segment")
    data_args(sp)
    sp.set_defaults(func=cmd_spectrogram)

    sp = sub.add_parser("losocv", help="leave-one-subject-out training and evaluation")
    data_args(sp)
    train_args(sp)
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=cmd_losocv)

    sp = sub.add_parser("train", help="train one model on all (or all but one) subjects")
    data_args(sp)
    train_args(sp)
    sp.add_argument("--hold-out", default=None, help="subject id to exclude from training")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("attn", help="export per-layer CLS attention maps for one image")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True, help="raw float32 image with JSON sidecar")
    sp.add_argument("--layers", nargs="+", required=True, help="1-based layer indices, e.g. 1 5 10 or 1,5,10")
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=cmd_attn)

    sp = sub.add_parser("features", help="export CLS feature vectors per segment as CSV")
    sp.add_argument("--checkpoint", required=True)
    data_args(sp)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("synth", help="write a synthetic tone-burst ECG dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--subjects", type=int, default=4)
    sp.add_argument("--seconds", type=int, default=30, help="seconds per class block")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--toy", action="store_true", help="add a tiny 32x32 ViT config to the manifest")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (EcgVitError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
