"""Command-line front end.

Subcommands: ``synth``, ``crop``, ``train``, ``generate``, ``pairs``,
``train-verifier`` and ``eval``. Exit codes: 0 success, 1 runtime failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import CheckpointError, build_model, load_checkpoint, restore_model, restore_optimizer, save_checkpoint
from .config import load_config
from .dataprep.io import DatasetError, read_dataset, read_pairs, read_pgm, subject_dirs, write_dataset, write_pairs, write_pgm
from .dataprep.samples import (
    CROP_SIZE,
    DEFAULT_DEPTH_RANGE,
    CropParams,
    FaceSample,
    UnusableSampleError,
    build_pair_set,
    crop_box,
    denormalize_depth,
    depth_to_8bit,
    face_crop,
    normalize_depth,
    normalize_gray,
    split_train_test,
)
from .dataprep.synth import synth_face_dataset
from .metrics import pixelwise_report, subset_report, verification_accuracy
from .models import ConfigError
from .training import EpochRecord, iter_loss_rows, PairedDataset, TrainState, make_train_state, predict, train_epoch, write_loss_csv
from .verifier import RELIEF_MM, train_verifier, verifier_input

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit code 2."""


def _say(msg: str) -> None:
    print(msg, flush=True)


# -- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.size < 16 or args.size % 16:
        raise UsageError(f"--size must be a positive multiple of 16, got {args.size}")
    if args.subjects < 1 or args.frames < 1:
        raise UsageError("--subjects and --frames must be at least 1")
    samples = synth_face_dataset(args.subjects, args.frames, args.size, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, out)
    _say(f"wrote {len(samples)} frames for {args.subjects} subjects to {out}")
    return EXIT_OK


# -- crop --------------------------------------------------------------------


def cmd_crop(args) -> int:
    src = Path(args.input)
    dirs = subject_dirs(src)
    for _, d in dirs:
        if not (d / "annotations.csv").is_file():
            raise DatasetError(f"annotation file missing: {d / 'annotations.csv'}")
    params = CropParams(fx=args.fx, fy=args.fy, rx=args.rx, ry=args.ry, radius=args.radius, out_size=args.size)
    samples = read_dataset(src)
    kept: List[FaceSample] = []
    skipped: List[str] = []
    boxes: List[list] = []
    n = params.out_size
    for s in samples:
        try:
            box = crop_box(s, params)
            gray, depth = face_crop(s, params)
        except UnusableSampleError as exc:
            skipped.append(f"{s.key}\t{exc}")
            continue
        x0, y0, x1, y1 = box
        cx = min(max((s.head_center[0] - x0) * n / (x1 - x0), 0.0), n - 1e-6)
        cy = min(max((s.head_center[1] - y0) * n / (y1 - y0), 0.0), n - 1e-6)
        kept.append(FaceSample(gray, depth, s.subject_id, s.sequence_id, s.frame, (cx, cy), s.pose))
        boxes.append([s.subject_id, s.frame, x0, y0, x1, y1])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(kept, out)
    (out / "skipped.log").write_text("".join(line + "\n" for line in skipped))
    with open(out / "boxes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "frame", "x0", "y0", "x1", "y1"])
        writer.writerows(boxes)
    _say(f"cropped {len(kept)} frames, skipped {len(skipped)} (see {out / 'skipped.log'})")
    return EXIT_OK


# -- train -------------------------------------------------------------------


def load_training_arrays(root, test_subjects, d_min: float, d_max: float, image_size: int) -> PairedDataset:
    samples = read_dataset(root)
    train, _ = split_train_test(samples, test_subjects)
    if not train:
        raise UsageError(f"no training frames under {root} once test subjects {sorted(test_subjects)} are held out")
    for s in train:
        if s.gray.shape != (image_size, image_size):
            raise ConfigError(f"{s.key}: image is {s.gray.shape[1]}x{s.gray.shape[0]} but image_size is {image_size}")
    gray = np.stack([normalize_gray(s.gray) for s in train])[:, None]
    depth = np.stack([normalize_depth(s.depth, d_min, d_max) for s in train])[:, None]
    return PairedDataset(gray, depth)


def _history_to_json(history: List[EpochRecord]) -> list:
    return [[r.epoch, r.step, r.d_loss, r.g_adv_loss, r.g_mse_loss] for r in history]


def _history_from_json(rows: list) -> List[EpochRecord]:
    return [EpochRecord(int(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in rows]


def _snapshot(cfg, state: TrainState) -> dict:
    return {
        "train": cfg.train.to_dict(),
        "d_min": cfg.data.d_min,
        "d_max": cfg.data.d_max,
        "image_size": cfg.train.image_size,
        "epoch": state.epoch,
        "step_g": state.step_g,
        "step_d": state.step_d,
        "history": _history_to_json(state.history),
    }


def _discriminator_path(generator_path: Path) -> Path:
    name = generator_path.name
    if "generator" not in name:
        raise UsageError(f"--resume expects a generator checkpoint (file name containing 'generator'), got {generator_path}")
    return generator_path.with_name(name.replace("generator", "discriminator"))


def _resume_state(cfg, path: Path) -> TrainState:
    g_ckpt = load_checkpoint(path)
    d_ckpt = load_checkpoint(_discriminator_path(path))
    for ck in (g_ckpt, d_ckpt):
        if abs(ck.multiplier - cfg.train.width_multiplier) > 1e-12:
            raise ConfigError(f"checkpoint width multiplier {ck.multiplier} does not match config {cfg.train.width_multiplier}")
        if ck.config.get("image_size") != cfg.train.image_size:
            raise ConfigError(f"checkpoint image size {ck.config.get('image_size')} does not match config {cfg.train.image_size}")
    if g_ckpt.kind != "generator" or d_ckpt.kind != "discriminator":
        raise CheckpointError("resume needs a generator and a discriminator checkpoint")
    if g_ckpt.config.get("epoch") != d_ckpt.config.get("epoch"):
        raise CheckpointError("generator and discriminator checkpoints come from different epochs")
    state = make_train_state(cfg.train)
    restore_model(state.generator, g_ckpt)
    restore_model(state.discriminator, d_ckpt)
    restore_optimizer(state.opt_g, g_ckpt)
    restore_optimizer(state.opt_d, d_ckpt)
    state.epoch = int(g_ckpt.config["epoch"])
    state.step_g = int(g_ckpt.config["step_g"])
    state.step_d = int(g_ckpt.config["step_d"])
    state.history = _history_from_json(g_ckpt.config.get("history", []))
    if state.epoch > cfg.train.epochs:
        raise ConfigError(f"checkpoint is at epoch {state.epoch}, beyond the configured {cfg.train.epochs} epochs")
    return state


def _save_pair(cfg, state: TrainState, directory: Path, prefix: str = "") -> Path:
    snap = _snapshot(cfg, state)
    g_path = directory / f"{prefix}generator.ckpt"
    save_checkpoint(g_path, state.generator, state.opt_g, snap)
    save_checkpoint(directory / f"{prefix}discriminator.ckpt", state.discriminator, state.opt_d, snap)
    return g_path


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if not Path(cfg.data.root).is_dir():
        raise UsageError(f"dataset directory not found: {cfg.data.root}")
    dataset = load_training_arrays(cfg.data.root, cfg.data.test_subjects, cfg.data.d_min, cfg.data.d_max, cfg.train.image_size)
    state = _resume_state(cfg, Path(args.resume)) if args.resume else make_train_state(cfg.train)

    out = Path(cfg.output_dir)
    ckdir = out / "checkpoints"
    ckdir.mkdir(parents=True, exist_ok=True)
    loss_path = out / "loss.csv"
    # the loss log restarts from the checkpoint's own history, then grows one row per epoch
    write_loss_csv(loss_path, state.history)
    _say(f"training {len(dataset)} frames from epoch {state.epoch} to {cfg.train.epochs}")
    while state.epoch < cfg.train.epochs:
        t0 = time.perf_counter()
        train_epoch(dataset, state, cfg.train)
        seconds = time.perf_counter() - t0
        r = state.history[-1]
        with open(loss_path, "a", newline="") as fh:
            csv.writer(fh).writerows(iter_loss_rows([r]))
        _say(f"epoch {r.epoch}: d_loss {r.d_loss:.4f}  g_adv {r.g_adv_loss:.4f}  g_mse {r.g_mse_loss:.4f}  ({seconds:.1f}s)")
        if state.epoch % cfg.checkpoint_every == 0 or state.epoch == cfg.train.epochs:
            _save_pair(cfg, state, ckdir, f"epoch_{state.epoch:04d}_")
    _save_pair(cfg, state, out)
    _say(f"final checkpoints in {out}")
    return EXIT_OK


# -- generate ----------------------------------------------------------------


def _gray_inputs(root: Path) -> List[Path]:
    return sorted(root.rglob("*_gray.pgm"))


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.kind != "generator":
        raise UsageError(f"{args.ckpt} holds a {ckpt.kind}, not a generator")
    d_min = float(ckpt.config.get("d_min", DEFAULT_DEPTH_RANGE[0]))
    d_max = float(ckpt.config.get("d_max", DEFAULT_DEPTH_RANGE[1]))
    net = build_model(ckpt)
    src = Path(args.input)
    if not src.is_dir():
        raise UsageError(f"input directory not found: {src}")
    files = _gray_inputs(src)
    if not files:
        raise UsageError(f"no *_gray.pgm images under {src}")
    grays = [read_pgm(f) for f in files]
    for f, g in zip(files, grays):
        if g.dtype != np.uint8:
            raise UsageError(f"{f}: expected an 8-bit gray image")
        if g.shape[0] % 16 or g.shape[1] % 16:
            raise UsageError(f"{f}: size {g.shape[1]}x{g.shape[0]} is not divisible by 16")
    out = Path(args.out)
    # batch images of equal size together, in sorted-path order
    by_shape: Dict[tuple, List[int]] = {}
    for i, g in enumerate(grays):
        by_shape.setdefault(g.shape, []).append(i)
    estimates: Dict[int, np.ndarray] = {}
    for idx in by_shape.values():
        batch = np.stack([normalize_gray(grays[i]) for i in idx])[:, None]
        pred = predict(net, batch, args.batch_size)
        for i, p in zip(idx, pred):
            estimates[i] = denormalize_depth(p[0], d_min, d_max)
    for i, f in enumerate(files):
        rel = f.relative_to(src)
        stem = rel.name[: -len("_gray.pgm")]
        target_dir = out / rel.parent
        target_dir.mkdir(parents=True, exist_ok=True)
        depth = estimates[i]
        write_pgm(target_dir / f"{stem}_depth.pgm", depth)
        panels = [grays[i]]
        gt_path = f.with_name(f"{stem}_depth.pgm")
        if gt_path.is_file():
            gt = read_pgm(gt_path)
            if gt.shape == depth.shape:
                panels.append(depth_to_8bit(gt, d_min, d_max))
        panels.append(depth_to_8bit(depth, d_min, d_max))
        write_pgm(target_dir / f"{stem}_preview.pgm", np.concatenate(panels, axis=1))
    _say(f"wrote {len(files)} depth estimates to {out}")
    return EXIT_OK


# -- pairs -------------------------------------------------------------------


def _subject_list(text: Optional[str]):
    if not text:
        return None
    try:
        return {int(t) for t in text.replace(",", " ").split()}
    except ValueError:
        raise UsageError(f"subject list must be integers, got {text!r}") from None


def cmd_pairs(args) -> int:
    samples = read_dataset(args.data)
    keep = _subject_list(args.subjects)
    drop = _subject_list(args.exclude_subjects) or set()
    samples = [s for s in samples if (keep is None or s.subject_id in keep) and s.subject_id not in drop]
    try:
        pairs = build_pair_set(samples, args.n, args.balance, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_pairs(args.out, pairs)
    _say(f"wrote {len(pairs)} pairs ({sum(p.label for p in pairs)} same-subject) to {args.out}")
    return EXIT_OK


# -- train-verifier ----------------------------------------------------------


def cmd_train_verifier(args) -> int:
    cfg = load_config(args.config)
    if not Path(cfg.data.root).is_dir():
        raise UsageError(f"dataset directory not found: {cfg.data.root}")
    samples = read_dataset(cfg.data.root)
    train, _ = split_train_test(samples, cfg.data.test_subjects)
    try:
        pairs = build_pair_set(train, cfg.pairs.n_pairs, cfg.pairs.balance, cfg.pairs.seed)
    except ValueError as exc:
        raise UsageError(f"cannot draw verifier training pairs: {exc}") from None
    vcfg = cfg.verifier

    def report(epoch: int, loss: float) -> None:
        _say(f"epoch {epoch}: pair loss {loss:.4f}")

    net = train_verifier(pairs, vcfg, cfg.data.test_subjects, on_epoch=report)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "verifier.ckpt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, net, config={"verifier": vcfg.to_dict(), "relief_mm": vcfg.relief_mm, "test_subjects": sorted(cfg.data.test_subjects)})
    _say(f"verifier checkpoint written to {out}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def _depth_files(root: Path) -> Dict[str, Path]:
    return {str(p.relative_to(root).as_posix()): p for p in sorted(root.rglob("*_depth.pgm"))}


def cmd_eval(args) -> int:
    pred_root, target_root = Path(args.pred), Path(args.target)
    for root in (pred_root, target_root):
        if not root.is_dir():
            raise UsageError(f"directory not found: {root}")
    if args.pairs and not args.verifier:
        raise UsageError("--pairs needs --verifier")
    if args.subsets and not args.pairs:
        raise UsageError("--subsets needs --pairs and --verifier")
    if not args.d_max > args.d_min:
        raise UsageError(f"depth range [{args.d_min}, {args.d_max}] is empty")
    targets = _depth_files(target_root)
    preds = _depth_files(pred_root)
    if not targets:
        raise UsageError(f"no *_depth.pgm maps under {target_root}")
    if set(targets) != set(preds):
        missing = sorted(set(targets) - set(preds))[:3]
        extra = sorted(set(preds) - set(targets))[:3]
        raise UsageError(f"prediction and target sets differ (missing {missing}, unexpected {extra})")
    names = sorted(targets)
    pred_mm = {n: read_pgm(preds[n]) for n in names}
    target_mm = {n: read_pgm(targets[n]) for n in names}
    for n in names:
        if pred_mm[n].shape != target_mm[n].shape:
            raise UsageError(f"{n}: prediction {pred_mm[n].shape} and target {target_mm[n].shape} differ in shape")

    if args.value_space == "8bit":
        p_vals = [depth_to_8bit(pred_mm[n], args.d_min, args.d_max) for n in names]
        t_vals = [depth_to_8bit(target_mm[n], args.d_min, args.d_max) for n in names]
    else:
        p_vals = [pred_mm[n] for n in names]
        t_vals = [target_mm[n] for n in names]
    report = pixelwise_report(p_vals, t_vals, args.value_space)

    grids = []
    if args.pairs:
        ckpt = load_checkpoint(args.verifier)
        if ckpt.kind != "siamese":
            raise UsageError(f"{args.verifier} holds a {ckpt.kind}, not a Siamese verifier")
        net = build_model(ckpt)
        relief = float(ckpt.config.get("relief_mm", RELIEF_MM))
        size = net.image_size
        samples = {s.depth_path: s for s in read_dataset(target_root)}
        pairs = read_pairs(args.pairs, samples)
        if not pairs:
            raise UsageError(f"{args.pairs} lists no pairs")
        for p in pairs:
            for s in (p.sample_a, p.sample_b):
                if s.depth_path not in pred_mm:
                    raise UsageError(f"pair member {s.depth_path} has no prediction")
        keys = {s.key: s.depth_path for p in pairs for s in (p.sample_a, p.sample_b)}
        original = {k: verifier_input(target_mm[path], size, relief) for k, path in keys.items()}
        generated = {k: verifier_input(pred_mm[path], size, relief) for k, path in keys.items()}
        report.face_verification_acc = verification_accuracy(net, pairs, generated)
        original_acc = verification_accuracy(net, pairs, original)
        if args.subsets:
            grids = [("original", subset_report(net, pairs, original)), ("generated", subset_report(net, pairs, generated))]

    _say(report.format_table())
    if args.pairs:
        _say(f"(verification on original maps: {original_acc:.4f} over {len(pairs)} pairs)")
    for label, grid in grids:
        _say("")
        _say(grid.format_table(f"verification accuracy on {label} depth maps"))
    if args.csv:
        text = report.to_csv()
        if grids:
            lines = ["", "maps,angle,sequence,n_pairs,accuracy"]
            for label, grid in grids:
                lines += [",".join(str(v) for v in row) for row in grid.csv_rows(label)]
            text += "\n".join(lines) + "\n"
        Path(args.csv).write_text(text)
    complete = not report.undefined and (not args.pairs or report.face_verification_acc is not None)
    if not complete:
        print(f"undefined metrics: {sorted(report.undefined)}", file=sys.stderr)
    return EXIT_OK if complete else EXIT_FAILURE


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facedepth", description="Gray-to-depth face translation with a conditional GAN.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic paired gray/depth dataset")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--frames", type=int, required=True, help="frames per subject")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("crop", help="apply the depth-adaptive face crop to a dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fx", type=float, required=True)
    p.add_argument("--fy", type=float, required=True)
    p.add_argument("--rx", type=float, default=320.0, help="face width in mm")
    p.add_argument("--ry", type=float, default=320.0, help="face height in mm")
    p.add_argument("--radius", type=int, default=5, help="half window for the head distance estimate")
    p.add_argument("--size", type=int, default=CROP_SIZE, help="output side in pixels")
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("train", help="adversarial training of generator and discriminator")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="generator checkpoint to continue from (discriminator is found alongside)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="estimate depth maps for every *_gray.pgm under a directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pairs", help="write a fixed, seeded verification pair list")
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--balance", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subjects", help="only these subject ids (comma separated)")
    p.add_argument("--exclude-subjects", help="drop these subject ids (comma separated)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("train-verifier", help="train the Siamese verifier on original depth maps")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="checkpoint path (default: <output dir>/verifier.ckpt)")
    p.set_defaults(func=cmd_train_verifier)

    p = sub.add_parser("eval", help="pixel-wise metrics and face verification")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--pairs")
    p.add_argument("--verifier")
    p.add_argument("--subsets", action="store_true", help="also report the angle x sequence grid")
    p.add_argument("--value-space", choices=("8bit", "millimeters"), default="8bit")
    p.add_argument("--d-min", type=float, default=DEFAULT_DEPTH_RANGE[0])
    p.add_argument("--d-max", type=float, default=DEFAULT_DEPTH_RANGE[1])
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as exc:  # noqa: BLE001 - top-level guard
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
