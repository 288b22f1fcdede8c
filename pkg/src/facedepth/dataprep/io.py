"""Binary PGM images, the per-subject dataset layout and pair-list files.

Layout::

    root/subject_NN/NNNN_gray.pgm     8-bit P5
    root/subject_NN/NNNN_depth.pgm    16-bit big-endian P5, millimeters
    root/subject_NN/annotations.csv   frame,sequence,center_x,center_y,yaw,pitch,roll
"""

from __future__ import annotations

import csv
import os
import re
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import numpy as np

from .samples import FaceSample, VerificationPair

PathLike = Union[str, os.PathLike]
ANNOTATION_FIELDS = ["frame", "sequence", "center_x", "center_y", "yaw", "pitch", "roll"]
PAIR_FIELDS = ["path_a", "path_b", "label"]
_SUBJECT_DIR = re.compile(r"^subject_(\d+)$")


class DatasetError(ValueError):
    """The on-disk dataset is missing files or malformed."""


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    """Write a binary PGM; uint8 -> maxval 255, uint16 -> maxval 65535 big-endian."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM images are 2-D, got shape {img.shape}")
    if img.dtype == np.uint8:
        maxval, raster = 255, img.tobytes()
    elif img.dtype == np.uint16:
        maxval, raster = 65535, img.astype(">u2").tobytes()
    else:
        raise TypeError(f"PGM supports uint8 or uint16 images, got {img.dtype}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(raster)


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary (P5) PGM as uint8 or uint16 (16-bit samples are big-endian)."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"image file missing: {path}")
    data = path.read_bytes()
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DatasetError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise DatasetError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace after maxval
    if not 0 < maxval < 65536:
        raise DatasetError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = w * h
    raster = data[pos : pos + count * dtype.itemsize]
    if len(raster) != count * dtype.itemsize:
        raise DatasetError(f"{path}: expected {count * dtype.itemsize} raster bytes, found {len(raster)}")
    img = np.frombuffer(raster, dtype=dtype).reshape(h, w)
    return img.astype(np.uint8 if maxval < 256 else np.uint16)


def subject_dir(root: PathLike, subject_id: int) -> Path:
    return Path(root) / f"subject_{subject_id:02d}"


def write_dataset(samples: Sequence[FaceSample], root: PathLike) -> None:
    """Write samples in the on-disk layout (one directory and annotation file per subject)."""
    root = Path(root)
    by_subject: Dict[int, List[FaceSample]] = {}
    for s in samples:
        by_subject.setdefault(s.subject_id, []).append(s)
    for sid, group in sorted(by_subject.items()):
        d = subject_dir(root, sid)
        d.mkdir(parents=True, exist_ok=True)
        group = sorted(group, key=lambda s: s.frame)
        with open(d / "annotations.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(ANNOTATION_FIELDS)
            for s in group:
                write_pgm(d / f"{s.frame:04d}_gray.pgm", s.gray)
                write_pgm(d / f"{s.frame:04d}_depth.pgm", s.depth)
                writer.writerow([s.frame, s.sequence_id, *map(float, s.head_center), *map(float, s.pose)])


def read_annotations(path: PathLike) -> List[dict]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"annotation file missing: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ANNOTATION_FIELDS:
            raise DatasetError(f"{path}: expected columns {ANNOTATION_FIELDS}, got {reader.fieldnames}")
        rows = []
        for row in reader:
            rows.append(
                {
                    "frame": int(row["frame"]),
                    "sequence": int(row["sequence"]),
                    "center": (float(row["center_x"]), float(row["center_y"])),
                    "pose": (float(row["yaw"]), float(row["pitch"]), float(row["roll"])),
                }
            )
    return rows


def subject_dirs(root: PathLike) -> List[tuple]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    found = []
    for d in sorted(root.iterdir()):
        m = _SUBJECT_DIR.match(d.name)
        if d.is_dir() and m:
            found.append((int(m.group(1)), d))
    if not found:
        raise DatasetError(f"no subject_NN directories under {root}")
    return found


def read_dataset(root: PathLike) -> List[FaceSample]:
    """Load every subject directory; ordered by (subject, sequence, frame)."""
    samples = []
    for sid, d in subject_dirs(root):
        for row in read_annotations(d / "annotations.csv"):
            stem = f"{row['frame']:04d}"
            gray = read_pgm(d / f"{stem}_gray.pgm")
            depth = read_pgm(d / f"{stem}_depth.pgm")
            if gray.dtype != np.uint8 or depth.dtype != np.uint16:
                raise DatasetError(f"{d / stem}: expected 8-bit gray and 16-bit depth")
            samples.append(FaceSample(gray, depth, sid, row["sequence"], row["frame"], row["center"], row["pose"]))
    samples.sort(key=lambda s: (s.subject_id, s.sequence_id, s.frame))
    return samples


def write_pairs(path: PathLike, pairs: Sequence[VerificationPair]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PAIR_FIELDS)
        for p in pairs:
            writer.writerow([p.sample_a.depth_path, p.sample_b.depth_path, int(p.label)])


def read_pair_rows(path: PathLike) -> List[tuple]:
    """(path_a, path_b, label) rows of a pair-list file."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"pair list not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PAIR_FIELDS:
            raise DatasetError(f"{path}: expected columns {PAIR_FIELDS}, got {reader.fieldnames}")
        rows = []
        for row in reader:
            if row["label"] not in ("0", "1"):
                raise DatasetError(f"{path}: label must be 0 or 1, got {row['label']!r}")
            rows.append((row["path_a"], row["path_b"], row["label"] == "1"))
    return rows


def read_pairs(path: PathLike, samples: Mapping[str, FaceSample]) -> List[VerificationPair]:
    """Resolve a pair list against samples keyed by ``depth_path``."""
    pairs = []
    for a, b, label in read_pair_rows(path):
        try:
            pairs.append(VerificationPair(samples[a], samples[b], label))
        except KeyError as exc:
            raise DatasetError(f"pair references unknown sample {exc.args[0]!r}") from None
    return pairs
