"""Pixel-wise depth error metrics and the face-verification protocol.

All pixel metrics are computed per image and then averaged over images.
Target pixels ``<= 0`` (holes) are excluded from the relative, log and ratio
metrics but kept in L1, L2 and linear RMSE. Predictions are floored at
:data:`PRED_FLOOR` before taking logs or ratios so a zero prediction yields a
large finite error instead of infinity.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .autodiff.tensor import Tensor, no_grad
from .dataprep.samples import VerificationPair, angle_subset, sequence_subset

PRED_FLOOR = 1.0
VALUE_SPACES = ("8bit", "millimeters")

# (field, label) in reporting order
ROWS: Tuple[Tuple[str, str], ...] = (
    ("l1_norm", "L1 Norm"),
    ("l2_norm", "L2 Norm"),
    ("abs_rel", "Abs Rel"),
    ("sq_rel", "Sq Rel"),
    ("rmse_lin", "RMSE (linear)"),
    ("rmse_log", "RMSE (log)"),
    ("rmse_scale_inv", "RMSE (scale-inv)"),
    ("delta1", "delta < 1.25"),
    ("delta2", "delta < 1.25^2"),
    ("delta3", "delta < 1.25^3"),
    ("face_verification_acc", "Face Verification"),
)


@dataclass
class MetricReport:
    l1_norm: float
    l2_norm: float
    abs_rel: float
    sq_rel: float
    rmse_lin: float
    rmse_log: float
    rmse_scale_inv: float
    delta1: float
    delta2: float
    delta3: float
    n_images: int
    value_space: str = "8bit"
    face_verification_acc: Optional[float] = None
    excluded_pixels: int = 0
    undefined: FrozenSet[str] = field(default_factory=frozenset)

    def rows(self) -> List[Tuple[str, Optional[float]]]:
        return [(label, getattr(self, name)) for name, label in ROWS]

    @property
    def complete(self) -> bool:
        """True when every row, including face verification, holds a finite value."""
        return all(v is not None and math.isfinite(v) for _, v in self.rows())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value", "value_space", "n_images"])
        for label, v in self.rows():
            writer.writerow([label, "undefined" if v is None or not math.isfinite(v) else repr(float(v)), self.value_space, self.n_images])
        return buf.getvalue()

    def format_table(self) -> str:
        width = max(len(label) for _, label in ROWS)
        lines = [f"{'metric':<{width}}  value      ({self.value_space}, {self.n_images} images)"]
        for label, v in self.rows():
            text = "undefined" if v is None or not math.isfinite(v) else f"{v:.4f}"
            lines.append(f"{label:<{width}}  {text}")
        return "\n".join(lines)


def _image_metrics(pred: np.ndarray, target: np.ndarray) -> Dict[str, float]:
    y = pred.astype(np.float64).ravel()
    t = target.astype(np.float64).ravel()
    diff = y - t
    out = {
        "l1_norm": float(np.mean(np.abs(diff))),
        "l2_norm": float(np.sqrt(np.sum(diff**2))),
        "rmse_lin": float(np.sqrt(np.mean(diff**2))),
    }
    valid = t > 0
    out["_excluded"] = int(valid.size - valid.sum())
    if not valid.any():
        return out
    yv, tv, dv = y[valid], t[valid], diff[valid]
    yc = np.maximum(yv, PRED_FLOOR)
    out["abs_rel"] = float(np.mean(np.abs(dv) / tv))
    out["sq_rel"] = float(np.mean(dv**2 / tv))
    d = np.log(yc) - np.log(tv)
    out["rmse_log"] = float(np.sqrt(np.mean(d**2)))
    out["rmse_scale_inv"] = float(np.sqrt(max(np.mean(d**2) - np.mean(d) ** 2, 0.0)))
    ratio = np.maximum(yc / tv, tv / yc)
    for k in (1, 2, 3):
        out[f"delta{k}"] = float(np.mean(ratio < 1.25**k))
    return out


def pixelwise_report(predictions: Sequence[np.ndarray], targets: Sequence[np.ndarray], value_space: str = "8bit") -> MetricReport:
    """Per-image metrics averaged over the set; relative rows with no valid pixel anywhere are undefined (NaN)."""
    if value_space not in VALUE_SPACES:
        raise ValueError(f"value_space must be one of {VALUE_SPACES}, got {value_space!r}")
    if len(predictions) == 0:
        raise ValueError("no images to evaluate")
    if len(predictions) != len(targets):
        raise ValueError(f"{len(predictions)} predictions but {len(targets)} targets")
    per_image = []
    for i, (p, t) in enumerate(zip(predictions, targets)):
        p, t = np.asarray(p), np.asarray(t)
        if p.shape != t.shape:
            raise ValueError(f"image {i}: prediction shape {p.shape} != target shape {t.shape}")
        per_image.append(_image_metrics(p, t))
    values, undefined = {}, set()
    for name, _ in ROWS[:-1]:
        got = [m[name] for m in per_image if name in m]
        if got:
            values[name] = float(np.mean(got))
        else:
            values[name] = math.nan
            undefined.add(name)
    return MetricReport(
        **values,
        n_images=len(per_image),
        value_space=value_space,
        excluded_pixels=sum(m["_excluded"] for m in per_image),
        undefined=frozenset(undefined),
    )


def verification_scores(net, pairs: Sequence[VerificationPair], inputs: Mapping[str, np.ndarray], batch_size: int = 64) -> np.ndarray:
    """Similarity scores in eval mode without gradients; the network is left untouched."""
    if not pairs:
        raise ValueError("no verification pairs")
    was_training = net.training
    net.eval()
    scores = []
    try:
        with no_grad():
            for i in range(0, len(pairs), batch_size):
                chunk = pairs[i : i + batch_size]
                a = np.stack([inputs[p.sample_a.key] for p in chunk])[:, None]
                b = np.stack([inputs[p.sample_b.key] for p in chunk])[:, None]
                scores.append(net(Tensor(a), Tensor(b)).data[:, 0].astype(np.float64))
    finally:
        net.train(was_training)
    return np.concatenate(scores)


def verification_accuracy(net, pairs: Sequence[VerificationPair], inputs: Mapping[str, np.ndarray], batch_size: int = 64) -> float:
    """Fraction of pairs where ``score > 0.5`` agrees with the same-subject label.

    ``inputs`` maps ``sample.key`` to the prepared verifier input, so the same
    pairs can be scored on original or on generated depth maps.
    """
    scores = verification_scores(net, pairs, inputs, batch_size)
    labels = np.array([p.label for p in pairs])
    return float(np.mean((scores > 0.5) == labels))


ANGLE_ROWS = ("A1", "A2", "A1∪A2")
SEQUENCE_COLS = ("S123", "S45", "all")


def cell_pairs(pairs: Sequence[VerificationPair], angle: str, sequence: str) -> List[VerificationPair]:
    """Pairs whose two members both satisfy the angle and sequence predicates of a cell."""

    def ok(s) -> bool:
        return (angle == "A1∪A2" or angle_subset(s) == angle) and (sequence == "all" or sequence_subset(s) == sequence)

    return [p for p in pairs if ok(p.sample_a) and ok(p.sample_b)]


@dataclass
class SubsetCell:
    n_pairs: int
    accuracy: Optional[float]  # None when the cell holds no pair


@dataclass
class SubsetGrid:
    cells: Dict[Tuple[str, str], SubsetCell]

    def format_table(self, title: str = "") -> str:
        lines = [title] if title else []
        lines.append(f"{'':<7}" + "".join(f"{c:>18}" for c in SEQUENCE_COLS))
        for r in ANGLE_ROWS:
            parts = []
            for c in SEQUENCE_COLS:
                cell = self.cells[(r, c)]
                acc = "empty" if cell.accuracy is None else f"{cell.accuracy:.4f}"
                parts.append(f"{acc + f' (n={cell.n_pairs})':>18}")
            lines.append(f"{r:<7}" + "".join(parts))
        return "\n".join(lines)

    def csv_rows(self, maps: str) -> List[list]:
        return [
            [maps, r, c, cell.n_pairs, "empty" if cell.accuracy is None else repr(cell.accuracy)]
            for (r, c), cell in ((k, self.cells[k]) for k in ((r, c) for r in ANGLE_ROWS for c in SEQUENCE_COLS))
        ]


def subset_report(net, pairs: Sequence[VerificationPair], inputs: Mapping[str, np.ndarray]) -> SubsetGrid:
    """Verification accuracy over {A1, A2, A1+A2} x {S123, S45, all}; empty cells are flagged, not zero-filled."""
    if not pairs:
        raise ValueError("no verification pairs")
    scores = verification_scores(net, pairs, inputs)
    correct = {id(p): (s > 0.5) == p.label for p, s in zip(pairs, scores)}
    cells = {}
    for r in ANGLE_ROWS:
        for c in SEQUENCE_COLS:
            members = cell_pairs(pairs, r, c)
            acc = float(np.mean([correct[id(p)] for p in members])) if members else None
            cells[(r, c)] = SubsetCell(len(members), acc)
    return SubsetGrid(cells)
