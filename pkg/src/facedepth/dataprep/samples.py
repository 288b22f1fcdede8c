"""Face samples, the depth-adaptive crop, subset partitions and verification pairs."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

PANDORA_TEST_SUBJECTS = frozenset({10, 14, 16, 20})
FRONTAL_LIMIT_DEG = 10.0
CROP_SIZE = 96
MIN_BOX_SIDE = 8


class UnusableSampleError(ValueError):
    """The sample cannot be cropped (no valid depth near the head, degenerate box)."""


@dataclass
class FaceSample:
    gray: np.ndarray  # uint8, H x W
    depth: np.ndarray  # uint16 millimeters, 0 = missing
    subject_id: int
    sequence_id: int
    frame: int
    head_center: Tuple[float, float]  # (x, y) pixels
    pose: Tuple[float, float, float]  # (yaw, pitch, roll) degrees

    def __post_init__(self):
        if self.gray.shape != self.depth.shape:
            raise ValueError(f"gray {self.gray.shape} and depth {self.depth.shape} differ in shape")
        h, w = self.depth.shape
        x, y = self.head_center
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError(f"head center {self.head_center} outside a {w}x{h} image")

    @property
    def key(self) -> str:
        """Path stem relative to the dataset root, e.g. ``subject_05/0003``."""
        return f"subject_{self.subject_id:02d}/{self.frame:04d}"

    @property
    def depth_path(self) -> str:
        return f"{self.key}_depth.pgm"


@dataclass(frozen=True)
class CropParams:
    fx: float
    fy: float
    rx: float = 320.0
    ry: float = 320.0
    radius: int = 5
    out_size: int = CROP_SIZE

    def __post_init__(self):
        for name in ("fx", "fy", "rx", "ry"):
            if not getattr(self, name) > 0:
                raise ValueError(f"crop parameter {name} must be positive, got {getattr(self, name)}")
        if self.radius < 0:
            raise ValueError(f"averaging radius must be >= 0, got {self.radius}")


@dataclass(frozen=True)
class VerificationPair:
    sample_a: FaceSample = field(compare=False)
    sample_b: FaceSample = field(compare=False)
    label: bool

    def __post_init__(self):
        if self.sample_a is self.sample_b:
            raise ValueError("a verification pair needs two distinct samples")
        if self.label != (self.sample_a.subject_id == self.sample_b.subject_id):
            raise ValueError("pair label disagrees with subject ids")


def estimate_head_distance(depth: np.ndarray, center: Tuple[float, float], radius: int = 5) -> float:
    """Mean of the non-missing depth values in the (2r+1)^2 window around ``center``."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    h, w = depth.shape
    cx, cy = int(round(center[0])), int(round(center[1]))
    x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
    y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
    if x0 >= x1 or y0 >= y1:
        raise ValueError(f"averaging window around {center} does not intersect the {w}x{h} image")
    window = depth[y0:y1, x0:x1].astype(np.float64)
    valid = window[window > 0]
    if valid.size == 0:
        raise UnusableSampleError(f"no valid depth within {radius}px of the head center")
    return float(valid.mean())


def crop_extent(f: float, r: float, distance: float) -> float:
    """Box side in pixels for a face of physical extent ``r`` mm at ``distance`` mm."""
    return f * r / distance


def crop_box(sample: FaceSample, params: CropParams) -> Tuple[int, int, int, int]:
    """Pixel box (x0, y0, x1, y1), half-open, clamped to the image."""
    d = estimate_head_distance(sample.depth, sample.head_center, params.radius)
    w_box = crop_extent(params.fx, params.rx, d)
    h_box = crop_extent(params.fy, params.ry, d)
    h, w = sample.depth.shape
    x, y = sample.head_center
    x0 = max(int(round(x - w_box / 2)), 0)
    x1 = min(int(round(x + w_box / 2)), w)
    y0 = max(int(round(y - h_box / 2)), 0)
    y1 = min(int(round(y + h_box / 2)), h)
    if x1 - x0 < MIN_BOX_SIDE or y1 - y0 < MIN_BOX_SIDE:
        raise UnusableSampleError(f"crop box {x1 - x0}x{y1 - y0}px is below {MIN_BOX_SIDE}px after clamping")
    return x0, y0, x1, y1


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers; returns float64."""
    h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    src = img.astype(np.float64)
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    ys = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(int), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(int), w - 1)
    return img[ys][:, xs]


def face_crop(sample: FaceSample, params: CropParams) -> Tuple[np.ndarray, np.ndarray]:
    """Cut the same depth-adaptive box from both images and resize to ``out_size``.

    Gray is resampled bilinearly, depth by nearest neighbour so no depth values
    are invented across silhouette edges.
    """
    x0, y0, x1, y1 = crop_box(sample, params)
    n = params.out_size
    gray = resize_bilinear(sample.gray[y0:y1, x0:x1], n, n)
    depth = resize_nearest(sample.depth[y0:y1, x0:x1], n, n)
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8), depth.astype(np.uint16)


def angle_subset(sample: FaceSample) -> str:
    """``"A1"`` when yaw, pitch and roll all lie in [-10, 10] degrees, else ``"A2"``."""
    if all(-FRONTAL_LIMIT_DEG <= a <= FRONTAL_LIMIT_DEG for a in sample.pose):
        return "A1"
    return "A2"


def sequence_subset(sample: FaceSample) -> str:
    """``"S123"`` for the constrained-movement sequences 1-3, ``"S45"`` for 4-5."""
    if not 1 <= sample.sequence_id <= 5:
        raise ValueError(f"sequence id must be in 1..5, got {sample.sequence_id}")
    return "S123" if sample.sequence_id <= 3 else "S45"


def split_train_test(
    samples: Iterable[FaceSample], test_subjects: Iterable[int] = PANDORA_TEST_SUBJECTS
) -> Tuple[List[FaceSample], List[FaceSample]]:
    test_ids = set(test_subjects)
    train, test = [], []
    for s in samples:
        (test if s.subject_id in test_ids else train).append(s)
    return train, test


def _draw_index_pairs(rng, candidates: Sequence[Tuple[int, int]], count: int) -> List[Tuple[int, int]]:
    picks = rng.choice(len(candidates), size=count, replace=False)
    return [candidates[i] for i in sorted(picks)]


def _sample_pairs(rng, groups: List[np.ndarray], count: int, positive: bool) -> List[Tuple[int, int]]:
    """Distinct unordered index pairs, within one group (positive) or across groups."""
    sizes = [len(g) for g in groups]
    total = sum(sizes)
    n_pos = sum(comb(s, 2) for s in sizes)
    available = n_pos if positive else comb(total, 2) - n_pos
    if count > available:
        kind = "same-subject" if positive else "cross-subject"
        raise ValueError(f"requested {count} {kind} pairs but only {available} exist")
    if count == 0:
        return []
    if available <= 200_000:
        cands = []
        if positive:
            for g in groups:
                cands.extend((int(g[i]), int(g[j])) for i in range(len(g)) for j in range(i + 1, len(g)))
        else:
            for gi in range(len(groups)):
                for gj in range(gi + 1, len(groups)):
                    cands.extend((int(min(a, b)), int(max(a, b))) for a in groups[gi] for b in groups[gj])
        return _draw_index_pairs(rng, cands, count)
    chosen: set = set()
    weights = np.array(sizes, dtype=float)
    out = []
    while len(out) < count:
        if positive:
            gi = rng.choice(len(groups), p=[comb(s, 2) / n_pos for s in sizes])
            a, b = rng.choice(groups[gi], size=2, replace=False)
        else:
            gi, gj = rng.choice(len(groups), size=2, replace=False, p=weights / weights.sum())
            a, b = rng.choice(groups[gi]), rng.choice(groups[gj])
        key = (int(min(a, b)), int(max(a, b)))
        if key not in chosen:
            chosen.add(key)
            out.append(key)
    return out


def build_pair_set(
    samples: Sequence[FaceSample], n_pairs: int, balance: float = 0.5, seed: int = 0
) -> List[VerificationPair]:
    """A fixed, seeded list of distinct pairs with ``round(balance * n_pairs)`` positives."""
    if not 0.0 <= balance <= 1.0:
        raise ValueError(f"balance must lie in [0, 1], got {balance}")
    subjects = sorted({s.subject_id for s in samples})
    if len(subjects) < 2:
        raise ValueError("pair generation needs at least two subjects")
    groups = [np.array([i for i, s in enumerate(samples) if s.subject_id == sid]) for sid in subjects]
    n_pos = int(round(n_pairs * balance))
    rng = np.random.default_rng(seed)
    idx = [(a, b, True) for a, b in _sample_pairs(rng, groups, n_pos, True)]
    idx += [(a, b, False) for a, b in _sample_pairs(rng, groups, n_pairs - n_pos, False)]
    order = rng.permutation(len(idx))
    pairs = []
    for k in order:
        a, b, label = idx[k]
        pairs.append(VerificationPair(samples[a], samples[b], label))
    return pairs


def pair_index_key(pair: VerificationPair) -> Tuple[str, str]:
    """Order-free identity of a pair, for duplicate detection."""
    a, b = pair.sample_a.key, pair.sample_b.key
    return (a, b) if a <= b else (b, a)


# -- normalization ---------------------------------------------------------

DEFAULT_DEPTH_RANGE = (400.0, 2000.0)


def normalize_gray(img: np.ndarray) -> np.ndarray:
    return (img.astype(np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def denormalize_gray(values: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float32), -1.0, 1.0)
    return np.rint((v + np.float32(1.0)) * np.float32(127.5)).astype(np.uint8)


def normalize_depth(depth: np.ndarray, d_min: float, d_max: float) -> np.ndarray:
    """Millimeters to [-1, 1]; missing (0) maps to +1 (far)."""
    if not d_max > d_min:
        raise ValueError(f"depth range must satisfy d_min < d_max, got [{d_min}, {d_max}]")
    d = depth.astype(np.float64)
    v = 2.0 * (d - d_min) / (d_max - d_min) - 1.0
    v = np.where(depth > 0, np.clip(v, -1.0, 1.0), 1.0)
    return v.astype(np.float32)


def denormalize_depth(values: np.ndarray, d_min: float, d_max: float) -> np.ndarray:
    """[-1, 1] back to millimeters (uint16); out-of-range values clamp."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return np.rint(d_min + (v + 1.0) * 0.5 * (d_max - d_min)).astype(np.uint16)


def depth_to_8bit(depth: np.ndarray, d_min: float, d_max: float) -> np.ndarray:
    """Linear quantization of [d_min, d_max] mm onto [0, 255]; missing stays 0."""
    d = depth.astype(np.float64)
    q = np.clip(np.rint(255.0 * (d - d_min) / (d_max - d_min)), 0, 255)
    return np.where(depth > 0, q, 0).astype(np.uint8)


def stack_batch(images: Sequence[np.ndarray]) -> np.ndarray:
    """N x 1 x H x W float32 batch from 2-D arrays."""
    return np.stack([np.asarray(im, dtype=np.float32) for im in images])[:, None]


def optional_resize(img: np.ndarray, size: Optional[int]) -> np.ndarray:
    if size is None or img.shape == (size, size):
        return img
    return resize_bilinear(img, size, size).astype(np.float32)
