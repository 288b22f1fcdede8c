"""Supervised training of the Siamese verifier on original depth maps.

The verifier scores whether two depth maps show the same subject. It is
trained with binary cross-entropy between its sigmoid score and the pair
label, only on ground-truth maps of training subjects, and is later applied
unchanged to generated maps.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence

import numpy as np

from .autodiff import functional as F
from .autodiff.optim import Adam
from .autodiff.tensor import Tensor
from .dataprep.samples import PANDORA_TEST_SUBJECTS, VerificationPair, resize_bilinear
from .models import ConfigError, SiameseNet, check_multiplier, init_weights

RELIEF_MM = 100.0


class ProtocolError(ValueError):
    """Verifier training would see data the cross-subject protocol forbids."""


@dataclass
class VerifierTrainConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    width_multiplier: float = 0.125
    image_size: int = 96
    relief_mm: float = RELIEF_MM
    # the objective is plain BCE on the similarity score; no margin-based variant exists
    objective: str = "bce"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2 (batch norm), got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.image_size < 1:
            raise ConfigError(f"image_size must be positive, got {self.image_size}")
        if not self.relief_mm > 0:
            raise ConfigError(f"relief_mm must be positive, got {self.relief_mm}")
        if self.objective != "bce":
            raise ConfigError(f"unsupported verifier objective {self.objective!r}; only 'bce'")
        check_multiplier(self.width_multiplier)

    def to_dict(self) -> dict:
        return asdict(self)


def verifier_input(depth_mm: np.ndarray, size: int, relief_mm: float = RELIEF_MM) -> np.ndarray:
    """Millimeter depth map -> ``size x size`` float32 relief map in [-1, 1].

    Depth is taken relative to the median of the central half of the image
    (the face, since crops are centered on the head) and divided by
    ``relief_mm``, so the verifier sees facial shape rather than how far the
    head happened to be from the camera. Missing pixels count as far.
    """
    d = np.asarray(depth_mm, dtype=np.float64)
    h, w = d.shape
    center = d[h // 4 : h - h // 4, w // 4 : w - w // 4]
    valid = center[center > 0]
    ref = float(np.median(valid)) if valid.size else 0.0
    x = np.where(d > 0, (d - ref) / relief_mm, 1.0)
    x = np.clip(x, -1.0, 1.0)
    if x.shape != (size, size):
        x = resize_bilinear(x, size, size)
    return x.astype(np.float32)


def normalized_to_mm(values: np.ndarray, d_min: float, d_max: float) -> np.ndarray:
    """Generator output in [-1, 1] to (unquantized) millimeters."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return d_min + (v + 1.0) * 0.5 * (d_max - d_min)


def original_inputs(pairs: Iterable[VerificationPair], size: int, relief_mm: float = RELIEF_MM) -> Dict[str, np.ndarray]:
    """Verifier inputs for every sample referenced by ``pairs``, keyed by ``sample.key``."""
    out: Dict[str, np.ndarray] = {}
    for p in pairs:
        for s in (p.sample_a, p.sample_b):
            if s.key not in out:
                out[s.key] = verifier_input(s.depth, size, relief_mm)
    return out


def _pair_arrays(pairs: Sequence[VerificationPair], inputs: Mapping[str, np.ndarray]):
    a = np.stack([inputs[p.sample_a.key] for p in pairs])[:, None]
    b = np.stack([inputs[p.sample_b.key] for p in pairs])[:, None]
    y = np.array([[float(p.label)] for p in pairs], dtype=np.float32)
    return a, b, y


def check_training_subjects(pairs: Iterable[VerificationPair], test_subjects: Iterable[int]) -> None:
    test = set(test_subjects)
    leaked = sorted({s.subject_id for p in pairs for s in (p.sample_a, p.sample_b)} & test)
    if leaked:
        raise ProtocolError(f"verifier training pairs include test subjects {leaked}")


def train_verifier(
    pairs: Sequence[VerificationPair],
    config: VerifierTrainConfig,
    test_subjects: Iterable[int] = PANDORA_TEST_SUBJECTS,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> SiameseNet:
    """Fit a Siamese verifier on original-depth pairs of training subjects.

    The pair list is reshuffled every epoch with ``default_rng([seed, epoch])``;
    a trailing batch of one pair is dropped. ``on_epoch(epoch, mean_loss)`` is
    called after every epoch.
    """
    if not pairs:
        raise ValueError("cannot train the verifier on an empty pair list")
    check_training_subjects(pairs, test_subjects)
    inputs = original_inputs(pairs, config.image_size, config.relief_mm)
    a_all, b_all, y_all = _pair_arrays(pairs, inputs)

    net = SiameseNet(config.width_multiplier, config.image_size)
    init_weights(net, config.seed)
    net.train()
    opt = Adam(net.named_parameters(), lr=config.lr, betas=(config.beta1, config.beta2))
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(pairs))
        total, count = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            idx = order[i : i + config.batch_size]
            if len(idx) < 2:
                continue
            opt.zero_grad()
            score = net(Tensor(a_all[idx]), Tensor(b_all[idx]))
            loss = F.bce_loss(score, y_all[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise RuntimeError(f"verifier loss became {value} at epoch {epoch + 1}; aborting")
            loss.backward()
            opt.step()
            total += value * len(idx)
            count += len(idx)
        if on_epoch:
            on_epoch(epoch + 1, total / max(count, 1))
    net.eval()
    return net
