"""Adversarial training of the depth generator against the discriminator.

Each batch runs one discriminator update followed by one generator update.
The generator minimizes ``lambda_mse * MSE + BCE(D(G(x)), 1)`` while the
discriminator is frozen, so its parameters and running statistics never move
during a generator step. The discriminator sees a detached copy of the fake
batch, so its step never touches the generator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import frozen
from .autodiff.optim import Adam
from .autodiff.tensor import DomainError, Tensor, no_grad
from .models import ConfigError, DiscriminatorNet, GeneratorNet, check_multiplier, init_weights

# no wall-clock column, so the log is byte-identical across same-seed runs
LOSS_FIELDS = ["epoch", "step", "d_loss", "g_adv_loss", "g_mse_loss"]


class TrainingDivergedError(RuntimeError):
    """A loss became NaN or infinite; training stops instead of skipping the batch."""


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_mse: float = 100.0
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    width_multiplier: float = 1.0
    image_size: int = 96

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        if not self.lambda_mse >= 0:
            raise ConfigError(f"lambda_mse must be non-negative, got {self.lambda_mse}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be at least 2 (batch norm), got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.image_size < 16 or self.image_size % 16:
            raise ConfigError(f"image_size must be a positive multiple of 16, got {self.image_size}")
        check_multiplier(self.width_multiplier)

    def to_dict(self) -> dict:
        return asdict(self)


class PairedDataset:
    """Normalized gray inputs and depth targets, both N x 1 x H x W float32 in [-1, 1]."""

    def __init__(self, gray: np.ndarray, depth: np.ndarray):
        gray = np.asarray(gray, dtype=np.float32)
        depth = np.asarray(depth, dtype=np.float32)
        if gray.ndim == 3:
            gray, depth = gray[:, None], depth[:, None]
        if gray.shape != depth.shape or gray.ndim != 4 or gray.shape[1] != 1:
            raise ValueError(f"gray {gray.shape} and depth {depth.shape} must both be N x 1 x H x W")
        self.gray = gray
        self.depth = depth

    def __len__(self) -> int:
        return self.gray.shape[0]

    @property
    def image_size(self) -> int:
        return self.gray.shape[2]

    def batch_indices(self, batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
        """Seeded per-epoch shuffle; a trailing batch smaller than 2 is dropped (batch norm needs 2)."""
        order = np.random.default_rng([seed, epoch]).permutation(len(self))
        batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
        return [b for b in batches if len(b) >= 2]


@dataclass
class EpochRecord:
    epoch: int
    step: int
    d_loss: float
    g_adv_loss: float
    g_mse_loss: float


@dataclass
class TrainState:
    generator: GeneratorNet
    discriminator: DiscriminatorNet
    opt_g: Adam
    opt_d: Adam
    epoch: int = 0
    step_g: int = 0
    step_d: int = 0
    history: List[EpochRecord] = field(default_factory=list)

    @property
    def running_losses(self) -> Tuple[float, float, float]:
        """(d_loss, g_adv_loss, g_mse_loss) averaged over the last completed epoch."""
        if not self.history:
            return (math.nan, math.nan, math.nan)
        r = self.history[-1]
        return (r.d_loss, r.g_adv_loss, r.g_mse_loss)


def make_train_state(config: TrainConfig) -> TrainState:
    """Fresh networks initialized from ``config.seed`` (generator) and ``config.seed + 1`` (discriminator)."""
    g = GeneratorNet(config.width_multiplier)
    d = DiscriminatorNet(config.width_multiplier, config.image_size)
    init_weights(g, config.seed)
    init_weights(d, config.seed + 1)
    betas = (config.beta1, config.beta2)
    return TrainState(
        generator=g,
        discriminator=d,
        opt_g=Adam(g.named_parameters(), lr=config.lr, betas=betas),
        opt_d=Adam(d.named_parameters(), lr=config.lr, betas=betas),
    )


def _ones(n: int, dtype) -> np.ndarray:
    return np.ones((n, 1), dtype=dtype)


def _check_finite(value: float, what: str, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergedError(f"{what} became {value} at epoch {epoch}, step {step}; aborting")


def generator_loss_terms(gray: Tensor, depth: Tensor, G, D, lambda_mse: float, generated: Optional[Tensor] = None):
    """Return ``(total, mse, adv)`` tensors; D is frozen while it scores the fake batch."""
    fake = G(gray) if generated is None else generated
    with frozen(D):
        score = D(fake)
    mse = F.mse_loss(fake, depth)
    adv = F.bce_loss(score, _ones(score.shape[0], score.dtype))
    return mse * float(lambda_mse) + adv, mse, adv


def generator_loss(gray: Tensor, depth: Tensor, G, D, lambda_mse: float, generated: Optional[Tensor] = None) -> Tensor:
    """``lambda_mse * MSE(G(gray), depth) + BCE(D(G(gray)), 1)``; gradients reach the generator only."""
    return generator_loss_terms(gray, depth, G, D, lambda_mse, generated)[0]


def discriminator_step(real: Tensor, fake: Tensor, D, opt: Adam) -> float:
    """One Adam step on ``0.5 * (BCE(D(real), 1) + BCE(D(fake), 0))``; returns the loss."""
    if fake.requires_grad:
        raise ValueError("fake batch must be detached from the generator graph")
    opt.zero_grad()
    p_real = D(real)
    p_fake = D(fake)
    n = real.shape[0]
    loss = (F.bce_loss(p_real, _ones(n, p_real.dtype)) + F.bce_loss(p_fake, np.zeros((fake.shape[0], 1), p_fake.dtype))) * 0.5
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingDivergedError(f"discriminator loss became {value}; aborting")
    loss.backward()
    opt.step()
    return value


def generator_step(gray: Tensor, depth: Tensor, G, D, opt: Adam, lambda_mse: float, generated: Optional[Tensor] = None):
    """One Adam step on the generator objective; returns ``(total, mse, adv)`` floats."""
    opt.zero_grad()
    total, mse, adv = generator_loss_terms(gray, depth, G, D, lambda_mse, generated)
    values = (total.item(), mse.item(), adv.item())
    if not all(math.isfinite(v) for v in values):
        raise TrainingDivergedError(f"generator loss terms became {values}; aborting")
    total.backward()
    opt.step()
    return values


Observer = Callable[[str, TrainState], None]


def train_epoch(dataset: PairedDataset, state: TrainState, config: TrainConfig, observer: Optional[Observer] = None) -> TrainState:
    """One pass over ``dataset``: per batch, a discriminator step and then a generator step.

    ``observer(event, state)`` is called with ``"before_d"``, ``"after_d"`` and
    ``"after_g"`` around the two updates of every batch.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if dataset.image_size != config.image_size:
        raise ConfigError(f"dataset images are {dataset.image_size}px but config.image_size is {config.image_size}")
    batches = dataset.batch_indices(config.batch_size, config.seed, state.epoch)
    if not batches:
        raise ValueError("dataset yields no batch of at least 2 samples")
    G, D = state.generator, state.discriminator
    G.train()
    D.train()
    sums = np.zeros(3)
    for b, idx in enumerate(batches, start=1):
        try:
            d_loss, mse, adv = _train_batch(dataset, idx, state, config, observer)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"epoch {state.epoch + 1}, batch {b}: {exc}") from None
        sums += (d_loss, adv, mse)
    means = sums / len(batches)
    state.epoch += 1
    for name, v in zip(("d_loss", "g_adv_loss", "g_mse_loss"), means):
        _check_finite(float(v), name, state.epoch, state.step_g)
    state.history.append(
        EpochRecord(state.epoch, state.step_g, float(means[0]), float(means[1]), float(means[2]))
    )
    return state


def _train_batch(dataset: PairedDataset, idx: np.ndarray, state: TrainState, config: TrainConfig, observer):
    G, D = state.generator, state.discriminator
    gray = Tensor(dataset.gray[idx])
    depth = Tensor(dataset.depth[idx])
    # one generator forward; D sees a detached copy, the G step reuses the graph
    fake = G(gray)
    if observer:
        observer("before_d", state)
    d_loss = discriminator_step(depth, fake.detach(), D, state.opt_d)
    state.step_d += 1
    if observer:
        observer("after_d", state)
    _, mse, adv = generator_step(gray, depth, G, D, state.opt_g, config.lambda_mse, generated=fake)
    state.step_g += 1
    if observer:
        observer("after_g", state)
    return d_loss, mse, adv


def train(
    dataset: PairedDataset,
    config: TrainConfig,
    state: Optional[TrainState] = None,
    on_epoch: Optional[Callable[[TrainState], None]] = None,
) -> TrainState:
    """Train until ``state.epoch == config.epochs``, resuming from ``state`` when given."""
    state = make_train_state(config) if state is None else state
    while state.epoch < config.epochs:
        train_epoch(dataset, state, config)
        if on_epoch:
            on_epoch(state)
    return state


def predict(G, gray: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Eval-mode generator output for N x 1 x H x W normalized gray inputs."""
    was_training = G.training
    G.eval()
    out = []
    try:
        with no_grad():
            for i in range(0, gray.shape[0], batch_size):
                out.append(G(Tensor(gray[i : i + batch_size])).data)
    finally:
        G.train(was_training)
    return np.concatenate(out, axis=0) if out else np.zeros_like(gray)


def per_image_mse(predicted: np.ndarray, target: np.ndarray) -> float:
    """Batch-averaged per-image squared L2 error, the same quantity the generator minimizes."""
    diff = np.asarray(predicted, np.float64) - np.asarray(target, np.float64)
    if diff.shape[0] == 0:
        raise DomainError("empty batch")
    return float(np.sum(diff**2) / diff.shape[0])


def mean_depth_baseline(train_depth: np.ndarray) -> np.ndarray:
    """Per-pixel mean of the training depth maps: the best constant (input-independent) predictor."""
    return np.asarray(train_depth, np.float64).mean(axis=0, keepdims=True)


def iter_loss_rows(history: List[EpochRecord]) -> Iterator[list]:
    for r in history:
        yield [r.epoch, r.step, repr(r.d_loss), repr(r.g_adv_loss), repr(r.g_mse_loss)]


def write_loss_csv(path, history: List[EpochRecord]) -> None:
    """Write (or rewrite) the per-epoch loss log."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_FIELDS)
        writer.writerows(iter_loss_rows(history))


def read_loss_csv(path) -> List[EpochRecord]:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != LOSS_FIELDS:
            raise ValueError(f"{path}: expected columns {LOSS_FIELDS}, got {reader.fieldnames}")
        return [
            EpochRecord(int(r["epoch"]), int(r["step"]), float(r["d_loss"]), float(r["g_adv_loss"]), float(r["g_mse_loss"]))
            for r in reader
        ]
