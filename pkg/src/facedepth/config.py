"""INI-style run configuration, fully validated before any compute starts.

Example::

    [data]
    root = data/crops
    test_subjects = 10, 14, 16, 20
    d_min = 400
    d_max = 2000

    [train]
    epochs = 30
    batch_size = 16
    width_multiplier = 0.125
    image_size = 32

    [output]
    dir = runs/exp1

Every key is optional except ``data.root`` and ``output.dir``; unknown
sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import FrozenSet, Union

from .dataprep.samples import DEFAULT_DEPTH_RANGE, PANDORA_TEST_SUBJECTS, CropParams
from .models import ConfigError
from .training import TrainConfig
from .verifier import VerifierTrainConfig

PathLike = Union[str, os.PathLike]


@dataclass
class DataConfig:
    root: str = ""
    test_subjects: FrozenSet[int] = PANDORA_TEST_SUBJECTS
    d_min: float = DEFAULT_DEPTH_RANGE[0]
    d_max: float = DEFAULT_DEPTH_RANGE[1]

    def validate(self) -> None:
        if not self.root:
            raise ConfigError("[data] root is required")
        if not self.d_max > self.d_min:
            raise ConfigError(f"[data] depth range [{self.d_min}, {self.d_max}] is empty")
        if self.d_min < 0:
            raise ConfigError(f"[data] d_min must be >= 0, got {self.d_min}")


@dataclass
class PairConfig:
    n_pairs: int = 2000
    balance: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.n_pairs < 2:
            raise ConfigError(f"[pairs] n_pairs must be at least 2, got {self.n_pairs}")
        if not 0.0 <= self.balance <= 1.0:
            raise ConfigError(f"[pairs] balance must lie in [0, 1], got {self.balance}")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    verifier: VerifierTrainConfig = field(default_factory=VerifierTrainConfig)
    pairs: PairConfig = field(default_factory=PairConfig)
    crop: CropParams = field(default_factory=lambda: CropParams(fx=365.0, fy=365.0))
    checkpoint_every: int = 1
    output_dir: str = ""

    def validate(self) -> None:
        self.data.validate()
        self.train.validate()
        self.verifier.validate()
        self.pairs.validate()
        if self.checkpoint_every < 1:
            raise ConfigError(f"[output] checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if not self.output_dir:
            raise ConfigError("[output] dir is required")


def _parse_subjects(text: str) -> FrozenSet[int]:
    try:
        return frozenset(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"test_subjects must be a list of integers, got {text!r}") from None


def _convert(section: str, key: str, text: str, target_type):
    try:
        if target_type is bool:
            return {"true": True, "false": False, "1": True, "0": False}[text.strip().lower()]
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        return text.strip()
    except (KeyError, ValueError):
        raise ConfigError(f"[{section}] {key}: cannot read {text!r} as {target_type.__name__}") from None


def _fill(section: str, items: dict, cls, defaults=None):
    """Build dataclass ``cls`` from string ``items``, rejecting unknown keys."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, text in items.items():
        if key not in fields:
            raise ConfigError(f"unknown key [{section}] {key}")
        ftype = fields[key].type
        ftype = {"float": float, "int": int, "str": str, "bool": bool}.get(ftype, ftype) if isinstance(ftype, str) else ftype
        kwargs[key] = _convert(section, key, text, ftype)
    if defaults:
        for k, v in defaults.items():
            kwargs.setdefault(k, v)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


SECTIONS = ("data", "train", "verifier", "pairs", "crop", "output")


def parse_config(text: str, base_dir: PathLike = ".") -> RunConfig:
    """Parse and validate config text; relative paths resolve against ``base_dir``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    sec = {s: dict(parser.items(s)) if parser.has_section(s) else {} for s in SECTIONS}
    base = Path(base_dir)

    data_items = dict(sec["data"])
    subjects = _parse_subjects(data_items.pop("test_subjects")) if "test_subjects" in data_items else None
    data = _fill("data", data_items, DataConfig)
    if subjects is not None:
        data.test_subjects = subjects
    if data.root:
        data.root = str(base / data.root)

    out_items = dict(sec["output"])
    unknown_out = set(out_items) - {"dir", "checkpoint_every"}
    if unknown_out:
        raise ConfigError(f"unknown key [output] {sorted(unknown_out)[0]}")
    output_dir = str(base / out_items["dir"]) if out_items.get("dir") else ""
    every = _convert("output", "checkpoint_every", out_items["checkpoint_every"], int) if "checkpoint_every" in out_items else 1

    cfg = RunConfig(
        data=data,
        train=_fill("train", sec["train"], TrainConfig),
        verifier=_fill("verifier", sec["verifier"], VerifierTrainConfig),
        pairs=_fill("pairs", sec["pairs"], PairConfig),
        crop=_fill("crop", sec["crop"], CropParams, {"fx": 365.0, "fy": 365.0}),
        checkpoint_every=every,
        output_dir=output_dir,
    )
    cfg.validate()
    return cfg


def load_config(path: PathLike) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)
