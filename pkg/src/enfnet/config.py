"""Network, loss and training configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .ops import ConvSpec

EGB_LEVELS = {0: (), 3: (1, 2, 3), 5: (1, 2, 3, 4, 5)}

# (kernel, stride) of the two convs in each guidance branch, per level.
EGB_GEOMETRY = {
    1: ((3, 1), (3, 1)),
    2: ((3, 2), (3, 1)),
    3: ((3, 2), (3, 2)),
    4: ((3, 2), (5, 4)),
    5: ((5, 4), (5, 4)),
}

VGG_DEPTHS = (2, 2, 3, 3, 3)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 96
    block_channels: tuple = (16, 32, 48, 64, 64)
    side_channels: int = 32
    fuse_channels: Optional[int] = None
    global_kernels: tuple = (3, 1, 1)
    egb_count: int = 5
    supervise_fullres: bool = False

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        object.__setattr__(self, "global_kernels", tuple(int(k) for k in self.global_kernels))
        if self.fuse_channels is None:
            object.__setattr__(self, "fuse_channels", self.side_channels)
        self.validate()

    def validate(self) -> None:
        if self.input_size <= 0 or self.input_size % 32:
            raise ConfigError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if len(self.block_channels) != 5 or min(self.block_channels) < 1:
            raise ConfigError(f"block_channels must be 5 positive integers, got {self.block_channels}")
        if self.side_channels < 1 or self.fuse_channels < 1:
            raise ConfigError("side_channels and fuse_channels must be positive")
        if self.egb_count not in EGB_LEVELS:
            raise ConfigError(f"egb_count must be one of 0, 3, 5, got {self.egb_count}")
        size = self.level_size(5)
        for k in self.global_kernels:
            if k < 1 or k > size:
                raise ConfigError(
                    f"global_kernels {self.global_kernels} cannot be applied to a {self.level_size(5)}x"
                    f"{self.level_size(5)} level-5 map"
                )
            size = size - k + 1
        if size != 1:
            raise ConfigError(
                f"global_kernels {self.global_kernels} reduce the level-5 map to {size}x{size}, not 1x1"
            )
        for level, convs in EGB_GEOMETRY.items():
            s = self.level_size(1)
            for k, stride in convs:
                s = ConvSpec(k, stride, "same").conv_out(s, s)[0]
            if s != self.level_size(level):
                raise ConfigError(f"guidance branch {level} yields {s}, expected {self.level_size(level)}")

    def level_size(self, level: int) -> int:
        return self.input_size >> level

    @property
    def egb_levels(self) -> tuple:
        return EGB_LEVELS[self.egb_count]

    @property
    def supervision_size(self) -> int:
        return self.input_size if self.supervise_fullres else self.level_size(1)


@dataclass(frozen=True)
class LossWeights:
    lam: float = 1.0
    gamma: float = 1.0
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ConfigError("loss weights must be nonnegative")
        if not 0 < self.epsilon < 0.5:
            raise ConfigError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 1
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    augment: bool = True
    checkpoint_every: int = 1

    def __post_init__(self):
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", _build(LossWeights, self.weights, "train.weights"))
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")


PAPER_NETWORK = NetworkConfig(
    input_size=352,
    block_channels=(64, 128, 256, 512, 512),
    side_channels=128,
    global_kernels=(5, 5, 3),
)
DESK_NETWORK = NetworkConfig()
PAPER_TRAIN = TrainConfig(learning_rate=1e-5, epochs=10, batch_size=1, augment=True)
DESK_TRAIN = TrainConfig()


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig = DESK_NETWORK
    train: TrainConfig = DESK_TRAIN
    data: Optional[str] = None
    out: Optional[str] = None


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def run_config_from_dict(raw: dict) -> RunConfig:
    """Strictly validate a JSON document; unknown keys are rejected at every level."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - {"network", "train", "data", "out"})
    if unknown:
        raise ConfigError(f"unknown key(s) in config: {', '.join(unknown)}")
    return RunConfig(
        network=_build(NetworkConfig, raw.get("network", {}), "network"),
        train=_build(TrainConfig, raw.get("train", {}), "train"),
        data=raw.get("data"),
        out=raw.get("out"),
    )


PRESET_DIR = Path(__file__).parent / "presets"


def load_run_config(path_or_preset: str) -> RunConfig:
    """Load a JSON config file, or a shipped preset by name ("desk", "paper")."""
    path = Path(path_or_preset)
    if not path.exists():
        preset = PRESET_DIR / f"{path_or_preset}.json"
        if not preset.exists():
            raise ConfigError(f"config file not found: {path_or_preset}")
        path = preset
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return run_config_from_dict(raw)


def to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
