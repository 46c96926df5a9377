"""Run configuration: TOML sections, dotted-key overrides and a stable digest."""

from __future__ import annotations

import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field, fields

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from .dste import EncoderConfig
from .mgfd import LossWeights
from .skelio import AugSpec

MODALITIES = ("joint", "bone", "motion")
PAIRINGS = ("augment", "multiview")


@dataclass
class TrainConfig:
    modalities: list = field(default_factory=lambda: list(MODALITIES))
    pairing: str = "multiview"
    copies: int = 2
    batch_size: int = 32
    epochs: int = 30
    lr: float = 1e-3
    decay_epoch: int = 24
    weight_decay: float = 1e-5
    seed: int = 0
    checkpoint: str = "pretrain.ckpt"
    log: str = "pretrain_log.jsonl"
    checkpoint_every: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.modalities = list(self.modalities)
        bad = [m for m in self.modalities if m not in MODALITIES]
        if bad or not self.modalities:
            raise ValueError(f"modalities must be a non-empty subset of {MODALITIES}, got {self.modalities}")
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}, got {self.pairing!r}")
        if self.copies < 2:
            raise ValueError("copies (K) must be >= 2")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.decay_epoch > self.epochs:
            raise ValueError(f"decay_epoch {self.decay_epoch} exceeds epochs {self.epochs}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


@dataclass
class DataConfig:
    manifest: str = ""
    train_split: str = "train"
    test_split: str = "test"
    rotation: float = 15.0
    shear: float = 0.3
    scale_low: float = 0.9
    scale_high: float = 1.1
    jitter: float = 0.005
    crop_low: float = 0.8
    crop_high: float = 1.0
    flip_prob: float = 0.5

    def aug_spec(self, flip_pairs=(), seed: int = 0) -> AugSpec:
        r = abs(self.rotation)
        return AugSpec(
            rotation=((-r, r),) * 3 if r else None,
            shear=(-abs(self.shear), abs(self.shear)) if self.shear else None,
            scale=(self.scale_low, self.scale_high) if (self.scale_low, self.scale_high) != (1.0, 1.0) else None,
            jitter=self.jitter,
            crop=(self.crop_low, self.crop_high) if (self.crop_low, self.crop_high) != (1.0, 1.0) else None,
            flip_prob=self.flip_prob,
            flip_pairs=tuple(map(tuple, flip_pairs)),
            seed=seed,
        )


@dataclass
class PretrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    SECTIONS = ("encoder", "loss", "train", "data")

    def to_dict(self) -> dict:
        return {s: asdict(getattr(self, s)) for s in self.SECTIONS}

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        unknown = set(d) - set(cls.SECTIONS)
        if unknown:
            raise KeyError(f"unknown config section(s) {sorted(unknown)}; valid: {list(cls.SECTIONS)}")
        cfg = cls()
        for section, values in d.items():
            values = {("lam" if k == "lambda" else k): v for k, v in values.items()}
            cfg = cfg.updated({f"{section}.{k}": v for k, v in values.items()})
        return cfg

    def updated(self, overrides: dict) -> "PretrainConfig":
        """Apply ``{"section.key": value}`` overrides; string values are coerced to the field type."""
        sections = {s: asdict(getattr(self, s)) for s in self.SECTIONS}
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in sections or name not in sections[section]:
                raise KeyError(f"invalid config key {key!r}; valid keys: {', '.join(config_keys())}")
            sections[section][name] = _coerce(value, field_types()[key])
        train = sections["train"]
        if "train.epochs" in overrides and "train.decay_epoch" not in overrides:
            # shortened runs keep the decay inside the run
            train["decay_epoch"] = min(train["decay_epoch"], train["epochs"])
        return PretrainConfig(**{s: type(getattr(self, s))(**v) for s, v in sections.items()})

    def digest(self) -> str:
        return config_digest(self.to_dict())

    @classmethod
    def load(cls, path) -> "PretrainConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_toml(self) -> str:
        lines = []
        for s, values in self.to_dict().items():
            lines.append(f"[{s}]")
            for k, v in values.items():
                lines.append(f"{k} = {json.dumps(v)}")
            lines.append("")
        return "\n".join(lines)


def field_types() -> dict[str, type]:
    out = {}
    for s in PretrainConfig.SECTIONS:
        cls = typing.get_type_hints(PretrainConfig)[s]
        hints = typing.get_type_hints(cls)
        for f in fields(cls):
            out[f"{s}.{f.name}"] = hints[f.name]
    return out


def config_keys() -> list[str]:
    return list(field_types())


def _coerce(value, typ):
    if not isinstance(value, str):
        if typ is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value
    if typ is bool:
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"cannot parse {value!r} as a boolean")
        return low in ("true", "1", "yes")
    if typ is int:
        return int(value)
    if typ is float:
        return float(value)
    if typ is list:
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


def config_digest(resolved: dict) -> str:
    """SHA-256 of the canonical JSON serialization of a resolved config."""
    raw = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(raw.encode()).hexdigest()
