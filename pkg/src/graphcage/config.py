"""Configuration dataclasses and the flat key=value config file parser."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, asdict

AGGREGATION_STRATEGIES = ("capsule", "mean", "attention", "recurrent")
CONSTRUCTION_MODES = ("capsule", "direct")


@dataclass
class ModelConfig:
    """Sizes of every stage of the model, desk-scale defaults."""

    d_t: int = 8          # raw feature dims per modality
    d_a: int = 6
    d_v: int = 6
    max_len_t: int = 20   # per-time-step capsule weights are positional
    max_len_a: int = 120
    max_len_v: int = 150
    d_h: int = 8          # cross-modal branch width; fused dim is 2*d_h
    heads: int = 2
    depth: int = 2        # cross-modal transformer layers
    d_c: int = 16         # capsule dimension
    n_nodes: int = 12
    routing_iters: int = 2
    aggregation: str = "capsule"
    construction: str = "capsule"

    def __post_init__(self):
        for f in ("d_t", "d_a", "d_v", "max_len_t", "max_len_a", "max_len_v",
                  "d_h", "heads", "depth", "d_c", "n_nodes", "routing_iters"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1, got {getattr(self, f)}")
        if self.d_h % 2 != 0:
            raise ValueError("d_h must be even (sinusoidal position codes)")
        if self.d_h % self.heads != 0:
            raise ValueError(f"d_h={self.d_h} not divisible by heads={self.heads}")
        if self.aggregation not in AGGREGATION_STRATEGIES:
            raise ValueError(f"unknown aggregation strategy {self.aggregation!r}")
        if self.construction not in CONSTRUCTION_MODES:
            raise ValueError(f"unknown construction mode {self.construction!r}")

    @property
    def fused_dim(self) -> int:
        return 2 * self.d_h

    def max_len(self, modality: str) -> int:
        return {"t": self.max_len_t, "a": self.max_len_a,
                "v": self.max_len_v}[modality]


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    l2_lambda: float = 1e-4
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 20
    grad_clip: float = 1.0
    seed: int = 0
    train_path: str = ""
    val_path: str = ""
    test_path: str = ""

    def __post_init__(self):
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be > 0")


_MODEL_FIELDS = {f.name for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)} - {"model"}


def _parse_value(token: str):
    token = token.strip()
    if len(token) >= 2 and token[0] == token[-1] and token[0] in "\"'":
        return token[1:-1]
    low = token.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token  # bare string


def _parse_flat_kv(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key = value, "
                             f"got {line!r}")
        key, value = stripped.split("=", 1)
        raw[key.strip()] = _parse_value(value)
    return raw


def parse_config_text(text: str) -> TrainConfig:
    """Parse a flat key=value (TOML-style) config into a TrainConfig.

    One key per line, ``#`` comments, optionally quoted strings. Model and
    training keys live in one flat namespace. The GRAPHCAGE_SEED environment
    variable, when set, overrides the configured seed.
    """
    raw = _parse_flat_kv(text)
    model_kw, train_kw = {}, {}
    for key, value in raw.items():
        if key in _MODEL_FIELDS:
            model_kw[key] = value
        elif key in _TRAIN_FIELDS:
            train_kw[key] = value
        else:
            raise ValueError(f"unknown config key: {key}")
    cfg = TrainConfig(model=ModelConfig(**model_kw), **train_kw)
    env_seed = os.environ.get("GRAPHCAGE_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed)
    return cfg


def load_config(path: str) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
