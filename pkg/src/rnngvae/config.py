"""Run configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .transitions import Constraints


@dataclass
class TrainConfig:
    # embedding and network sizes (defaults from the reference hyperparameter table)
    learned_dim: int = 40
    pretrained_dim: int = 50
    pos_dim: int = 20
    enc_lstm_dim: int = 128
    dec_lstm_dim: int = 256
    lstm_layers: int = 2
    enc_dropout: float = 0.2
    dec_dropout: float = 0.3
    nt_dim: int = 20
    attention_dim: int = 0     # 0 -> enc_lstm_dim
    enc_mlp_dim: int = 0       # 0 -> enc_lstm_dim
    dec_mlp_dim: int = 0       # 0 -> dec_lstm_dim

    # transition limits
    max_open_nt: int = 100
    max_len: int = 120

    # objective
    lambda_x: float = 1.0
    lambda_a: float = 1.0
    samples: int = 1
    baseline_decay: float = 0.95

    # optimisation
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip: float = 5.0
    plateau_decay: float = 1.0  # multiply lr by this when dev objective stops improving; 1 = off
    epochs: int = 10
    dev_samples: int = 1

    # data and reproducibility
    min_count: int = 2
    seed: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("learned_dim", "pretrained_dim", "pos_dim", "enc_lstm_dim", "dec_lstm_dim",
                     "lstm_layers", "nt_dim", "max_open_nt", "max_len", "samples", "epochs",
                     "dev_samples", "min_count"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lambda_x < 0 or self.lambda_a < 0 or (self.lambda_x == 0 and self.lambda_a == 0):
            raise ValueError("lambda_x and lambda_a must be >= 0 and not both 0")
        if not 0 <= self.enc_dropout < 1 or not 0 <= self.dec_dropout < 1:
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def limits(self) -> Constraints:
        return Constraints(self.max_open_nt, self.max_len)

    @property
    def attn(self) -> int:
        return self.attention_dim or self.enc_lstm_dim

    @property
    def enc_mlp(self) -> int:
        return self.enc_mlp_dim or self.enc_lstm_dim

    @property
    def dec_mlp(self) -> int:
        return self.dec_mlp_dim or self.dec_lstm_dim

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = dataclasses.asdict(base) if base is not None else {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], value, key)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())


def _coerce(type_name, value: str, key: str):
    try:
        if type_name in ("int", int):
            return int(value)
        if type_name in ("float", float):
            return float(value)
        return value
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot read {value!r} as {type_name}") from None
