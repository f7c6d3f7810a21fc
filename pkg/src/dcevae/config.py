"""Training configuration shared by every model variant."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

VARIANTS = ("dcevae", "cevae", "mcevae", "cvae")


@dataclass
class TrainConfig:
    variant: str = "dcevae"
    latent_d: int = 5          # m = |u_d|
    latent_r: int = 5          # n = |u_r|
    hidden: list = field(default_factory=lambda: [32])
    disc_hidden: list = field(default_factory=lambda: [32, 32])
    epochs: int = 20
    batch_size: int = 256
    lr: float = 1e-3
    disc_lr: float = 1e-3
    beta_tc: float = 5.0
    beta_f: float = 0.0
    # per-term reconstruction weights (DCEVAE); all 1 by default
    w_xd: float = 1.0
    w_xr: float = 1.0
    w_y: float = 1.0
    # mCEVAE
    lambda_x: float = 1.0
    lambda_y: float = 1.0
    lambda_1: float = 1.0
    lambda_2: float = 1.0
    mmd_bandwidths: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    seed: int = 0
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("latent_d", "latent_r", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        for name in ("lr", "disc_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("beta_tc", "beta_f", "lambda_1", "lambda_2", "lambda_x", "lambda_y",
                     "w_xd", "w_xr", "w_y"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if any(int(h) < 1 for h in list(self.hidden) + list(self.disc_hidden)):
            raise ValueError("hidden widths must be positive")

    @property
    def latent_total(self) -> int:
        return self.latent_d + self.latent_r

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))
