"""Run configuration: one JSON file, hashed into every artifact it produces."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

OUTPUT_ROOT_ENV = "AVDIFF_OUTPUT_ROOT"


@dataclass
class RunConfig:
    # noise schedule
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # denoisers
    width: int = 64
    text_dim: int = 128
    heads: int = 4
    groups: int = 8
    # interaction and alignment (ablation switches)
    bridge: bool = True
    eas_lambda: float = 0.1
    tau: float = 0.1
    eas_mode: str = "token"
    # optimisation
    batch_size: int = 8
    steps: int = 2000
    lr: float = 1e-4
    seed: int = 0
    # data and codecs
    n_train: int = 64
    manifest: str | None = None
    codec: str = "analytic"
    codec_steps: int = 2000
    duration: float = 2.0
    # io
    output_dir: str = "runs/default"
    checkpoint_every: int = 0
    sample_steps: int = 50

    def validate(self) -> "RunConfig":
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        if self.eas_lambda < 0:
            raise ValueError(f"eas_lambda must be >= 0, got {self.eas_lambda}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.eas_mode not in ("token", "pooled"):
            raise ValueError(f"eas_mode must be 'token' or 'pooled', got {self.eas_mode!r}")
        if self.codec not in ("analytic", "learned"):
            raise ValueError(f"codec must be 'analytic' or 'learned', got {self.codec!r}")
        if self.batch_size < 1 or self.steps < 0 or self.lr <= 0:
            raise ValueError("batch_size >= 1, steps >= 0 and lr > 0 required")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} must be divisible by heads {self.heads}")
        if self.manifest is not None and not Path(self.manifest).is_file():
            raise FileNotFoundError(f"manifest not found: {self.manifest}")
        if self.manifest is None and self.n_train < self.batch_size:
            raise ValueError(f"n_train ({self.n_train}) smaller than batch_size ({self.batch_size})")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def resolved_output_dir(self) -> Path:
        """output_dir, re-rooted under $AVDIFF_OUTPUT_ROOT when that is set and the path is relative."""
        out = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out
