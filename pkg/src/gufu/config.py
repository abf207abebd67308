"""Run configuration: hyperparameters, strictness flags and seeding."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ValidationError

__all__ = ["RunConfig"]


@dataclass
class RunConfig:
    sigma: float = 0.95                 # virtual-edge cosine threshold
    alpha: float = 0.5                  # update-module loss mix
    epsilon: float = 0.1                # trust convergence threshold
    lr: float = 0.01
    epochs: int = 50                    # initial training epochs (AE and GNN)
    retrain_epochs: int = 20            # per-cycle AE/GNN retraining epochs
    update_epochs: int = 300            # per-cycle update-module epochs
    layers: int = 2                     # aggregation layers
    negatives_per_edge: int = 5
    dropout: float = 0.5
    code_dim: int = 32
    ae_hidden: int = 128
    mlp_hidden: int = 64
    max_neighbors: int | None = None    # optional neighbor-sampling cap
    trust_max_iterations: int = 100
    snap_floor_dbm: float = -110.0      # decoded values below this count as undetected
    enable_edge_prediction: bool = True
    fresh_update_mlps: bool = False     # retrain update MLPs from scratch each cycle
    strict_gnn_loss: bool = False       # attraction-only loss, no negative sampling
    strict_delta: bool = False          # decision threshold pinned to 0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.sigma < 1.0):
            raise ValidationError(f"sigma must lie in (0, 1), got {self.sigma}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.epsilon <= 0.0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def feature_dim(self) -> int:
        return self.code_dim + 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        with open(path) as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid config JSON in {path}: {exc}") from exc
        return cls.from_dict(obj)

    def replaced(self, **overrides) -> "RunConfig":
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(data)
