"""Store configuration: dataclass defaults, a JSON file, then env overrides."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ValidationError

ENV_PREFIX = "MEMDAG_"


@dataclass
class Config:
    dim: int = 1024
    # graph
    k_parents: int = 10
    thread_limit: int = 32
    # write path
    align_k: int = 3
    theta: float = 0.80
    retries: int = 2
    workers: int = 4
    batch_size: int = 20
    # read path
    seed_k: int = 5
    min_sim: float = 0.35
    max_depth: int = 16
    max_nodes: int = 128
    rag_k: int = 5
    max_iterations: int = 6
    # provider
    provider: str = "mock"
    mock_seed: int = 0
    extra_body: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        problems = []
        for name in ("dim", "k_parents", "thread_limit", "align_k", "seed_k", "rag_k", "max_iterations", "workers", "batch_size"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if not 0.0 < self.theta <= 1.0:
            problems.append("theta must lie in (0, 1]")
        if not -1.0 <= self.min_sim <= 1.0:
            problems.append("min_sim must lie in [-1, 1]")
        for name in ("max_depth", "max_nodes"):
            if getattr(self, name) < -1:
                problems.append(f"{name} must be >= -1 (-1 = unbounded)")
        if self.retries < 0:
            problems.append("retries must be >= 0")
        if self.provider not in ("mock", "openai"):
            problems.append("provider must be 'mock' or 'openai'")
        if problems:
            raise ValidationError("invalid configuration", problems)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def updated(self, **overrides: Any) -> Config:
        data = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in data:
                raise ValidationError(f"unknown config key {key!r}")
            data[key] = value
        cfg = Config(**data)
        cfg.validate()
        return cfg


def _coerce(name: str, raw: str, current: Any) -> Any:
    try:
        if isinstance(current, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, dict):
            return json.loads(raw)
    except ValueError as exc:
        raise ValidationError(f"bad value for {ENV_PREFIX}{name.upper()}: {exc}") from None
    return raw


def load_config(path: str | Path | None = None, env: dict[str, str] | None = None, **overrides: Any) -> Config:
    """Defaults, then ``path`` (JSON), then ``MEMDAG_<KEY>`` variables, then ``overrides``."""
    data = Config().to_dict()
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        unknown = set(loaded) - set(data)
        if unknown:
            raise ValidationError("unknown config keys", sorted(unknown))
        data.update(loaded)
    env = os.environ if env is None else env
    for f in fields(Config):
        raw = env.get(ENV_PREFIX + f.name.upper())
        if raw is not None:
            data[f.name] = _coerce(f.name, raw, data[f.name])
    cfg = Config(**data)
    return cfg.updated(**overrides)
