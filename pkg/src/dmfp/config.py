"""Run configuration: a flat JSON document validated into :class:`RunConfig`.

Array-valued inputs (``alpha``, ``reward_mean``, ``reward_sd``) may be given
inline as numbers or as paths to ``.npy``, ``.csv`` or ``.json`` files;
relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .types import Policy, PriorSpec, check_prior

__all__ = ["RunConfig", "parse_config", "load_config", "config_digest", "load_array"]


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    num_states: int = Field(ge=1)
    num_actions: int = Field(ge=1)
    discount: float = Field(ge=0.0, lt=1.0)
    alpha: Union[float, str] = "1/N"
    reward_mean: Union[float, str] = 0.0
    reward_sd: Union[float, str] = 0.0
    replicates: int = Field(default=100, ge=2)
    seed: int = Field(default=0, ge=0, lt=2**64)
    eps: float = Field(default=1e-8, gt=0.0)
    max_iters: int = Field(default=10_000, ge=1)
    backend: Literal["quadrature", "gumbel"] = "quadrature"
    snapshots: Optional[List[int]] = None
    horizon: Optional[int] = Field(default=None, ge=1)
    retained_pairs: int = Field(default=32, ge=0)
    policy: Optional[Union[Literal["greedy"], List[int]]] = None
    out_dir: str = "out"
    base_dir: Optional[str] = Field(default=None, exclude=True)

    @field_validator("alpha")
    @classmethod
    def _alpha(cls, v):
        if isinstance(v, float) and not v > 0:
            raise ValueError("concentration must be > 0")
        return v

    @field_validator("reward_sd")
    @classmethod
    def _sd(cls, v):
        if isinstance(v, float) and v < 0:
            raise ValueError("reward standard deviation must be >= 0")
        return v

    @field_validator("snapshots")
    @classmethod
    def _snapshots(cls, v):
        if v is not None and any(i < 1 for i in v):
            raise ValueError("snapshot iterations are numbered from 1")
        return v

    def _resolve(self, value, name: str):
        if isinstance(value, str) and not (name == "alpha" and value.replace(" ", "") == "1/N"):
            path = Path(value)
            if not path.is_absolute() and self.base_dir:
                path = Path(self.base_dir) / path
            return load_array(path)
        return value

    def prior(self) -> PriorSpec:
        sd = np.asarray(self._resolve(self.reward_sd, "reward_sd"), dtype=float)
        spec = PriorSpec.build(
            self.num_states,
            self.num_actions,
            self.discount,
            alpha=self._resolve(self.alpha, "alpha"),
            reward_mean=self._resolve(self.reward_mean, "reward_mean"),
            reward_var=sd**2,
        )
        return check_prior(spec)

    def schedule(self) -> Optional[List[int]]:
        """Snapshot iterations; a horizon truncates to ``1..H``."""
        if self.horizon is not None:
            return list(range(1, self.horizon + 1))
        return None if self.snapshots is None else sorted(set(self.snapshots))

    def fixed_policy(self) -> Optional[Policy]:
        if self.policy is None or self.policy == "greedy":
            return None
        return Policy(np.asarray(self.policy), num_actions=self.num_actions)


def load_array(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"{path}: file not found"])
    try:
        if path.suffix == ".npy":
            return np.load(path)
        if path.suffix == ".json":
            return np.asarray(json.loads(path.read_text()), dtype=float)
        return np.loadtxt(path, delimiter=",", ndmin=1)
    except (OSError, ValueError) as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc


def _format_errors(exc: ValidationError) -> List[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"] if not isinstance(p, int) or len(err["loc"]) > 1)
        out.append(f"{loc}: {err['msg']}")
    return out


def parse_config(text: str, base_dir: Optional[str] = None) -> RunConfig:
    """Validate a JSON config document; raises :class:`ConfigError` listing every field error."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])
    for key, value in doc.items():
        if isinstance(value, dict):
            raise ConfigError([f"{key}: nested objects are not allowed"])
    if base_dir is not None:
        doc = {**doc, "base_dir": str(base_dir)}
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None
    for name in ("alpha", "reward_mean", "reward_sd"):
        cfg._resolve(getattr(cfg, name), name)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from exc
    return parse_config(text, base_dir=str(path.parent))


def config_digest(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON form (sorted keys, base_dir excluded)."""
    canon = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
