"""Declarative run configuration.

Config file (JSON), found via ``--config``, then ``PPSR_CONFIG``, then the
built-in defaults:

    {
      "clustering": {"K": 3, "lambda_pair": [[0, 1], [1, 0]], "seed": 0},
      "similarity": {"lambda_P": 1, "min_df": 2},
      "crypto": {"key_bits": 2048, "scale": 1000000},
      "experiment": {"seeds": [0, 1, 2], "mode": "plaintext"},
      "output": {"dir": "results"}
    }

Any key can be overridden with ``--set section.key=value``; the value is
parsed as JSON and falls back to a plain string.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Literal, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ppsr.data_io import SyntheticSpec
from ppsr.errors import ConfigError
from ppsr.matrixfile import atomic_write_text
from ppsr.multiview_nmf import MultiViewConfig
from ppsr.paillier import TEST_KEYSIZE, FixedPointCodec
from ppsr.social_similarity import SimilarityWeights

CONFIG_ENV = "PPSR_CONFIG"


class SimilaritySection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda_P: float = Field(1.0, ge=0)
    lambda_C: float = Field(1.0, ge=0)
    lambda_I: float = Field(1.0, ge=0)
    lambda_R: float = Field(1.0, ge=0)
    lambda_F: float = Field(1.0, ge=0)
    lambda_Lk: float = Field(1.0, ge=0)
    lambda_Cmt: float = Field(1.0, ge=0)
    lambda_Rp: float = Field(1.0, ge=0)
    min_df: int = Field(2, ge=1)

    def weights(self) -> SimilarityWeights:
        return SimilarityWeights(**self.model_dump(exclude={"min_df"}))


class CryptoSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    key_bits: int = Field(2048, ge=TEST_KEYSIZE)
    scale: int = Field(10**6, gt=0)
    rank_max: int = Field(5, gt=0)
    mask_bits: int = Field(64, ge=1, le=256)
    key_file: Optional[str] = None
    key_seed: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _even_bits(self):
        if self.key_bits % 2:
            raise ValueError("key_bits must be even")
        return self

    def codec(self) -> FixedPointCodec:
        return FixedPointCodec(self.scale)


class ExperimentSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dataset: Optional[str] = None
    dataset_kind: Literal["lastfm", "delicious", "movielens-hetrec"] = "lastfm"
    synthetic: SyntheticSpec = SyntheticSpec()
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    split_seed: int = Field(0, ge=0)
    train_fraction: float = Field(0.75, gt=0, lt=1)
    revealed_items: int = Field(2, ge=1)
    relevance_threshold: int = Field(4, ge=1)
    k_min: int = Field(3, ge=1)
    k_max: int = Field(10, ge=1)
    single_view: int = Field(0, ge=0)
    mode: Literal["plaintext", "protocol"] = "plaintext"
    transport: Literal["inprocess", "socket"] = "inprocess"
    # seconds a party waits for the next frame; null waits while the peer is alive
    timeout: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.k_min > self.k_max:
            raise ValueError("k_min must not exceed k_max")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        return self


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dir: str = "results"


class PPSRConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    clustering: MultiViewConfig = MultiViewConfig()
    similarity: SimilaritySection = SimilaritySection()
    crypto: CryptoSection = CryptoSection()
    experiment: ExperimentSection = ExperimentSection()
    output: OutputSection = OutputSection()


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    where = ".".join(str(p) for p in err["loc"])
    return f"{where}: {err['msg']}" if where else err["msg"]


def parse_config(doc: dict[str, Any]) -> PPSRConfig:
    try:
        return PPSRConfig.model_validate(doc)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {_first_error(e)}") from None


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(doc: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Apply ``a.b.c=value`` assignments to a nested dict (copied)."""
    doc = json.loads(json.dumps(doc))
    for item in overrides:
        key, sep, raw = item.partition("=")
        path = [p for p in key.strip().split(".") if p]
        if not sep or not path:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        node = doc
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override {item!r}: {part} is not a section")
            node = child
        node[path[-1]] = _parse_value(raw)
    return doc


def _resolve_path(path: Optional[str]) -> Optional[Path]:
    if path:
        return Path(path).expanduser()
    if os.environ.get(CONFIG_ENV):
        return Path(os.environ[CONFIG_ENV]).expanduser()
    return None


def load_config(path: Optional[str] = None, overrides: Sequence[str] = ()) -> PPSRConfig:
    """Read, override and validate the effective configuration."""
    doc: dict[str, Any] = {}
    resolved = _resolve_path(path)
    if resolved is not None:
        try:
            doc = json.loads(resolved.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {resolved}") from None
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{resolved}: unreadable config ({e})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{resolved}: top level must be an object")
    return parse_config(apply_overrides(doc, overrides))


def config_json(config: PPSRConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def config_digest(config: PPSRConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_config(config: PPSRConfig, path: Path | str) -> None:
    atomic_write_text(path, config_json(config))
