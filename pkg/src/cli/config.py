"""
Experiment configuration.

Precedence: command-line flags > config file (YAML; JSON is valid YAML) >
MFG_LAB_* environment variables > defaults.
"""

import logging
from pathlib import Path

import yaml
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from common.artifacts import config_hash
from common.errors import ModelFileError
from nash.best_response import CandidateSpec
from solver.options import SolveOptions

logger = logging.getLogger(__name__)

DEFAULT_N_GRID = [8, 16, 32, 64, 128, 256, 512, 1024]

# Excluded from the config hash: they do not change any result
UNHASHED_FIELDS = {"output_dir", "threads", "show_progress", "dump_tree"}


class ExperimentConfig(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="MFG_LAB_", env_nested_delimiter="__", extra="forbid")

    model_path: Path
    depth: int = Field(default=8, ge=1, le=20)
    solver: SolveOptions = Field(default_factory=SolveOptions)
    n_grid: list[int] = Field(default_factory=lambda: list(DEFAULT_N_GRID))
    replications: int = Field(default=64, ge=1)
    agents: int = Field(default=64, ge=2)
    seed: int = 20240607
    output_dir: Path = Path("runs/latest")
    threads: int = Field(default=1, ge=1)
    permissive: bool = False
    gate: bool = False
    samples: int = Field(default=50, ge=1)
    candidates: CandidateSpec = Field(default_factory=CandidateSpec)
    dump_tree: bool = False
    show_progress: bool = True

    @field_validator("model_path")
    @classmethod
    def model_file_must_exist(cls, v):
        if not Path(v).is_file():
            raise ValueError(f"Model file not found: {v}")
        return v

    @field_validator("n_grid")
    @classmethod
    def grid_must_be_valid(cls, v):
        if not v:
            raise ValueError("n_grid must not be empty")
        if any(N < 2 for N in v):
            raise ValueError("every N in n_grid must be >= 2")
        return sorted(set(v))

    def hash_payload(self):
        return self.model_dump(mode="json", exclude=UNHASHED_FIELDS)

    def config_hash(self, model_bytes=b""):
        return config_hash(self.hash_payload(), model_bytes)


def read_config_file(path):
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise ModelFileError(f"Cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ModelFileError(f"Config file {path} is not valid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ModelFileError(f"Config file {path} must hold a mapping")
    return data


def _merge(base, overrides):
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            base_value = merged.get(key) if isinstance(merged.get(key), dict) else {}
            nested = _merge(base_value, value)
            if nested:
                merged[key] = nested
        else:
            merged[key] = value
    return merged


def load_config(config_path=None, overrides=None):
    """Build the effective config; `overrides` come from command-line flags (None = unset)."""
    values = read_config_file(config_path) if config_path else {}
    values = _merge(values, overrides or {})
    config = ExperimentConfig(**values)
    logger.debug("Effective config: %s", config.model_dump(mode="json"))
    return config
