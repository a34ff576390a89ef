"""
Configuration resolution for cascade-uq.
Loads .env, YAML run files, synthetic specs and schemas, and merges them with
command-line flags (flags > file > defaults) into validated RunConfig models.
"""

import os
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type

import yaml
from dotenv import load_dotenv
from pydantic import ConfigDict, Field, field_validator

from src.core.errors import ConfigError
from src.core.models import BaseCUModel, ExperimentConfig, FeatureSchema, SyntheticSpec
from src.core.simulation import DEFAULT_FRACTIONS

logger = logging.getLogger(__name__)

JOBS_ENV = "CASCADE_UQ_JOBS"
PROJECT_ROOT = Path(__file__).parent.parent.parent
DEFAULT_SPEC_PATH = PROJECT_ROOT / "config" / "baseline_synthetic.yaml"


def load_environment(env_file: Optional[str] = None) -> None:
    """Load .env from the working directory (or the given file) without overriding the shell."""
    load_dotenv(env_file or Path.cwd() / ".env", override=False)


def read_yaml(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        try:
            return yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path} is not valid YAML: {exc}") from exc


def load_run_file(path: Optional[str]) -> Dict[str, Dict[str, Any]]:
    """Per-command sections of a run configuration file ({} when no file is given)."""
    if path is None:
        return {}
    data = read_yaml(path) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must map command names to settings")
    unknown = [key for key in data if key not in RUN_CONFIGS]
    if unknown:
        raise ConfigError(f"{path} has unknown sections: {', '.join(map(str, unknown))}")
    for command, section in data.items():
        if section is not None and not isinstance(section, dict):
            raise ConfigError(f"section '{command}' in {path} must be a key-value mapping")
    return {command: (section or {}) for command, section in data.items()}


def load_synthetic_spec(path: Optional[str] = None) -> SyntheticSpec:
    """Validated synthetic cohort spec (default: the bundled baseline-characteristics parameters)."""
    data = read_yaml(str(path or DEFAULT_SPEC_PATH))
    if not isinstance(data, dict):
        raise ConfigError(f"{path} does not hold a synthetic spec mapping")
    return SyntheticSpec.model_validate(data)


def load_schema(path: Optional[str]) -> Optional[FeatureSchema]:
    if path is None:
        return None
    data = read_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path} does not hold a feature schema mapping")
    return FeatureSchema.model_validate(data)


def resolve_jobs(flag: Optional[int], configured: Optional[int] = None) -> int:
    """Worker count: flag, then config file, then CASCADE_UQ_JOBS, then 1."""
    for value in (flag, configured):
        if value is not None:
            return int(value)
    env = os.getenv(JOBS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{JOBS_ENV} must be an integer, got '{env}'") from None
    return 1


# ========== RUN CONFIGS ==========

class RunConfig(BaseCUModel):
    """Fully resolved settings for one command; unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0)


class GenConfig(RunConfig):
    spec: Optional[str] = None
    n: int = Field(218, ge=2)
    out: str


class SummaryConfig(RunConfig):
    data: str
    schema_path: Optional[str] = Field(None, alias="schema")
    out: str = "results/baseline_summary.csv"


class CvConfig(ExperimentConfig, RunConfig):
    """Experiment settings plus input/output locations."""
    model_config = ConfigDict(extra="forbid")

    data: str
    schema_path: Optional[str] = Field(None, alias="schema")
    out: str = "results"
    svg: bool = False
    n_jobs: Optional[int] = Field(None, exclude=True)

    def experiment(self, jobs: int) -> ExperimentConfig:
        values = {name: getattr(self, name) for name in ExperimentConfig.model_fields if name != "n_jobs"}
        return ExperimentConfig(n_jobs=jobs, **values)


class SimulateConfig(CvConfig):
    fractions: List[float] = Field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    repeats: int = Field(3, ge=1)
    resample: bool = True

    @field_validator("fractions")
    @classmethod
    def _fractions(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("fractions must not be empty")
        for fraction in v:
            if not 0.0 < fraction <= 1.0:
                raise ValueError(f"fractions must lie in (0, 1], got {fraction}")
        return v


class ImportanceConfig(RunConfig):
    models: str
    data: Optional[str] = None
    schema_path: Optional[str] = Field(None, alias="schema")
    method: Literal["coefficient", "permutation"] = "coefficient"
    target: Literal["ensemble1", "ensemble2", "multi_stage", "all"] = "all"
    repeats: int = Field(5, ge=1)
    out: str = "results/importance.csv"


RUN_CONFIGS: Dict[str, Type[RunConfig]] = {
    "gen": GenConfig,
    "summary": SummaryConfig,
    "cv": CvConfig,
    "simulate": SimulateConfig,
    "importance": ImportanceConfig,
}


def build_run_config(command: str, file_values: Dict[str, Any], flags: Dict[str, Any]) -> RunConfig:
    """
    Merge config-file values with command-line flags and validate.

    Flags left unset (None) fall through to the file, then to model defaults.

    Raises:
        pydantic.ValidationError: unknown keys or invalid values
    """
    merged = dict(file_values)
    merged.update({key: value for key, value in flags.items() if value is not None})
    config = RUN_CONFIGS[command].model_validate(merged)
    logger.debug(f"Resolved {command} config", extra={"extra_data": config.to_dict()})
    return config
