"""
Experiment Protocols

Configuration models for experiment runs and the response records the
experiment agent hands back to the command line. Configurations are YAML
files validated with pydantic; responses are plain dataclasses that collect
per-run outcomes instead of raising.
"""

from typing import Any, Dict, List, Optional, Union
from dataclasses import dataclass, asdict
from enum import Enum
from pathlib import Path
import logging

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..tools.mcgd_solver import (
    NoiseDirection, NoiseFamily, NoiseSchedule, ScheduleFamily, StepSchedule,
)
from ..tools.objectives import LossFamily

logger = logging.getLogger(__name__)


class ExperimentKind(str, Enum):
    """Experiments the runner knows how to execute"""
    AR_COMPARISON = "ar_comparison"
    CHAIN_COMPARISON = "chain_comparison"
    CUSTOM = "custom"


class ChainSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(20, ge=8)
    edge_prob: float = Field(0.3, gt=0, le=1)
    num_cycles: int = Field(5, ge=0)
    cycle_len: int = Field(4, ge=3)
    w0_factor: float = Field(0.5, ge=0)
    start_state: int = Field(0, ge=0)
    chain_file: Optional[str] = None


class ScheduleSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: ScheduleFamily = ScheduleFamily.POWER
    a: float = 1.0
    q: float = 0.501

    def build(self) -> StepSchedule:
        if self.family == ScheduleFamily.CONSTANT:
            return StepSchedule.constant(self.a)
        return StepSchedule.power(self.a, self.q)


class NoiseSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: NoiseFamily = NoiseFamily.NONE
    c: float = 0.0
    p: float = 1.0
    direction: NoiseDirection = NoiseDirection.SEEDED_RANDOM_UNIT

    def build(self) -> NoiseSchedule:
        if self.family == NoiseFamily.NONE:
            return NoiseSchedule.none()
        return NoiseSchedule.power(self.c, self.p, self.direction)


class ExperimentConfig(BaseModel):
    """One experiment; every field has the default of the reference setup"""
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentKind = ExperimentKind.AR_COMPARISON
    losses: List[LossFamily] = Field(default_factory=lambda: [LossFamily.LOGISTIC, LossFamily.SIGMOID_SQ])
    chain: ChainSettings = Field(default_factory=ChainSettings)
    schedule: ScheduleSettings = Field(default_factory=ScheduleSettings)
    noise: NoiseSettings = Field(default_factory=NoiseSettings)
    iterations: int = Field(100_000, ge=1)
    log_every: int = Field(100, ge=1)
    T_list: List[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    ar_dimension: int = Field(50, ge=1)
    ar_flip_prob: float = Field(0.2, ge=0, le=1)
    ar_eval_samples: int = Field(2000, ge=10)
    dataset_dimension: int = Field(10, ge=1)
    ball_radius: float = Field(10.0, gt=0)
    estimate_samples: int = Field(256, ge=2)
    reference_max_iter: int = Field(20_000, ge=1)
    target_fractions: List[float] = Field(default_factory=lambda: [0.1, 0.01, 0.001])
    output_dir: str = "results"
    dump_datasets: bool = False
    unsafe: bool = False

    @field_validator("T_list")
    @classmethod
    def _positive_horizons(cls, value: List[int]) -> List[int]:
        if any(T < 1 for T in value):
            raise ValueError("every T in T_list must be >= 1")
        return value

    @field_validator("losses")
    @classmethod
    def _known_losses(cls, value: List[LossFamily]) -> List[LossFamily]:
        if not value:
            raise ValueError("at least one loss is required")
        if LossFamily.QUADRATIC in value:
            raise ValueError("quadratic components are for fixtures, not experiments")
        return value


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a YAML experiment file; an empty file yields the defaults"""
    with open(path, "r") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    config = ExperimentConfig(**data)
    logger.info(f"Loaded {config.experiment.value} configuration from {path}")
    return config


@dataclass
class RunOutcome:
    """Result of one (loss, method, seed) run"""
    experiment: str
    loss: str
    method: str
    seed: int
    success: bool
    csv_file: Optional[str] = None
    error_message: Optional[str] = None
    summary: Dict[str, Any] = None

    def __post_init__(self):
        if self.summary is None:
            self.summary = {}

    def to_row(self) -> Dict[str, Any]:
        row = {
            "experiment": self.experiment,
            "loss": self.loss,
            "method": self.method,
            "seed": self.seed,
            "status": "ok" if self.success else "failed",
            "error": self.error_message or "",
        }
        row.update({k: v for k, v in self.summary.items() if k not in row})
        return row


@dataclass
class ExperimentResponse:
    """Batch outcome: per-run results, written files and collected errors"""
    success: bool
    experiment: str
    runs: List[RunOutcome] = None
    data_files: List[str] = None
    errors: List[str] = None
    validation_failed: bool = False
    processing_time_seconds: float = 0.0

    def __post_init__(self):
        if self.runs is None:
            self.runs = []
        if self.data_files is None:
            self.data_files = []
        if self.errors is None:
            self.errors = []

    @property
    def failed_runs(self) -> List[RunOutcome]:
        return [run for run in self.runs if not run.success]


@dataclass
class BuildChainResponse:
    success: bool
    p_file: Optional[str] = None
    q_file: Optional[str] = None
    metadata_file: Optional[str] = None
    lambda2_p: Optional[float] = None
    lambda2_q: Optional[float] = None
    error_message: Optional[str] = None


@dataclass
class MixingAnalysisResponse:
    success: bool
    csv_file: Optional[str] = None
    rows: int = 0
    error_message: Optional[str] = None


@dataclass
class ConditionCheck:
    condition: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    valid: bool
    checks: List[ConditionCheck] = None
    errors: List[str] = None

    def __post_init__(self):
        if self.checks is None:
            self.checks = []
        if self.errors is None:
            self.errors = []

    @property
    def failures(self) -> List[ConditionCheck]:
        return [check for check in self.checks if not check.passed]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
