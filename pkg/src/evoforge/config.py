"""Run configuration models and the on-disk config file schema (version 1)."""

from __future__ import annotations

import enum
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import hdsl
from .core import Kind
from .fitness import AdaptiveSchedule, Aggregator, AggregatorKind
from .llmio import Role

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Family(str, enum.Enum):
    EXPLORATION = "exploration"
    MODIFICATION = "modification"


class StrategySpec(_Strict):
    label: str
    family: Family
    # None means the family's default instruction for the run mode
    task_instruction: Optional[str] = None
    examples_per_prompt: Optional[int] = Field(default=None, ge=1)
    offspring_requested: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _non_empty(self):
        if self.task_instruction is not None and not self.task_instruction.strip():
            raise ValueError("task_instruction must be non-empty")
        return self

    @property
    def examples(self) -> int:
        """Examples shown per prompt: 5 for exploration, 1 for modification by default."""
        if self.examples_per_prompt is not None:
            return self.examples_per_prompt
        return 1 if self.family is Family.MODIFICATION else 5


DEFAULT_STRATEGIES = (
    StrategySpec(label="E1", family=Family.EXPLORATION),
    StrategySpec(label="M1", family=Family.MODIFICATION),
)


class SelectionConfig(_Strict):
    tournament_size: int = Field(default=2, ge=1)
    groups_per_generation: int = Field(default=4, ge=1)
    group_size: int = Field(default=2, ge=1)


class ReflectionConfig(_Strict):
    enabled: bool = False
    cadence: int = Field(default=5, ge=1)


class AdaptiveConfig(_Strict):
    lambda_max: float = Field(default=0.0, ge=0)
    ramp_generations: int = Field(default=10, ge=1)
    exponent: float = Field(default=1.0, ge=1)
    size_budget: int = Field(default=25, ge=1)

    def schedule(self) -> AdaptiveSchedule:
        return AdaptiveSchedule(self.lambda_max, self.ramp_generations, self.exponent, self.size_budget)


class FitnessConfig(_Strict):
    aggregator: AggregatorKind = AggregatorKind.MEAN
    weights: Optional[list[float]] = None
    adaptive: Optional[AdaptiveConfig] = None

    @model_validator(mode="after")
    def _weights(self):
        if self.aggregator is AggregatorKind.WEIGHTED_SUM and not self.weights:
            raise ValueError("aggregator 'weighted_sum' needs weights")
        if self.weights is not None and any(w <= 0 for w in self.weights):
            raise ValueError("weights must be positive")
        return self

    def aggregator_obj(self) -> Aggregator:
        if self.aggregator is AggregatorKind.MEAN:
            return Aggregator()
        total = sum(self.weights)
        return Aggregator(AggregatorKind.WEIGHTED_SUM, tuple(w / total for w in self.weights))


class BackendBinding(_Strict):
    kind: Literal["synthetic", "scripted", "http"] = "synthetic"
    seed: Optional[int] = None  # synthetic; defaults to the run seed
    script: Optional[str] = None  # scripted
    base_url: Optional[str] = None  # http
    model: Optional[str] = None
    temperature: Optional[float] = Field(default=None, ge=0)
    max_tokens: int = Field(default=1024, ge=1)
    timeout: float = Field(default=60.0, gt=0)
    max_attempts: int = Field(default=5, ge=1)
    backoff_base: float = Field(default=1.0, ge=0)

    @model_validator(mode="after")
    def _params(self):
        if self.kind == "scripted" and not self.script:
            raise ValueError("scripted backend needs 'script'")
        if self.kind == "http" and not (self.base_url and self.model):
            raise ValueError("http backend needs 'base_url' and 'model'")
        return self


DEFAULT_TEMPERATURE = {Role.VARIATION: 1.0, Role.REFLECTIVE: 0.2}


class BackendsConfig(_Strict):
    variation: BackendBinding = BackendBinding()
    reflective: BackendBinding = BackendBinding()
    max_inflight: int = Field(default=1, ge=1)

    def binding(self, role: Role) -> BackendBinding:
        return self.variation if Role(role) is Role.VARIATION else self.reflective


class BudgetConfig(_Strict):
    max_backend_calls: Optional[int] = Field(default=None, ge=0)
    max_evaluations: Optional[int] = Field(default=None, ge=0)


class RunConfig(_Strict):
    mode: Kind
    population_size: int = Field(ge=2)
    generations: int = Field(ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    selection: SelectionConfig = SelectionConfig()
    strategies: tuple[StrategySpec, ...] = DEFAULT_STRATEGIES
    reflection: ReflectionConfig = ReflectionConfig()
    fitness: FitnessConfig = FitnessConfig()
    backends: BackendsConfig = BackendsConfig()
    budget: BudgetConfig = BudgetConfig()
    target_cost: Optional[float] = None
    max_expr_size: int = Field(default=hdsl.DEFAULT_MAX_SIZE, ge=1)

    @model_validator(mode="after")
    def _strategies(self):
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        labels = [s.label for s in self.strategies]
        if len(set(labels)) != len(labels):
            raise ValueError("strategy labels must be unique")
        return self


class ProblemFiles(_Strict):
    instance: Optional[str] = None  # TSP instance (solution search)
    training: Optional[list[str]] = None  # bin-packing instances (heuristic search)

    @model_validator(mode="after")
    def _one(self):
        if (self.instance is None) == (self.training is None):
            raise ValueError("give exactly one of 'instance' or 'training'")
        if self.training is not None and not self.training:
            raise ValueError("'training' must list at least one instance")
        return self


class ConfigFile(RunConfig):
    config_version: Literal[1]
    problem: ProblemFiles
    output_dir: str = "runs/latest"

    def run_config(self) -> RunConfig:
        data = self.model_dump(exclude={"config_version", "problem", "output_dir"})
        return RunConfig.model_validate(data)


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data: dict, where: str = "<config>") -> ConfigFile:
    try:
        cfg = ConfigFile.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{where}: {_format_validation(exc)}") from None
    if cfg.mode is Kind.SOLUTION and cfg.problem.instance is None:
        raise ConfigError(f"{where}: solution mode needs problem.instance")
    if cfg.mode is Kind.HEURISTIC and cfg.problem.training is None:
        raise ConfigError(f"{where}: heuristic mode needs problem.training")
    if cfg.fitness.weights is not None and cfg.problem.training is not None:
        if len(cfg.fitness.weights) != len(cfg.problem.training):
            raise ConfigError(f"{where}: fitness.weights must match the number of training instances")
    return cfg


def load_config(path) -> ConfigFile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data, str(path))


def validate_run_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None
