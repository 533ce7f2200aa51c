"""Solution and aggregated heuristic fitness, the progressive-tightening
penalty schedule, and a digest-keyed cache."""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass
from typing import Sequence

from . import hdsl
from .core import Candidate, FitnessValue, Kind
from .problems import (
    InvalidPermutation,
    TrainingSet,
    TspInstance,
    bpp_lower_bound,
    bpp_pack,
    excess_ratio,
    tsp_tour_length,
)


class EmptyInput(ValueError):
    pass


class WeightMismatch(ValueError):
    pass


class AggregatorKind(str, enum.Enum):
    MEAN = "mean"
    WEIGHTED_SUM = "weighted_sum"


@dataclass(frozen=True)
class Aggregator:
    kind: AggregatorKind = AggregatorKind.MEAN
    weights: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AggregatorKind(self.kind))
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.kind is AggregatorKind.WEIGHTED_SUM and self.weights is None:
            raise WeightMismatch("weighted_sum needs weights")


MEAN = Aggregator()


def aggregate(values: Sequence[float], agg: Aggregator = MEAN) -> float:
    if not values:
        raise EmptyInput("cannot aggregate an empty list")
    if agg.kind is AggregatorKind.MEAN:
        return math.fsum(values) / len(values)
    if len(agg.weights) != len(values):
        raise WeightMismatch(f"{len(agg.weights)} weights for {len(values)} values")
    return math.fsum(w * v for w, v in zip(agg.weights, values))


@dataclass(frozen=True)
class AdaptiveSchedule:
    """Penalty weight ``lambda_max * min(1, (t / ramp_generations) ** exponent)``."""

    lambda_max: float = 0.0
    ramp_generations: int = 1
    exponent: float = 1.0
    size_budget: int = 25

    def __post_init__(self):
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be >= 0")
        if self.ramp_generations < 1:
            raise ValueError("ramp_generations must be >= 1")
        if self.exponent < 1:
            raise ValueError("exponent must be >= 1")
        if self.size_budget < 1:
            raise ValueError("size_budget must be >= 1")


def adaptive_weight(t: int, sched: AdaptiveSchedule | None) -> float:
    if sched is None or t <= 0:
        return 0.0
    return sched.lambda_max * min(1.0, (t / sched.ramp_generations) ** sched.exponent)


def schedule_epoch(t: int, sched: AdaptiveSchedule | None) -> int:
    """Cache epoch: the weight stops changing once the ramp is complete."""
    if sched is None or sched.lambda_max == 0:
        return 0
    return max(0, min(t, sched.ramp_generations))


def eval_solution(inst: TspInstance, cand: Candidate) -> FitnessValue:
    if cand.kind is not Kind.SOLUTION:
        raise TypeError("eval_solution needs a solution candidate")
    try:
        length = tsp_tour_length(inst, cand.payload)
    except InvalidPermutation as exc:
        return FitnessValue.infeasible(str(exc))
    return FitnessValue(length, {"length": length}, True)


def heuristic_base(expr: hdsl.Expr, train: TrainingSet, agg: Aggregator = MEAN) -> FitnessValue:
    """Aggregated per-instance excess ratio, before any size penalty."""
    size = hdsl.complexity(expr)
    scores = []
    for i, inst in enumerate(train.instances):
        try:
            bins = len(bpp_pack(inst, expr))
        except hdsl.DslError as exc:
            return FitnessValue.infeasible(
                f"instance {i} ({inst.name}): {exc}", failed_instance=i, complexity=size
            )
        scores.append(excess_ratio(bins, bpp_lower_bound(inst)))
    base = aggregate(scores, agg)
    components = {"base": base, "penalty": 0.0, "complexity": size}
    components.update({f"score[{i}]": s for i, s in enumerate(scores)})
    return FitnessValue(base, components, True)


def apply_penalty(base: FitnessValue, t: int, sched: AdaptiveSchedule | None) -> FitnessValue:
    if not base.feasible:
        return base
    size = base.components["complexity"]
    excess = 0.0 if sched is None else max(0, size - sched.size_budget) / sched.size_budget
    penalty = adaptive_weight(t, sched) * excess
    components = dict(base.components, penalty=penalty)
    return FitnessValue(base.components["base"] + penalty, components, True)


def eval_heuristic(cand: Candidate, train: TrainingSet, agg: Aggregator = MEAN, t: int = 0,
                   sched: AdaptiveSchedule | None = None) -> FitnessValue:
    if cand.kind is not Kind.HEURISTIC:
        raise TypeError("eval_heuristic needs a heuristic candidate")
    return apply_penalty(heuristic_base(cand.payload, train, agg), t, sched)


class FitnessCache:
    """Maps ``(candidate digest, problem digest, epoch)`` to a FitnessValue."""

    def __init__(self):
        self._data: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key) -> FitnessValue | None:
        with self._lock:
            value = self._data.get(key)
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
            return value

    def put(self, key, value: FitnessValue) -> None:
        with self._lock:
            self._data[key] = value

    def __len__(self):
        return len(self._data)
