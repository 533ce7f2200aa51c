"""Shared domain types, canonical serialization and the run log."""

from __future__ import annotations

import enum
import json
import math
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Union

from . import hdsl
from .problems import TourPermutation, digest64

INFEASIBLE = math.inf


class Kind(str, enum.Enum):
    SOLUTION = "solution"
    HEURISTIC = "heuristic"


@dataclass(frozen=True)
class FitnessValue:
    """Lower cost is better; infeasible values carry ``cost = inf``."""

    cost: float
    components: dict = field(default_factory=dict)
    feasible: bool = True
    detail: str = ""

    def __post_init__(self):
        if not self.feasible and self.cost != INFEASIBLE:
            raise ValueError("an infeasible fitness must have infinite cost")

    @classmethod
    def infeasible(cls, detail: str = "", **components) -> "FitnessValue":
        return cls(INFEASIBLE, dict(components), False, detail)


@dataclass(frozen=True)
class Provenance:
    generation_created: int
    parent_ids: tuple = ()
    operator_label: str = "init"

    def __post_init__(self):
        if self.generation_created < 1:
            raise ValueError("generation_created must be >= 1")
        object.__setattr__(self, "parent_ids", tuple(self.parent_ids))


Payload = Union[TourPermutation, "hdsl.Expr"]


@dataclass(frozen=True)
class Candidate:
    id: int
    kind: Kind
    payload: Any
    provenance: Provenance
    description: str = ""
    knowledge_tags: tuple = ()
    fitness: FitnessValue | None = None

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "knowledge_tags", tuple(self.knowledge_tags))
        if kind is Kind.SOLUTION and not isinstance(self.payload, TourPermutation):
            raise TypeError("solution candidates need a TourPermutation payload")
        if kind is Kind.HEURISTIC and not isinstance(
            self.payload, (hdsl.Number, hdsl.Var, hdsl.Neg, hdsl.BinOp, hdsl.Call)
        ):
            raise TypeError("heuristic candidates need an expression payload")

    @property
    def cost(self) -> float:
        return INFEASIBLE if self.fitness is None else self.fitness.cost

    @property
    def representation(self) -> str:
        """'code-centric', 'hybrid' or 'augmented', from the attached metadata."""
        if self.knowledge_tags:
            return "augmented"
        return "hybrid" if self.description else "code-centric"

    @property
    def digest(self) -> str:
        return candidate_digest(self)

    def with_fitness(self, fitness: FitnessValue) -> "Candidate":
        return replace(self, fitness=fitness)


def render_payload(payload) -> str:
    if isinstance(payload, TourPermutation):
        return str(payload)
    return hdsl.to_text(payload)


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\n", "\\n").replace(",", "\\,")


def canonical_serialize(candidate: Candidate) -> bytes:
    """``kind\\npayload\\ndescription\\ntags``; ids, fitness and provenance are excluded."""
    tags = ",".join(sorted(_escape(t) for t in candidate.knowledge_tags))
    text = "\n".join(
        [candidate.kind.value, render_payload(candidate.payload), _escape(candidate.description), tags]
    )
    return text.encode("utf-8")


def candidate_digest(candidate: Candidate) -> str:
    return digest64(canonical_serialize(candidate).decode("utf-8"))


def rank_key(c: Candidate) -> tuple:
    """Total order used by survivor selection.

    Cost first; two infeasible candidates prefer lower complexity; then older
    generation, then lower id.
    """
    tie = 0
    if c.fitness is not None and not c.fitness.feasible:
        tie = c.fitness.components.get("complexity", 0)
    return (c.cost, tie, c.provenance.generation_created, c.id)


@dataclass(frozen=True)
class Population:
    generation: int
    members: tuple

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if self.generation < 1:
            raise ValueError("generation must be >= 1")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def evaluated(self) -> bool:
        return all(m.fitness is not None for m in self.members)

    @property
    def digest(self) -> str:
        return digest64("\n".join(m.digest for m in self.members))

    def best(self) -> Candidate:
        return min(self.members, key=rank_key)


def cost_to_json(cost: float):
    return None if math.isinf(cost) else cost


def cost_from_json(value) -> float:
    return INFEASIBLE if value is None else float(value)


def candidate_to_json(c: Candidate) -> dict:
    return {
        "id": c.id,
        "kind": c.kind.value,
        "payload": render_payload(c.payload),
        "description": c.description,
        "knowledge_tags": list(c.knowledge_tags),
        "digest": c.digest,
        "cost": cost_to_json(c.cost),
        "feasible": None if c.fitness is None else c.fitness.feasible,
        "provenance": {
            "generation_created": c.provenance.generation_created,
            "parent_ids": list(c.provenance.parent_ids),
            "operator_label": c.provenance.operator_label,
        },
    }


# --- run log -----------------------------------------------------------------


class RecordKind(str, enum.Enum):
    META = "meta"
    GENERATION = "generation"
    PROMPT = "prompt"
    RESPONSE = "response"
    REFLECTION = "reflection"
    RESULT = "result"


@dataclass(frozen=True)
class RunLogRecord:
    seq: int
    kind: RecordKind
    generation: int
    body: dict
    time: float = 0.0

    def to_json(self, with_time: bool = True) -> dict:
        out = {"seq": self.seq, "kind": self.kind.value, "generation": self.generation}
        if with_time:
            out["time"] = self.time
        out["body"] = self.body
        return out

    @classmethod
    def from_json(cls, data: dict) -> "RunLogRecord":
        return cls(
            seq=int(data["seq"]),
            kind=RecordKind(data["kind"]),
            generation=int(data["generation"]),
            body=dict(data["body"]),
            time=float(data.get("time", 0.0)),
        )


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


class RunLog:
    """Append-only JSONL record of a run.

    Records are kept in memory and, when ``path`` is given, written to disk;
    the file is flushed at every generation record.
    """

    def __init__(self, path: str | Path | None = None):
        self.records: list[RunLogRecord] = []
        self._lock = threading.Lock()
        self._fh = None
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", encoding="utf-8")

    def append(self, kind: RecordKind, generation: int, body: dict) -> RunLogRecord:
        with self._lock:
            rec = RunLogRecord(len(self.records), RecordKind(kind), generation, body, time.time())
            self.records.append(rec)
            if self._fh is not None:
                self._fh.write(_dumps(rec.to_json()) + "\n")
                if rec.kind in (RecordKind.GENERATION, RecordKind.RESULT, RecordKind.META):
                    self._fh.flush()
        return rec

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def of_kind(self, kind: RecordKind) -> list[RunLogRecord]:
        return [r for r in self.records if r.kind == kind]

    def digest(self) -> str:
        return log_digest(self.records)


def log_digest(records) -> str:
    """Digest over all records with timestamps excluded."""
    return digest64("\n".join(_dumps(r.to_json(with_time=False)) for r in records))


class MalformedLog(ValueError):
    pass


def read_log(path) -> list[RunLogRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(RunLogRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise MalformedLog(f"{path}: line {lineno}: {exc}") from None
    for prev, rec in zip(records, records[1:]):
        if rec.seq <= prev.seq:
            raise MalformedLog(f"{path}: sequence numbers not increasing at seq {rec.seq}")
    return records
