"""Demo problem domains: Euclidean TSP (solution search) and online bin packing
(heuristic search), with baselines, brute-force oracles, generators and JSON I/O."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import random
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence, Union

from . import hdsl

BPP_VARS = ("cap", "item", "index", "n_bins")
BRUTE_FORCE_MAX = 10


def digest64(text: str) -> str:
    """16 hex chars of BLAKE2b; stable across platforms and runs."""
    return hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest()


def _real(x: float) -> str:
    return repr(float(x))


class InvalidPermutation(ValueError):
    def __init__(self, reason: str, message: str):
        super().__init__(message)
        self.reason = reason  # "length" | "range" | "duplicate" | "type"


class TooLarge(ValueError):
    pass


class InstanceFormatError(ValueError):
    pass


# --- TSP ---------------------------------------------------------------------


@dataclass(frozen=True)
class TourPermutation:
    order: tuple

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(self.order))

    def __len__(self):
        return len(self.order)

    def __str__(self):
        return ",".join(str(i) for i in self.order)


@dataclass(frozen=True)
class TspInstance:
    points: tuple
    name: str = "tsp"

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) < 3:
            raise ValueError("a TSP instance needs at least 3 points")
        if not all(math.isfinite(c) for p in pts for c in p):
            raise ValueError("TSP coordinates must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return len(self.points)

    @cached_property
    def digest(self) -> str:
        body = "\n".join(f"{_real(x)} {_real(y)}" for x, y in self.points)
        return digest64("tsp\n" + body)

    @cached_property
    def dist(self) -> tuple:
        return tuple(tuple(math.dist(p, q) for q in self.points) for p in self.points)


def tsp_validate(order: Sequence[int], n: int) -> None:
    """Raise InvalidPermutation describing the first violation, if any."""
    if len(order) != n:
        raise InvalidPermutation("length", f"tour has {len(order)} cities, expected {n}")
    seen = set()
    for pos, c in enumerate(order):
        if isinstance(c, bool) or not isinstance(c, int):
            raise InvalidPermutation("type", f"position {pos}: {c!r} is not an integer")
        if not 0 <= c < n:
            raise InvalidPermutation("range", f"position {pos}: city {c} outside 0..{n - 1}")
        if c in seen:
            raise InvalidPermutation("duplicate", f"position {pos}: city {c} repeated")
        seen.add(c)


def _order(tour) -> tuple:
    return tuple(tour.order) if isinstance(tour, TourPermutation) else tuple(tour)


def tsp_tour_length(inst: TspInstance, tour) -> float:
    order = _order(tour)
    tsp_validate(order, inst.n)
    d = inst.dist
    return math.fsum(d[order[i - 1]][order[i]] for i in range(len(order)))


def tsp_nearest_neighbor(inst: TspInstance, start: int = 0) -> TourPermutation:
    if not 0 <= start < inst.n:
        raise ValueError(f"start {start} outside 0..{inst.n - 1}")
    d = inst.dist
    order = [start]
    unvisited = set(range(inst.n)) - {start}
    while unvisited:
        cur = order[-1]
        # min over (distance, index) gives lowest-index tie-break
        nxt = min(unvisited, key=lambda j: (d[cur][j], j))
        order.append(nxt)
        unvisited.remove(nxt)
    return TourPermutation(order)


def tsp_brute_force(inst: TspInstance) -> tuple[TourPermutation, float]:
    """Exhaustive optimum over the (n-1)!/2 distinct cyclic tours.

    The representative starts at city 0 and its second city is lower than its
    last; among equal-length tours the lexicographically first is returned.
    """
    n = inst.n
    if n > BRUTE_FORCE_MAX:
        raise TooLarge(f"brute force limited to {BRUTE_FORCE_MAX} cities, got {n}")
    d = inst.dist
    best, best_len = None, math.inf
    for rest in itertools.permutations(range(1, n)):
        if rest[0] > rest[-1]:
            continue
        length = d[0][rest[0]] + d[rest[-1]][0]
        for a, b in zip(rest, rest[1:]):
            length += d[a][b]
        if length < best_len:
            best, best_len = (0,) + rest, length
    tour = TourPermutation(best)
    return tour, tsp_tour_length(inst, tour)


def gen_tsp(seed: int, n: int, box=(0.0, 0.0, 1.0, 1.0)) -> TspInstance:
    x0, y0, x1, y1 = box
    if n < 3:
        raise ValueError("n must be at least 3")
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate box {box}")
    rng = random.Random(seed)
    pts = [(rng.uniform(x0, x1), rng.uniform(y0, y1)) for _ in range(n)]
    return TspInstance(tuple(pts), name=f"tsp-{seed}-{n}")


# --- bin packing -------------------------------------------------------------


@dataclass(frozen=True)
class BppInstance:
    capacity: float
    items: tuple
    name: str = "bpp"

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if not (math.isfinite(self.capacity) and self.capacity > 0):
            raise ValueError(f"capacity must be positive, got {self.capacity!r}")
        for i, s in enumerate(self.items):
            if not (math.isfinite(s) and s > 0):
                raise ValueError(f"item {i} must be positive, got {s!r}")
            if s > self.capacity:
                raise ValueError(f"item {i} ({s}) exceeds capacity {self.capacity}")

    @cached_property
    def digest(self) -> str:
        body = " ".join(_real(s) for s in self.items)
        return digest64(f"bpp\n{_real(self.capacity)}\n{body}")


@dataclass(frozen=True)
class TrainingSet:
    instances: tuple
    weights: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if not self.instances:
            raise ValueError("a training set needs at least one instance")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != len(self.instances):
                raise ValueError("weights must match the number of instances")
            if any(x <= 0 for x in w):
                raise ValueError("weights must be positive")
            total = math.fsum(w)
            object.__setattr__(self, "weights", tuple(x / total for x in w))

    @cached_property
    def digest(self) -> str:
        parts = [i.digest for i in self.instances]
        if self.weights is not None:
            parts.append(" ".join(_real(w) for w in self.weights))
        return digest64("train\n" + "\n".join(parts))


Packing = list  # list of bins, each a list of item sizes in packing order


def bpp_pack(inst: BppInstance, expr: hdsl.Expr) -> Packing:
    """Online packing driven by a bin-scoring expression.

    Each item is offered to every open bin with enough room; the bin with the
    highest score takes it (lowest index on ties).  A new bin opens only when
    no open bin fits.  DomainError/UnboundVariable from the expression abort
    the packing.
    """
    unknown = hdsl.variables(expr) - set(BPP_VARS)
    if unknown:
        raise hdsl.UnboundVariable(sorted(unknown)[0])
    score = hdsl.compile_expr(expr)
    bins: list[list] = []
    remaining: list = []
    for item in inst.items:
        best, best_score = -1, 0.0
        n_open = len(bins)
        for i, rem in enumerate(remaining):
            if rem < item:
                continue
            s = score({"cap": rem, "item": item, "index": i, "n_bins": n_open})
            if best < 0 or s > best_score:
                best, best_score = i, s
        if best < 0:
            bins.append([item])
            remaining.append(inst.capacity - item)
        else:
            bins[best].append(item)
            remaining[best] -= item
    return bins


def bpp_first_fit(inst: BppInstance) -> Packing:
    bins, loads = [], []
    for item in inst.items:
        for j in range(len(bins)):
            if loads[j] + item <= inst.capacity:
                bins[j].append(item)
                loads[j] += item
                break
        else:
            bins.append([item])
            loads.append(item)
    return bins


def bpp_best_fit(inst: BppInstance) -> Packing:
    bins, loads = [], []
    for item in inst.items:
        chosen, tightest = None, None
        for j in range(len(bins)):
            slack = inst.capacity - loads[j] - item
            if slack >= 0 and (tightest is None or slack < tightest):
                chosen, tightest = j, slack
        if chosen is None:
            bins.append([item])
            loads.append(item)
        else:
            bins[chosen].append(item)
            loads[chosen] += item
    return bins


def bpp_lower_bound(inst: BppInstance) -> int:
    return math.ceil(math.fsum(inst.items) / inst.capacity)


def excess_ratio(n_bins: int, lb: int) -> float:
    return (n_bins - lb) / lb


def gen_bpp(seed: int, n_items: int, capacity: float = 100, size_range=(10, 40)) -> BppInstance:
    """Uniform item sizes; integer bounds give integer sizes."""
    lo, hi = size_range
    if n_items < 1:
        raise ValueError("n_items must be at least 1")
    if not (0 < lo <= hi <= capacity):
        raise ValueError(f"size range {size_range} must satisfy 0 < lo <= hi <= capacity")
    rng = random.Random(seed)
    if all(isinstance(v, int) for v in (lo, hi)):
        items = [rng.randint(lo, hi) for _ in range(n_items)]
    else:
        items = [rng.uniform(lo, hi) for _ in range(n_items)]
    return BppInstance(capacity, tuple(items), name=f"bpp-{seed}-{n_items}")


# --- file I/O ----------------------------------------------------------------

Instance = Union[TspInstance, BppInstance]

_TSP_FIELDS = {"name", "points"}
_BPP_FIELDS = {"name", "capacity", "items"}


def instance_to_json(inst: Instance) -> dict:
    if isinstance(inst, TspInstance):
        return {"name": inst.name, "points": [list(p) for p in inst.points]}
    return {"name": inst.name, "capacity": inst.capacity, "items": list(inst.items)}


def instance_from_json(data, where: str = "<data>") -> Instance:
    if not isinstance(data, dict):
        raise InstanceFormatError(f"{where}: top-level value must be an object")
    kind = "tsp" if "points" in data else "bpp"
    allowed = _TSP_FIELDS if kind == "tsp" else _BPP_FIELDS
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise InstanceFormatError(f"{where}: unknown field {unknown[0]!r}")
    for key in sorted(allowed):
        if key not in data:
            raise InstanceFormatError(f"{where}: missing field {key!r}")
    if not isinstance(data["name"], str):
        raise InstanceFormatError(f"{where}: field 'name' must be a string")
    try:
        if kind == "tsp":
            pts = data["points"]
            for i, p in enumerate(pts):
                if not (isinstance(p, list) and len(p) == 2 and all(_is_num(c) for c in p)):
                    raise InstanceFormatError(f"{where}: field 'points'[{i}] must be [x, y]")
            return TspInstance(tuple(tuple(p) for p in pts), name=data["name"])
        if not _is_num(data["capacity"]):
            raise InstanceFormatError(f"{where}: field 'capacity' must be a number")
        items = data["items"]
        if not isinstance(items, list) or not items:
            raise InstanceFormatError(f"{where}: field 'items' must be a non-empty list")
        for i, s in enumerate(items):
            if not _is_num(s):
                raise InstanceFormatError(f"{where}: field 'items'[{i}] must be a number")
        return BppInstance(data["capacity"], tuple(items), name=data["name"])
    except InstanceFormatError:
        raise
    except ValueError as exc:
        raise InstanceFormatError(f"{where}: {exc}") from None


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def load_instance(path) -> Instance:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InstanceFormatError(f"{path}: cannot read instance file ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return instance_from_json(data, str(path))


def save_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_json(inst), indent=1) + "\n", encoding="utf-8")
