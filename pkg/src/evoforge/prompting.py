"""Variation and reflective prompt assembly, and response parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import hdsl
from .core import Kind
from .problems import (
    BPP_VARS,
    InvalidPermutation,
    TourPermutation,
    TrainingSet,
    TspInstance,
    tsp_validate,
)

PROMPT_FORMAT_VERSION = 1

SOLUTION_CONTRACT_MARK = "comma-separated list of city indices"
HEURISTIC_CONTRACT_MARK = "one scoring expression"


class NoCandidates(ValueError):
    pass


class NoInstruction(ValueError):
    pass


def format_cost(cost: float) -> str:
    return f"{cost:.6g}"


def output_contract(kind: Kind, offspring: int) -> str:
    noun = "candidate" if offspring == 1 else "candidates"
    if Kind(kind) is Kind.SOLUTION:
        return (
            f"Return {offspring} new {noun}. Write each tour inside <candidate></candidate> tags "
            f"as a {SOLUTION_CONTRACT_MARK}, every city exactly once, "
            "for example <candidate>0,1,2</candidate>. Do not repeat the starting city."
        )
    return (
        f"Return {offspring} new {noun}. Write {HEURISTIC_CONTRACT_MARK} inside each "
        "<candidate></candidate> pair using only the listed variables, operators and functions. "
        "You may follow a candidate with a short <description></description> of its idea."
    )


def describe_tsp(inst: TspInstance) -> str:
    lines = [
        f"Travelling salesman problem with {inst.n} cities. Find the shortest closed tour "
        "that visits every city exactly once and returns to the first city. "
        "Distances are Euclidean.",
        "City coordinates (index: x, y):",
    ]
    lines += [f"{i}: {x:.6g}, {y:.6g}" for i, (x, y) in enumerate(inst.points)]
    return "\n".join(lines)


def describe_bpp(train: TrainingSet, max_size: int = hdsl.DEFAULT_MAX_SIZE,
                 size_budget: int | None = None) -> str:
    lines = [
        "Online bin packing. Items arrive one at a time and must be placed immediately. "
        "For every open bin with enough room, a scoring expression is evaluated; the item "
        "goes into the bin with the highest score (lowest index on ties). A new bin is "
        "opened only when no open bin can hold the item.",
        f"Variables: {', '.join(BPP_VARS)}",
        "cap is the remaining capacity of the bin, item is the item size, index is the "
        "0-based bin index and n_bins is the number of open bins.",
        "Operators: + - * / and unary minus. Functions: "
        + ", ".join(f"{fn}/{ar}" for fn, ar in sorted(hdsl.FUNCTIONS.items()))
        + ". Comparisons return 1 or 0; if(c, a, b) picks a when c is non-zero.",
        f"Maximum expression size: {max_size} nodes",
        f"Cost is the mean excess ratio (bins - lower bound) / lower bound over "
        f"{len(train.instances)} training instances; lower is better.",
    ]
    if size_budget is not None:
        lines.append(
            f"Expressions larger than {size_budget} nodes receive a size penalty that "
            "grows as the search progresses."
        )
    return "\n".join(lines)


DEFAULT_INSTRUCTIONS = {
    (Kind.SOLUTION, "exploration"): (
        "Give a tour that is shorter than all of the tours above. You may combine "
        "segments from different tours or try a different ordering."
    ),
    (Kind.SOLUTION, "modification"): (
        "Make a small change to the best tour above, such as reversing a segment or "
        "swapping two cities, so that the new tour is shorter."
    ),
    (Kind.HEURISTIC, "exploration"): (
        "Design a new scoring expression that differs in form from the ones above and "
        "reaches a lower cost."
    ),
    (Kind.HEURISTIC, "modification"): (
        "Modify the best expression above with a small change, such as adjusting a "
        "constant or replacing a term, to lower its cost."
    ),
}


@dataclass(frozen=True)
class Example:
    payload: str
    cost: float
    description: str = ""
    knowledge_tags: tuple = ()

    def render(self) -> str:
        line = f"{self.payload} cost={format_cost(self.cost)}"
        if self.description:
            line += f" | description: {' '.join(self.description.split())}"
        if self.knowledge_tags:
            line += f" | knowledge: {', '.join(self.knowledge_tags)}"
        return line


@dataclass(frozen=True)
class VariationPromptSpec:
    problem_description: str
    task_instruction: str
    examples: tuple
    output_contract: str
    offspring_requested: int = 1
    max_examples: int = 5

    def __post_init__(self):
        ex = tuple(sorted(self.examples, key=lambda e: -e.cost))  # worst first
        object.__setattr__(self, "examples", ex)
        if not 1 <= len(ex) <= self.max_examples:
            raise ValueError(f"need 1..{self.max_examples} examples, got {len(ex)}")
        if not self.task_instruction.strip():
            raise ValueError("task instruction must be non-empty")


def _clean(text: str) -> str:
    return "\n".join(line.rstrip() for line in text.strip().splitlines())


def render_variation_prompt(spec: VariationPromptSpec) -> str:
    parts = [
        "## Problem",
        _clean(spec.problem_description),
        "",
        "## Examples",
        *(e.render() for e in spec.examples),
        "",
        "## Task",
        _clean(spec.task_instruction),
        "",
        "## Output format",
        _clean(spec.output_contract),
    ]
    return "\n".join(parts) + "\n"


@dataclass(frozen=True)
class OffspringNote:
    payload: str
    cost: float
    parent_cost: float

    def render(self) -> str:
        delta = self.cost - self.parent_cost
        return (f"{self.payload} cost={format_cost(self.cost)} "
                f"parent_cost={format_cost(self.parent_cost)} delta={format_cost(delta)}")


REFLECTIVE_DIRECTIVE = (
    "Compare the recent offspring with their parents and look at how the best cost has "
    "moved across generations. Rewrite the task instruction so that the next offspring "
    "improve faster. Return only the revised instruction inside <instruction></instruction> tags."
)


@dataclass(frozen=True)
class ReflectivePromptSpec:
    current_instruction: str
    short_term: tuple
    long_term: tuple  # best-so-far cost for generations 1..t
    directive: str = REFLECTIVE_DIRECTIVE


def render_reflective_prompt(spec: ReflectivePromptSpec) -> str:
    recent = [o.render() for o in spec.short_term] or ["(no offspring this generation)"]
    trajectory = [f"generation {g}: best={format_cost(c)}" for g, c in enumerate(spec.long_term, 1)]
    parts = [
        "## Current instruction",
        _clean(spec.current_instruction),
        "",
        "## Recent offspring",
        *recent,
        "",
        "## Best-so-far trajectory",
        *trajectory,
        "",
        "## Directive",
        _clean(spec.directive),
    ]
    return "\n".join(parts) + "\n"


def section(prompt: str, title: str) -> str | None:
    """Body of a ``## title`` section, or None when absent."""
    m = re.search(rf"^## {re.escape(title)}\n(.*?)(?=^## |\Z)", prompt, re.S | re.M)
    return None if m is None else m.group(1).strip("\n")


# --- response parsing --------------------------------------------------------

_CANDIDATE_RE = re.compile(
    r"<candidate>(.*?)</candidate>(?:\s*<description>(.*?)</description>)?", re.S
)
_INSTRUCTION_RE = re.compile(r"<instruction>(.*?)</instruction>", re.S)


@dataclass(frozen=True)
class ParsedCandidate:
    payload: object
    description: str = ""
    surplus: bool = False


def parse_tour(text: str, n: int) -> TourPermutation:
    try:
        order = [int(tok) for tok in text.replace(" ", "").strip(",[]").split(",")]
    except ValueError:
        raise InvalidPermutation("type", f"not a comma-separated integer list: {text!r}") from None
    tsp_validate(order, n)
    return TourPermutation(order)


def parse_candidates(response: str, kind: Kind, expected_n: int, *, n_cities: int | None = None,
                     max_size: int = hdsl.DEFAULT_MAX_SIZE,
                     diagnostics: list | None = None) -> list[ParsedCandidate]:
    """Extract every ``<candidate>`` block; malformed blocks are skipped.

    Skipped blocks are reported through ``diagnostics`` when a list is given.
    Candidates beyond ``expected_n`` are kept with ``surplus=True``.
    """
    kind = Kind(kind)
    if kind is Kind.SOLUTION and n_cities is None:
        raise ValueError("n_cities is required for solution candidates")
    out = []
    for block, m in enumerate(_CANDIDATE_RE.finditer(response)):
        text = m.group(1).strip()
        try:
            if kind is Kind.SOLUTION:
                payload = parse_tour(text, n_cities)
            else:
                payload = hdsl.parse(text)
                size = hdsl.complexity(payload)
                if size > max_size:
                    raise ValueError(f"expression has {size} nodes, limit {max_size}")
        except (ValueError, hdsl.DslError) as exc:
            if diagnostics is not None:
                diagnostics.append(f"block {block}: {exc}")
            continue
        desc = (m.group(2) or "").strip()
        out.append(ParsedCandidate(payload, desc, surplus=len(out) >= expected_n))
    if not out:
        raise NoCandidates("no parseable <candidate> block in response")
    return out


def parse_instruction(response: str) -> str:
    m = _INSTRUCTION_RE.search(response)
    if m is None or not m.group(1).strip():
        raise NoInstruction("no non-empty <instruction> block in response")
    return m.group(1).strip()
