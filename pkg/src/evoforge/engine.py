"""The evolutionary loop: initialize, evaluate, select, vary through a
language-model backend, keep the best, and optionally rewrite the variation
instructions by reflection."""

from __future__ import annotations

import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import hdsl
from .config import DEFAULT_TEMPERATURE, RunConfig, StrategySpec
from .core import (
    Candidate,
    FitnessValue,
    Kind,
    Population,
    Provenance,
    RecordKind,
    RunLog,
    candidate_to_json,
    cost_to_json,
    rank_key,
    render_payload,
)
from .fitness import (
    AdaptiveSchedule,
    Aggregator,
    FitnessCache,
    apply_penalty,
    eval_solution,
    heuristic_base,
    schedule_epoch,
)
from .llmio import BackendError, CompletionRequest, Role
from .problems import (
    BPP_VARS,
    TourPermutation,
    TrainingSet,
    TspInstance,
    digest64,
    instance_from_json,
    instance_to_json,
    tsp_nearest_neighbor,
)
from .prompting import (
    DEFAULT_INSTRUCTIONS,
    PROMPT_FORMAT_VERSION,
    Example,
    NoCandidates,
    NoInstruction,
    OffspringNote,
    ReflectivePromptSpec,
    VariationPromptSpec,
    describe_bpp,
    describe_tsp,
    output_contract,
    parse_candidates,
    parse_instruction,
    render_reflective_prompt,
    render_variation_prompt,
)

log = logging.getLogger(__name__)

SEED_HEURISTICS = ("-index", "cap - item", "-(cap - item)")

VARIATION_SYSTEM = "You are an optimization assistant acting as a variation operator in an evolutionary search."
REFLECTIVE_SYSTEM = "You are an optimization assistant that improves the instructions given to a variation operator."


# --- problem adapters ----------------------------------------------------------


class TspTask:
    kind = Kind.SOLUTION
    schedule = None

    def __init__(self, instance: TspInstance):
        self.instance = instance
        self.digest = instance.digest

    def describe(self) -> str:
        return describe_tsp(self.instance)

    def initial_payloads(self, rng: random.Random, n: int, max_size: int) -> list:
        out = [tsp_nearest_neighbor(self.instance, 0)]
        while len(out) < n:
            out.append(TourPermutation(rng.sample(range(self.instance.n), self.instance.n)))
        return out

    def base_fitness(self, cand: Candidate) -> FitnessValue:
        return eval_solution(self.instance, cand)

    def finish(self, base: FitnessValue, t: int) -> FitnessValue:
        return base

    def parse_kwargs(self) -> dict:
        return {"n_cities": self.instance.n}

    def to_json(self) -> dict:
        return {"kind": "tsp", "instance": instance_to_json(self.instance)}


class BinPackingTask:
    kind = Kind.HEURISTIC

    def __init__(self, train: TrainingSet, agg: Aggregator | None = None,
                 schedule: AdaptiveSchedule | None = None, max_size: int = hdsl.DEFAULT_MAX_SIZE):
        self.train = train
        self.agg = agg or Aggregator()
        self.schedule = schedule
        self.max_size = max_size
        self.digest = digest64(f"{train.digest}\n{self.agg.kind.value}\n{self.agg.weights}")

    def describe(self) -> str:
        budget = self.schedule.size_budget if self.schedule and self.schedule.lambda_max > 0 else None
        return describe_bpp(self.train, self.max_size, budget)

    def initial_payloads(self, rng: random.Random, n: int, max_size: int) -> list:
        out = [hdsl.parse(s) for s in SEED_HEURISTICS[:n]]
        while len(out) < n:
            e = hdsl.random_expr(rng, BPP_VARS, depth=3)
            if hdsl.complexity(e) <= max_size:
                out.append(e)
        return out

    def base_fitness(self, cand: Candidate) -> FitnessValue:
        return heuristic_base(cand.payload, self.train, self.agg)

    def finish(self, base: FitnessValue, t: int) -> FitnessValue:
        return apply_penalty(base, t, self.schedule)

    def parse_kwargs(self) -> dict:
        return {"max_size": self.max_size}

    def to_json(self) -> dict:
        return {
            "kind": "bpp",
            "training": [instance_to_json(i) for i in self.train.instances],
            "weights": None if self.train.weights is None else list(self.train.weights),
        }


def task_from_json(data: dict, cfg: RunConfig):
    if data["kind"] == "tsp":
        return TspTask(instance_from_json(data["instance"], "problem.instance"))
    train = TrainingSet(
        tuple(instance_from_json(d, f"problem.training[{i}]") for i, d in enumerate(data["training"])),
        data.get("weights"),
    )
    return make_bpp_task(train, cfg)


def make_bpp_task(train: TrainingSet, cfg: RunConfig) -> BinPackingTask:
    adaptive = cfg.fitness.adaptive
    return BinPackingTask(
        train,
        cfg.fitness.aggregator_obj(),
        adaptive.schedule() if adaptive is not None else None,
        cfg.max_expr_size,
    )


class Evaluator:
    """Cached fitness with an evaluation budget.

    Base objectives are cached per (candidate, problem); adaptive costs per
    (candidate, problem, schedule epoch).  Only base computations count
    against the budget.
    """

    def __init__(self, task, max_evaluations: int | None = None, cache: FitnessCache | None = None):
        self.task = task
        self.cache = cache if cache is not None else FitnessCache()
        self.max_evaluations = max_evaluations
        self.evaluations = 0

    def exhausted(self) -> bool:
        return self.max_evaluations is not None and self.evaluations >= self.max_evaluations

    def evaluate(self, cand: Candidate, t: int) -> FitnessValue | None:
        """Fitness at generation ``t``, or None when the budget forbids computing it."""
        digest = cand.digest
        key = (digest, self.task.digest, schedule_epoch(t, self.task.schedule))
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        base_key = (digest, self.task.digest, "base")
        base = self.cache.get(base_key)
        if base is None:
            if self.exhausted():
                return None
            base = self.task.base_fitness(cand)
            self.evaluations += 1
            self.cache.put(base_key, base)
        value = self.task.finish(base, t)
        self.cache.put(key, value)
        return value


# --- pure operators --------------------------------------------------------------


def tournament(members, k: int, rng: random.Random) -> Candidate:
    draws = [members[rng.randrange(len(members))] for _ in range(k)]
    return min(draws, key=lambda c: (c.cost, c.id))


def select_parents(pop: Population, tournament_size: int, groups: int, group_size: int,
                   rng: random.Random) -> list[list[Candidate]]:
    """``groups`` parent groups of ``group_size``, each slot won by a tournament.

    Members of a group are distinct whenever the population has enough
    distinct candidates.
    """
    if not pop.evaluated:
        raise ValueError("selection needs an evaluated population")
    members = list(pop.members)
    distinct = len({c.id for c in members}) >= group_size
    ranked = sorted(members, key=rank_key)
    out = []
    for _ in range(groups):
        group, ids = [], set()
        for _ in range(group_size):
            for _ in range(32):
                w = tournament(members, tournament_size, rng)
                if not distinct or w.id not in ids:
                    break
            else:
                w = next(c for c in ranked if c.id not in ids)
            group.append(w)
            ids.add(w.id)
        out.append(group)
    return out


def survivor_select(parents, offspring, n: int) -> list[Candidate]:
    """(mu + lambda) truncation on (cost, generation, id)."""
    return sorted(list(parents) + list(offspring), key=rank_key)[:n]


# --- the run ---------------------------------------------------------------------


@dataclass
class RunState:
    population: Population
    best_so_far: Candidate
    rng: random.Random
    instructions: dict
    history: list = field(default_factory=list)  # best-so-far cost per generation
    backend_calls: int = 0
    calls_exhausted: bool = False
    evals_exhausted: bool = False

    @property
    def generation(self) -> int:
        return self.population.generation


@dataclass
class RunResult:
    best: Candidate
    log: RunLog
    generations_run: int
    backend_calls: int
    evaluations: int
    state: RunState

    @property
    def best_cost(self) -> float:
        return self.best.cost

    def to_json(self) -> dict:
        return {
            "best_cost": cost_to_json(self.best.cost),
            "best_candidate": candidate_to_json(self.best),
            "generations_run": self.generations_run,
            "backend_calls": self.backend_calls,
            "evaluations": self.evaluations,
        }


@dataclass
class _Job:
    cid: str
    strategy: StrategySpec
    parents: list
    request: CompletionRequest
    response: str | None = None
    error: str | None = None


class Engine:
    def __init__(self, config: RunConfig, task, backends: dict, log: RunLog | None = None):
        if config.mode is not task.kind:
            raise ValueError(f"config mode {config.mode.value} does not match the problem")
        self.cfg = config
        self.task = task
        self.backends = {Role(r): b for r, b in backends.items()}
        self.log = log if log is not None else RunLog()
        self.evaluator = Evaluator(task, config.budget.max_evaluations)
        self._next_id = 1

    # helpers

    def _new_id(self) -> int:
        i = self._next_id
        self._next_id += 1
        return i

    def _calls_left(self, state: RunState) -> bool:
        cap = self.cfg.budget.max_backend_calls
        return cap is None or state.backend_calls < cap

    def _instruction(self, s: StrategySpec) -> str:
        return s.task_instruction or DEFAULT_INSTRUCTIONS[(self.cfg.mode, s.family.value)]

    def _request(self, role: Role, text: str, cid: str) -> CompletionRequest:
        b = self.cfg.backends.binding(role)
        temp = b.temperature if b.temperature is not None else DEFAULT_TEMPERATURE[role]
        system = VARIATION_SYSTEM if role is Role.VARIATION else REFLECTIVE_SYSTEM
        return CompletionRequest((("system", system), ("user", text)), temp, b.max_tokens, cid)

    def _call_all(self, role: Role, jobs: list) -> None:
        backend = self.backends[role]

        def call(job):
            try:
                job.response = backend.complete(job.request)
            except BackendError as exc:
                job.error = f"{type(exc).__name__}: {exc}"
            return job

        workers = self.cfg.backends.max_inflight
        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(call, jobs))
        else:
            for job in jobs:
                call(job)

    def _log_exchange(self, role: Role, t: int, jobs: list) -> None:
        for job in sorted(jobs, key=lambda j: j.cid):
            self.log.append(RecordKind.PROMPT, t, {
                "correlation_id": job.cid,
                "role": role.value,
                "strategy": job.strategy.label,
                "messages": [{"role": r, "content": c} for r, c in job.request.messages],
            })
            body = {"correlation_id": job.cid, "role": role.value, "text": job.response}
            if job.error is not None:
                body["error"] = job.error
            self.log.append(RecordKind.RESPONSE, t, body)

    def _evaluate(self, cand: Candidate, t: int) -> Candidate | None:
        value = self.evaluator.evaluate(cand, t)
        return None if value is None else cand.with_fitness(value)

    def _log_generation(self, state: RunState, offspring: list, diagnostics: list) -> None:
        pop = state.population
        self.log.append(RecordKind.GENERATION, pop.generation, {
            "population": [candidate_to_json(c) for c in pop.members],
            "population_digest": pop.digest,
            "offspring": [c.id for c in offspring],
            "offspring_digest": digest64("\n".join(c.digest for c in offspring)),
            "diagnostics": diagnostics,
            "best_cost": cost_to_json(pop.best().cost),
            "best_so_far": cost_to_json(state.best_so_far.cost),
            "backend_calls": state.backend_calls,
            "evaluations": self.evaluator.evaluations,
        })

    # Algorithm steps

    def initialize(self, rng: random.Random) -> Population:
        payloads = self.task.initial_payloads(rng, self.cfg.population_size, self.cfg.max_expr_size)
        members = []
        for p in payloads:
            c = Candidate(self._new_id(), self.task.kind, p, Provenance(1))
            members.append(self._evaluate(c, 0) or c)
        return Population(1, members)

    def variation_step(self, groups: list, state: RunState, t: int) -> tuple[list, list]:
        """One prompt per (group, strategy); returns (offspring, diagnostics)."""
        jobs = []
        for gi, group in enumerate(groups):
            ranked = sorted(group, key=rank_key)
            for s in self.cfg.strategies:
                if not self._calls_left(state):
                    state.calls_exhausted = True
                    break
                parents = ranked[: s.examples]
                spec = VariationPromptSpec(
                    problem_description=self.task.describe(),
                    task_instruction=state.instructions[s.label],
                    examples=tuple(Example(render_payload(c.payload), c.cost, c.description,
                                           c.knowledge_tags) for c in parents),
                    output_contract=output_contract(self.task.kind, s.offspring_requested),
                    offspring_requested=s.offspring_requested,
                    max_examples=s.examples,
                )
                cid = f"g{t:05d}-v{gi:03d}-{s.label}"
                req = self._request(Role.VARIATION, render_variation_prompt(spec), cid)
                jobs.append(_Job(cid, s, parents, req))
                state.backend_calls += 1

        self._call_all(Role.VARIATION, jobs)
        self._log_exchange(Role.VARIATION, t, jobs)

        offspring, diagnostics = [], []
        for job in jobs:
            if job.error is not None:
                diagnostics.append(f"{job.cid}: {job.error}")
                continue
            notes = []
            try:
                parsed = parse_candidates(job.response, self.task.kind, job.strategy.offspring_requested,
                                          diagnostics=notes, **self.task.parse_kwargs())
            except NoCandidates as exc:
                parsed = []
                notes.append(str(exc))
            diagnostics.extend(f"{job.cid}: {n}" for n in notes)
            for pc in parsed:
                offspring.append(Candidate(
                    self._new_id(), self.task.kind, pc.payload,
                    Provenance(t + 1, tuple(p.id for p in job.parents), job.strategy.label),
                    description=pc.description,
                ))
        for d in diagnostics:
            log.info("generation %d: %s", t, d)
        return offspring, diagnostics

    def reflect(self, state: RunState, t: int, offspring: list, parent_costs: dict) -> None:
        jobs = []
        for s in self.cfg.strategies:
            if not self._calls_left(state):
                state.calls_exhausted = True
                break
            notes = tuple(
                OffspringNote(render_payload(c.payload), c.cost,
                              min(parent_costs[p] for p in c.provenance.parent_ids))
                for c in offspring if c.provenance.operator_label == s.label
            )
            spec = ReflectivePromptSpec(state.instructions[s.label], notes, tuple(state.history))
            cid = f"g{t:05d}-r-{s.label}"
            jobs.append(_Job(cid, s, [], self._request(Role.REFLECTIVE, render_reflective_prompt(spec), cid)))
            state.backend_calls += 1

        self._call_all(Role.REFLECTIVE, jobs)
        self._log_exchange(Role.REFLECTIVE, t, jobs)

        for job in jobs:
            old = state.instructions[job.strategy.label]
            body = {"strategy": job.strategy.label, "correlation_id": job.cid, "old": old}
            if job.error is not None:
                body.update(new=None, status="unchanged", warning=job.error)
            else:
                try:
                    new = parse_instruction(job.response)
                except NoInstruction as exc:
                    body.update(new=None, status="unchanged", warning=str(exc))
                    log.warning("reflection for %s left instruction unchanged: %s", job.strategy.label, exc)
                else:
                    state.instructions[job.strategy.label] = new
                    body.update(new=new, status="replaced")
            self.log.append(RecordKind.REFLECTION, t, body)

    def run(self) -> RunResult:
        cfg = self.cfg
        self.log.append(RecordKind.META, 0, {
            "prompt_format_version": PROMPT_FORMAT_VERSION,
            "config": cfg.model_dump(mode="json"),
            "problem": self.task.to_json(),
        })
        rng = random.Random(cfg.seed)
        pop = self.initialize(rng)
        state = RunState(
            population=pop,
            best_so_far=pop.best(),
            rng=rng,
            instructions={s.label: self._instruction(s) for s in cfg.strategies},
        )
        state.history.append(state.best_so_far.cost)
        state.evals_exhausted = self.evaluator.exhausted()
        self._log_generation(state, [], [])

        generations_run = 0
        for t in range(1, cfg.generations + 1):
            if state.calls_exhausted or state.evals_exhausted or not self._calls_left(state):
                break
            sel = cfg.selection
            groups = select_parents(state.population, sel.tournament_size, sel.groups_per_generation,
                                    sel.group_size, rng)
            offspring, diagnostics = self.variation_step(groups, state, t)

            parents = [self._evaluate(c, t) for c in state.population.members]
            evaluated = []
            for c in offspring:
                ec = self._evaluate(c, t)
                if ec is None:
                    state.evals_exhausted = True
                    diagnostics.append(f"offspring {c.id} dropped: evaluation budget exhausted")
                    continue
                evaluated.append(ec)

            survivors = survivor_select(parents, evaluated, cfg.population_size)
            state.population = Population(t + 1, survivors)
            best = state.population.best()
            if rank_key(best)[:1] < rank_key(state.best_so_far)[:1]:
                state.best_so_far = best
            state.history.append(state.best_so_far.cost)
            self._log_generation(state, evaluated, diagnostics)
            generations_run = t

            if cfg.reflection.enabled and t % cfg.reflection.cadence == 0:
                parent_costs = {c.id: c.cost for c in parents}
                self.reflect(state, t, evaluated, parent_costs)

            if cfg.target_cost is not None and state.best_so_far.cost <= cfg.target_cost:
                break

        result = RunResult(state.best_so_far, self.log, generations_run, state.backend_calls,
                           self.evaluator.evaluations, state)
        self.log.append(RecordKind.RESULT, state.generation, result.to_json())
        return result


def run(config: RunConfig, task, backends: dict, log: RunLog | None = None) -> RunResult:
    return Engine(config, task, backends, log).run()
