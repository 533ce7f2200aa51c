"""Command-line entry points: run, replay, bench, eval-expr, gen-instances."""

from __future__ import annotations

import argparse
import dataclasses
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import hdsl
from .config import BackendBinding, ConfigError, ConfigFile, RunConfig, load_config, validate_run_config
from .core import Kind, MalformedLog, RecordKind, RunLog, read_log, render_payload
from .engine import Engine, TspTask, make_bpp_task, task_from_json
from .fitness import aggregate
from .llmio import (
    BackendConfigError,
    BackendError,
    HttpBackend,
    HttpConfig,
    Role,
    ScriptedBackend,
    SyntheticBackend,
)
from .problems import (
    BppInstance,
    InstanceFormatError,
    TrainingSet,
    TspInstance,
    bpp_best_fit,
    bpp_first_fit,
    bpp_lower_bound,
    bpp_pack,
    digest64,
    excess_ratio,
    gen_bpp,
    gen_tsp,
    load_instance,
    save_instance,
)

log = logging.getLogger("evoforge")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_DIVERGED = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(f"evoforge: {msg}", file=sys.stderr)


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def make_backend(binding: BackendBinding, run_seed: int, base_dir: Path = Path("."), _scripts=None):
    if binding.kind == "synthetic":
        return SyntheticBackend(run_seed if binding.seed is None else binding.seed)
    if binding.kind == "scripted":
        path = _resolve(base_dir, binding.script)
        if _scripts is not None and path in _scripts:
            return _scripts[path]
        backend = ScriptedBackend.from_file(path)
        if _scripts is not None:
            _scripts[path] = backend
        return backend
    return HttpBackend(HttpConfig(
        base_url=binding.base_url,
        model=binding.model,
        timeout=binding.timeout,
        max_attempts=binding.max_attempts,
        backoff_base=binding.backoff_base,
    ))


def build_backends(cfg: RunConfig, base_dir: Path) -> dict:
    """One backend per role; roles bound to the same script share its cursor."""
    scripts: dict = {}
    return {role: make_backend(cfg.backends.binding(role), cfg.seed, base_dir, scripts) for role in Role}


def load_task(cfg: ConfigFile, base_dir: Path):
    if cfg.mode is Kind.SOLUTION:
        inst = load_instance(_resolve(base_dir, cfg.problem.instance))
        if not isinstance(inst, TspInstance):
            raise InstanceFormatError(f"{cfg.problem.instance}: solution mode needs a TSP instance")
        return TspTask(inst)
    instances = []
    for p in cfg.problem.training:
        inst = load_instance(_resolve(base_dir, p))
        if not isinstance(inst, BppInstance):
            raise InstanceFormatError(f"{p}: heuristic mode needs bin-packing instances")
        instances.append(inst)
    return make_bpp_task(TrainingSet(tuple(instances), cfg.fitness.weights), cfg.run_config())


def _apply_overrides(cfg: ConfigFile, args) -> ConfigFile:
    update: dict = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.backend is not None:
        binding = {"kind": args.backend}
        if args.backend == "scripted":
            if not args.script:
                raise ConfigError("--backend scripted needs --script")
            binding["script"] = str(Path(args.script).resolve())
        elif args.backend == "http":
            old = cfg.backends.variation
            binding.update(base_url=old.base_url, model=old.model)
        backends = cfg.backends.model_dump()
        backends["variation"] = binding
        backends["reflective"] = binding
        update["backends"] = backends
    elif args.script:
        raise ConfigError("--script only applies with --backend scripted")
    if not update:
        return cfg
    data = cfg.model_dump(mode="json")
    data.update(update)
    try:
        return ConfigFile.model_validate(data)
    except Exception as exc:  # pydantic ValidationError
        raise ConfigError(str(exc)) from None


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        base = Path(args.config).resolve().parent
        task = load_task(cfg, base)
        run_cfg = cfg.run_config()
        backends = build_backends(run_cfg, base)
    except (ConfigError, InstanceFormatError, BackendConfigError, OSError) as exc:
        _err(str(exc))
        return EXIT_CONFIG

    out = Path(args.out) if args.out else _resolve(Path.cwd(), cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    runlog = RunLog(out / "run.jsonl")
    try:
        result = Engine(run_cfg, task, backends, runlog).run()
    except Exception as exc:
        log.exception("run failed")
        _err(f"runtime error: {exc}")
        return EXIT_RUNTIME
    finally:
        runlog.close()
    (out / "result.json").write_text(json.dumps(result.to_json(), indent=2) + "\n", encoding="utf-8")
    print(f"best cost: {result.best_cost:.6g}")
    print(f"best candidate: {render_payload(result.best.payload)}")
    print(f"generations: {result.generations_run}  backend calls: {result.backend_calls}  "
          f"evaluations: {result.evaluations}")
    print(f"wrote {out / 'run.jsonl'} and {out / 'result.json'}")
    return EXIT_OK


def replay_log(records) -> tuple[int, str]:
    """Re-run a logged run against its own responses; (exit status, message)."""
    if not records or records[0].kind is not RecordKind.META:
        return EXIT_RUNTIME, "malformed log: first record is not a meta record"
    if records[-1].kind is not RecordKind.RESULT:
        return EXIT_RUNTIME, "malformed log: no result record (truncated?)"
    meta = records[0].body
    try:
        cfg = validate_run_config(meta["config"])
        task = task_from_json(meta["problem"], cfg)
    except (KeyError, ValueError, TypeError) as exc:
        return EXIT_RUNTIME, f"malformed log: bad meta record ({exc})"

    responses: dict = {role: {} for role in Role}
    for r in records:
        if r.kind is RecordKind.RESPONSE:
            try:
                role = Role(r.body["role"])
                cid = r.body["correlation_id"]
            except (KeyError, ValueError):
                return EXIT_RUNTIME, f"malformed log: bad response record seq {r.seq}"
            if r.body.get("error") is not None:
                responses[role][cid] = BackendError(r.body["error"])
            else:
                responses[role][cid] = r.body.get("text") or ""
    backends = {role: _ReplayBackend(responses[role]) for role in Role}

    fresh = Engine(cfg, task, backends).run().log
    old_gens = [r for r in records if r.kind is RecordKind.GENERATION]
    new_gens = fresh.of_kind(RecordKind.GENERATION)
    for i in range(max(len(old_gens), len(new_gens))):
        if i >= len(old_gens) or i >= len(new_gens):
            g = (old_gens + new_gens)[min(len(old_gens), len(new_gens))].generation
            return EXIT_DIVERGED, f"diverged at generation {g}: generation count differs"
        a, b = old_gens[i].body, new_gens[i].body
        for key in ("population_digest", "offspring_digest"):
            if a.get(key) != b.get(key):
                return EXIT_DIVERGED, f"diverged at generation {old_gens[i].generation}: {key} differs"
    return EXIT_OK, f"replay matched {len(old_gens)} generations"


class _ReplayBackend(ScriptedBackend):
    def complete(self, req):
        value = super().complete(req)
        if isinstance(value, Exception):
            raise value
        return value


def cmd_replay(args) -> int:
    try:
        records = read_log(args.log)
    except (OSError, MalformedLog) as exc:
        _err(f"malformed input: {exc}")
        return EXIT_RUNTIME
    status, message = replay_log(records)
    (print if status == EXIT_OK else _err)(message)
    return status


def _load_suite(path: Path) -> tuple[list, list]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read suite ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: suite must be a JSON object")
    unknown = sorted(set(data) - {"instances", "heuristics"})
    if unknown:
        raise ConfigError(f"{path}: unknown field {unknown[0]!r}")
    for key in ("instances", "heuristics"):
        if not isinstance(data.get(key), list):
            raise ConfigError(f"{path}: field {key!r} must be a list")
    base = path.resolve().parent
    instances = []
    for p in data["instances"]:
        inst = load_instance(_resolve(base, p))
        if not isinstance(inst, BppInstance):
            raise ConfigError(f"{p}: bench suites take bin-packing instances")
        instances.append(inst)
    heuristics = []
    for text in data["heuristics"]:
        try:
            heuristics.append((text, hdsl.parse(text)))
        except hdsl.DslParseError as exc:
            raise ConfigError(f"{path}: heuristic {text!r}: {exc}") from None
    return instances, heuristics


def bench_report(instances, heuristics) -> tuple[str, dict]:
    """CSV text and mean excess per heuristic label (None when any cell failed)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["heuristic", "instance", "digest", "bins", "lb", "excess"])
    packers = [(label, (lambda inst, e=expr: bpp_pack(inst, e))) for label, expr in heuristics]
    packers += [("first_fit", bpp_first_fit), ("best_fit", bpp_best_fit)]
    summary = {}
    for label, pack in packers:
        scores = []
        for inst in instances:
            lb = bpp_lower_bound(inst)
            try:
                bins = len(pack(inst))
            except hdsl.DslError:
                w.writerow([label, inst.name, inst.digest, "infeasible", lb, "infeasible"])
                scores.append(None)
                continue
            ex = excess_ratio(bins, lb)
            scores.append(ex)
            w.writerow([label, inst.name, inst.digest, bins, lb, f"{ex:.6f}"])
        summary[label] = None if None in scores or not scores else aggregate(scores)
    return buf.getvalue(), summary


def cmd_bench(args) -> int:
    try:
        instances, heuristics = _load_suite(Path(args.suite))
    except (ConfigError, InstanceFormatError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    text, summary = bench_report(instances, heuristics)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    width = max(len(k) for k in summary)
    print(f"{'heuristic':<{width}}  mean_excess")
    for label, mean in summary.items():
        print(f"{label:<{width}}  {'infeasible' if mean is None else f'{mean:.4f}'}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_eval_expr(args) -> int:
    try:
        expr = hdsl.parse(args.expr)
    except hdsl.DslParseError as exc:
        _err(f"parse error: {exc}")
        return EXIT_CONFIG
    try:
        inst = load_instance(args.instance)
    except InstanceFormatError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if not isinstance(inst, BppInstance):
        _err(f"{args.instance}: eval-expr needs a bin-packing instance")
        return EXIT_CONFIG
    try:
        bins = len(bpp_pack(inst, expr))
    except hdsl.DslError as exc:
        _err(f"evaluation error: {exc}")
        return EXIT_RUNTIME
    lb = bpp_lower_bound(inst)
    print(f"bins={bins} lb={lb} excess={excess_ratio(bins, lb):.4f}")
    return EXIT_OK


def derive_seed(seed: int, index: int) -> int:
    return int(digest64(f"{seed}:{index}"), 16)


def cmd_gen_instances(args) -> int:
    out = Path(args.out)
    try:
        if args.count < 0:
            raise ValueError("count must be >= 0")
        made = []
        for i in range(args.count):
            s = derive_seed(args.seed, i)
            if args.kind == "tsp":
                inst = gen_tsp(s, args.n or 9)
            else:
                inst = gen_bpp(s, args.n or 50, args.capacity, (args.size_min, args.size_max))
            made.append(inst)
    except ValueError as exc:
        _err(f"invalid parameters: {exc}")
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    for i, inst in enumerate(made):
        inst = dataclasses.replace(inst, name=f"{args.kind}-{args.seed}-{i}")
        path = out / f"{args.kind}-{args.seed}-{i}.json"
        save_instance(inst, path)
        print(f"{path} {inst.digest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evoforge", description="Evolutionary search with language-model variation operators.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a search from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--backend", choices=["http", "scripted", "synthetic"], help="bind both roles to this backend")
    r.add_argument("--script", help="response script for --backend scripted")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="re-run a logged run and check it reproduces")
    rp.add_argument("log", help="path to run.jsonl")
    rp.set_defaults(func=cmd_replay)

    b = sub.add_parser("bench", help="score heuristics on a suite of bin-packing instances")
    b.add_argument("--suite", required=True)
    b.add_argument("--out", default="bench.csv")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("eval-expr", help="score one expression on one bin-packing instance",
                       description="Expressions starting with '-' must follow '--', e.g. eval-expr --instance f.json -- '-index'")
    e.add_argument("--instance", required=True)
    e.add_argument("expr")
    e.set_defaults(func=cmd_eval_expr)

    g = sub.add_parser("gen-instances", help="write seeded random instances")
    g.add_argument("--kind", choices=["tsp", "bpp"], required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, help="cities (tsp, default 9) or items (bpp, default 50)")
    g.add_argument("--capacity", type=int, default=100)
    g.add_argument("--size-min", type=int, default=10)
    g.add_argument("--size-max", type=int, default=40)
    g.set_defaults(func=cmd_gen_instances)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
