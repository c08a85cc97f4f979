"""Experiment runner: config files, seeded runs, persistence and exporters.

A results directory holds:

    config.yaml       the resolved experiment config
    log.jsonl         one record per generation
    checkpoint.json   full search state, rewritten every ``checkpoint_every`` generations
    best.txt          best program text
    report.json       outcome flags, counts and the best candidate's fitness report
    lineage.dot       ancestry of the best candidate
    summary.txt       human-readable digest
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import yaml

from .compiler import CompileError, ExportError, draw, export_qasm, instantiate
from .dsl import DSLError, ParseError, parse_program, print_program
from .evolve import (
    TIERS, Candidate, ConfigError, ConfigurationSpace, HyperParams, Search, explore_probability,
    load_space,
)
from .fitness import INIT_ANGLE, Budget
from .tasks import FAMILIES, TaskError, get_task, qft_angles, task_from_config

log = logging.getLogger("qmotif")

EXPERIMENT_SCHEMA = "qmotif.experiment/1"
LOG_SCHEMA = "qmotif.log/1"
REPORT_SCHEMA = "qmotif.report/1"
PROGRAM_SCHEMA = "qmotif.program/1"
LINEAGE_SCHEMA = "qmotif.lineage/1"
TOP_K = 200


# ---------------------------------------------------------------------------
# config


@dataclass
class ExperimentConfig:
    task: Union[str, dict] = "deutsch_jozsa"
    tier: Optional[str] = "small"
    space: Optional[dict] = None  # inline space, overrides the tier preset
    hyperparams: dict = field(default_factory=dict)
    out: str = "runs/experiment"
    seed: int = 0
    checkpoint_every: int = 10
    step_capped: bool = True
    space_motifs: int = 5  # n in the search-space size reported in the log

    def __post_init__(self):
        if self.tier is None and self.space is None:
            raise ConfigError("config needs a tier or an inline space")
        if self.tier is not None and self.tier.lower() not in TIERS:
            raise ConfigError(f"unknown tier {self.tier!r}; known: {', '.join(TIERS)}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.space_motifs < 1:
            raise ConfigError("space_motifs must be >= 1")
        self.hyperparams_obj()  # validate early

    def to_dict(self) -> dict:
        return {"schema": EXPERIMENT_SCHEMA, **asdict(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        schema = d.pop("schema", EXPERIMENT_SCHEMA)
        if schema != EXPERIMENT_SCHEMA:
            raise ConfigError(f"unsupported config schema {schema!r}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def task_obj(self):
        if isinstance(self.task, dict):
            return task_from_config(self.task)
        return get_task(self.task)

    def space_obj(self) -> ConfigurationSpace:
        if self.space is not None:
            return ConfigurationSpace.from_dict(self.space)
        return load_space(self.task_obj().family, self.tier)

    def hyperparams_obj(self) -> HyperParams:
        hp = HyperParams.from_dict({**self.hyperparams, "rng_seed": self.seed})
        if self.step_capped:
            hp = replace(hp, budget=replace(hp.budget, seconds=None))
        return hp


def _preset_path(name: str) -> Path:
    return Path(str(resources.files("qmotif") / "experiments" / f"{name}.yaml"))


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a YAML experiment config; a bare preset name (e.g. ``dj_small``) also works."""
    p = Path(path)
    if not p.exists() and _preset_path(str(path)).exists():
        p = _preset_path(str(path))
    if not p.exists():
        raise ConfigError(f"config file {path} not found")
    data = yaml.safe_load(p.read_text())
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return ExperimentConfig.from_dict(data)


def preset_names() -> list[str]:
    root = resources.files("qmotif") / "experiments"
    return sorted(Path(str(f)).stem for f in root.iterdir() if str(f).endswith(".yaml"))


# ---------------------------------------------------------------------------
# accounting and exporters


def search_space_size(cs: ConfigurationSpace, n_motifs: int) -> int:
    """Number of programs with at most ``n_motifs`` motifs: sum of C^k, k = 1..n."""
    if n_motifs < 1:
        raise ValueError("n_motifs must be >= 1")
    c = cs.primitive_count()
    return sum(c ** k for k in range(1, n_motifs + 1))


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")


def ancestors(population: Sequence[Candidate], best: Candidate) -> list[int]:
    seen, stack = set(), [best.id]
    while stack:
        i = stack.pop()
        if i in seen:
            continue
        seen.add(i)
        stack.extend(population[i].parents)
    return sorted(seen)


def export_lineage(population: Sequence[Candidate], best: Candidate) -> str:
    """DOT graph of every ancestor of ``best``, edges labelled with the mutation kind."""
    ids = ancestors(population, best)
    lines = [f"// schema: {LINEAGE_SCHEMA}", "digraph lineage {", "  rankdir=TB;",
             '  node [shape=box, fontname="monospace"];']
    for i in ids:
        c = population[i]
        f = c.f_total
        f_text = "-inf" if f == -math.inf else f"{f:.6f}"
        label = f"#{i} gen {c.generation}\nf={f_text}\n{print_program(c.program)}"
        extra = ", penwidth=2" if i == best.id else ""
        lines.append(f'  n{i} [label="{_dot_escape(label)}", f_total="{f_text}"{extra}];')
    for i in ids:
        c = population[i]
        for p in c.parents:
            lines.append(f'  n{p} -> n{i} [mutation="{c.mutation.value}", label="{c.mutation.value}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def _log_record(s: Search, space_size: int) -> dict:
    scores = sorted((c.f_total for c in s.eligible), reverse=True)
    return {
        "schema": LOG_SCHEMA,
        "generation": s.generation,
        "evaluations": len(s.population),
        "unique_evaluations": s.unique_evaluations,
        "max_fitness": scores[0] if scores else None,
        "top": scores[:TOP_K],
        "evaluations_over_space": len(s.population) / space_size,
        "explore_probability": explore_probability(s.generation, s.hp),
        "solved": s.solved is not None,
    }


# ---------------------------------------------------------------------------
# running


def _write_json(path: Path, data) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    tmp.replace(path)


def _checkpoint(s: Search, cfg: ExperimentConfig) -> dict:
    d = s.checkpoint()
    if cfg.step_capped:
        d["elapsed"] = 0.0  # keep the directory a pure function of config and seed
    return d


def _finish(s: Search, cfg: ExperimentConfig, out: Path) -> dict:
    res = s.result()
    best = res.best
    _write_json(out / "checkpoint.json", _checkpoint(s, cfg))
    (out / "best.txt").write_text(f"# {PROGRAM_SCHEMA}\n{print_program(best.program)}\n")
    rep = best.report
    summary = {
        "schema": REPORT_SCHEMA,
        "task": s.task.name,
        "success": res.success,
        "timed_out": res.timed_out,
        "generations": res.generations,
        "evaluations": res.evaluations,
        "unique_evaluations": s.unique_evaluations,
        "search_space_size": search_space_size(s.cs, cfg.space_motifs),
        "best": best.to_dict(),
        "f_raw": None if rep is None else rep.f_raw,
        "f_total": None if rep is None or rep.failed else rep.f_total,
        "chosen_r": None if rep is None else rep.chosen_r,
        "trained_params": None if rep is None else rep.trained_params,
    }
    if not cfg.step_capped:
        summary["elapsed_seconds"] = res.elapsed
    _write_json(out / "report.json", summary)
    (out / "lineage.dot").write_text(export_lineage(res.population, best))
    status = "solved" if res.success else "stopped without a solution (partial results)"
    lines = [
        f"task: {s.task.name}",
        f"status: {status}",
        f"generations: {res.generations}",
        f"evaluations: {res.evaluations} ({s.unique_evaluations} unique)",
        f"best f_total: {summary['f_total']}",
        f"best f_raw: {summary['f_raw']}",
        f"chosen r: {summary['chosen_r']}",
        "best program:",
        print_program(best.program),
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return summary


def _drive(s: Search, cfg: ExperimentConfig, out: Path, append: bool) -> dict:
    space_size = search_space_size(s.cs, cfg.space_motifs)
    log_path = out / "log.jsonl"
    mode = "a" if append else "w"
    with open(log_path, mode) as fh:
        def on_generation(search: Search):
            fh.write(json.dumps(_log_record(search, space_size)) + "\n")
            fh.flush()
            if search.generation % cfg.checkpoint_every == 0:
                _write_json(out / "checkpoint.json", _checkpoint(search, cfg))
            log.info("generation %d: %d candidates, best %.4f", search.generation,
                     len(search.population), search.best().f_total)

        s.run(on_generation)
    return _finish(s, cfg, out)


def run(cfg: ExperimentConfig, out: Optional[Union[str, Path]] = None) -> Path:
    """Run a search from scratch and write the results directory."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(cfg, out=str(out))
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    s = Search(cfg.task_obj(), cfg.space_obj(), cfg.hyperparams_obj())
    _drive(s, cfg, out, append=False)
    return out


def resume(out: Union[str, Path], **hp_overrides) -> Path:
    """Continue a run from its checkpoint; budgets may be raised through ``hp_overrides``."""
    out = Path(out)
    ckpt = out / "checkpoint.json"
    if not ckpt.exists():
        raise ConfigError(f"no checkpoint in {out}")
    cfg = load_config(out / "config.yaml")
    s = Search.from_checkpoint(json.loads(ckpt.read_text()), **hp_overrides)
    # drop log rows written after the checkpoint so the resumed log has no duplicates
    log_path = out / "log.jsonl"
    if log_path.exists():
        rows = [ln for ln in log_path.read_text().splitlines()
                if ln and json.loads(ln)["generation"] <= s.generation]
        log_path.write_text("".join(r + "\n" for r in rows))
    _drive(s, cfg, out, append=True)
    return out


def load_results(out: Union[str, Path]) -> tuple[list[Candidate], Candidate]:
    d = json.loads((Path(out) / "checkpoint.json").read_text())
    pop = [Candidate.from_dict(c) for c in d["population"]]
    report = json.loads((Path(out) / "report.json").read_text())
    return pop, pop[report["best"]["id"]]


# ---------------------------------------------------------------------------
# show


def _read_program(src: str):
    p = Path(src)
    text = p.read_text() if p.exists() else src
    return parse_program(text)


def _params_for(c, spec: Optional[str]) -> list[float]:
    if spec is None:
        return [INIT_ANGLE] * c.param_slots
    if spec == "qft":
        return qft_angles(c)
    vals = [float(v) for v in spec.split(",") if v.strip()]
    if len(vals) != c.param_slots:
        raise ExportError(f"circuit has {c.param_slots} parameters, got {len(vals)}")
    return vals


def show(program: str, n: int, r: Optional[int] = None, fmt: str = "ascii",
         params: Optional[str] = None, task: Optional[str] = None, instance=None) -> str:
    """Render a program at ``n`` qubits as ASCII art or OpenQASM."""
    p = _read_program(program)
    if r is None and p.repetitions is None:
        r = 1
    c = instantiate(p, n, r)
    if task is not None:
        from .tasks import lower_oracles
        t = get_task(task)
        if t.oracle_lowering is None:
            raise TaskError(f"task {task!r} has no oracle")
        c = lower_oracles(c, t.oracle_lowering, _parse_instance(instance, n, t.family))
    angles = _params_for(c, params)
    if fmt == "qasm":
        return export_qasm(c, angles)
    if fmt == "ascii":
        return draw(c, angles if params is not None else ())
    raise ValueError(f"unknown format {fmt!r}")


def _parse_instance(instance, n: int, family: str):
    if family == "grover":
        return int(instance or 0)
    if instance is None:
        return (0,) * (1 << (n - 1))
    table = tuple(int(ch) for ch in str(instance))
    if len(table) != 1 << (n - 1):
        raise TaskError(f"truth table needs {1 << (n - 1)} bits")
    return table


# ---------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qmotif", description="Evolutionary search for scalable quantum algorithms.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run a search from a config file or preset")
    p.add_argument("--config", required=True, help="YAML config path or shipped preset name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--step-capped", action="store_true", default=None,
                   help="fixed training step counts instead of a wall-clock budget")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("resume", help="continue a run from its checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int)
    p.add_argument("--max-generations", type=int)
    p.add_argument("--max-evaluations", type=int)
    p.add_argument("--max-runtime", type=float)

    p = sub.add_parser("show", help="render a program as ASCII art or OpenQASM")
    p.add_argument("program", help="program file or program text")
    p.add_argument("-n", "--qubits", type=int, required=True)
    p.add_argument("-r", "--repetitions", type=int)
    p.add_argument("--format", choices=("ascii", "qasm"), default="ascii")
    p.add_argument("--params", help="comma-separated angles, or 'qft' for textbook QFT angles")
    p.add_argument("--task", help="lower oracle calls using this task's oracle")
    p.add_argument("--instance", help="marked state (grover) or truth table bits (deutsch_jozsa)")

    p = sub.add_parser("space-size", help="count programs in a configuration space")
    p.add_argument("--task", default="deutsch_jozsa")
    p.add_argument("--tier", choices=TIERS)
    p.add_argument("-n", "--motifs", type=int, default=5)

    p = sub.add_parser("lineage", help="export the ancestry of the best candidate as DOT")
    p.add_argument("--out", required=True, help="results directory")
    p.add_argument("--dot", help="output file (default: stdout)")

    p = sub.add_parser("tasks", help="task registry")
    p.add_argument("action", choices=("list",))
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DSLError, CompileError, ExportError, TaskError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.verb == "run":
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.step_capped:
            cfg = replace(cfg, step_capped=True)
        if args.jobs is not None:
            cfg = replace(cfg, hyperparams={**cfg.hyperparams, "jobs": args.jobs})
        out = run(cfg, args.out)
        print((out / "summary.txt").read_text(), end="")
        return 0
    if args.verb == "resume":
        overrides = {k: v for k, v in (("jobs", args.jobs), ("max_generations", args.max_generations),
                                       ("max_evaluations", args.max_evaluations),
                                       ("max_runtime", args.max_runtime)) if v is not None}
        out = resume(args.out, **overrides)
        print((out / "summary.txt").read_text(), end="")
        return 0
    if args.verb == "show":
        print(show(args.program, args.qubits, args.repetitions, args.format, args.params,
                   args.task, args.instance))
        return 0
    if args.verb == "space-size":
        family = get_task(args.task).family
        tiers = [args.tier] if args.tier else list(TIERS)
        for t in tiers:
            cs = load_space(family, t)
            print(f"{family:<14} {t:<7} primitives={cs.primitive_count():<5} "
                  f"programs(n<={args.motifs})={search_space_size(cs, args.motifs)}")
        return 0
    if args.verb == "lineage":
        pop, best = load_results(args.out)
        dot = export_lineage(pop, best)
        if args.dot:
            Path(args.dot).write_text(dot)
        else:
            print(dot, end="")
        return 0
    if args.verb == "tasks":
        for name in FAMILIES:
            t = get_task(name)
            reps = t.max_repetitions if t.max_repetitions is not None else "circuit size"
            print(f"{name:<14} Q={list(t.sizes)} threshold={t.stop_threshold} "
                  f"max_repetitions={reps} oracle={'yes' if t.uses_oracle else 'no'}")
        print("presets: " + ", ".join(preset_names()))
        return 0
    raise AssertionError(args.verb)
