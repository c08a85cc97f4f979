"""Evolutionary search over motif programs.

The population only grows: each generation selects ``n_batch`` parent pairs,
makes eight children from every pair (one chop-and-join pair plus property,
insert and dropout mutations of both parents), evaluates them and appends
them.  Selection alternates between uniform sampling and tournaments on a
cosine schedule that starts exploratory.
"""
from __future__ import annotations

import enum
import heapq
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import yaml

from .dsl import (
    RELEVANT, Boundary, DSLError, EdgeOrder, Kind, Motif, Program, Unitary,
    parse_program, print_program, validate_pattern,
)
from .fitness import Budget, FitnessReport, Weights, evaluate
from .tasks import TaskSpec, task_from_config

log = logging.getLogger(__name__)

SPACES_DIR = Path(__file__).parent / "spaces"
TIERS = ("small", "medium", "large", "huge")
CHECKPOINT_SCHEMA = "qmotif.checkpoint/1"


class ConfigError(ValueError):
    pass


class Mutation(enum.Enum):
    INIT = "init"
    PROPERTY = "property"
    INSERT = "insert"
    DROPOUT = "dropout"
    CHOP_JOIN = "chop_join"


_N_PARENTS = {Mutation.INIT: 0, Mutation.PROPERTY: 1, Mutation.INSERT: 1,
              Mutation.DROPOUT: 1, Mutation.CHOP_JOIN: 2}


# ---------------------------------------------------------------------------
# configuration space


@dataclass(frozen=True)
class ConfigurationSpace:
    kind_probs: dict
    cycle_unitaries: tuple = (Unitary.H,)
    pivot_unitaries: tuple = (Unitary.H,)
    pivot_patterns: tuple = ("1*", "*1")
    mask_patterns: tuple = ("1*", "*1")
    unmask_patterns: tuple = ("*",)
    strides: tuple = (1,)
    steps: tuple = (1,)
    offsets: tuple = (0,)
    boundaries: tuple = (Boundary.PERIODIC,)
    edge_orders: tuple = (EdgeOrder.PIVOT_LAST,)
    merges: tuple = (True,)
    share_weights: tuple = (False,)
    tier: str = "custom"

    def __post_init__(self):
        probs = {Kind(k) if not isinstance(k, Kind) else k: float(v)
                 for k, v in self.kind_probs.items()}
        object.__setattr__(self, "kind_probs", probs)
        if any(v < 0 for v in probs.values()):
            raise ConfigError("kind probabilities must be >= 0")
        if abs(sum(probs.values()) - 1) > 1e-9:
            raise ConfigError("kind probabilities must sum to 1")
        for kind, prob in probs.items():
            if prob == 0:
                continue
            for name in RELEVANT[kind]:
                if not self.allowed(kind, name):
                    raise ConfigError(f"empty allowed set for {kind.value}.{name}")
        for pat in self.pivot_patterns + self.mask_patterns + self.unmask_patterns:
            validate_pattern(pat)

    def allowed(self, kind: Kind, name: str) -> tuple:
        if name == "unitary":
            return self.cycle_unitaries if kind is Kind.CYCLE else self.pivot_unitaries
        if name == "pattern":
            return {Kind.PIVOT: self.pivot_patterns, Kind.MASK: self.mask_patterns,
                    Kind.UNMASK: self.unmask_patterns}[kind]
        return {
            "stride": self.strides, "step": self.steps, "offset": self.offsets,
            "boundary": self.boundaries, "edge_order": self.edge_orders,
            "merge": self.merges, "share_weights": self.share_weights,
        }[name]

    @property
    def kinds(self) -> list[Kind]:
        return [k for k in Kind if self.kind_probs.get(k, 0) > 0]

    def primitive_count(self) -> int:
        """Number of distinct motif configurations the space can produce."""
        total = 0
        for kind in self.kinds:
            n = 1
            for name in RELEVANT[kind]:
                n *= len(set(self.allowed(kind, name)))
            total += n
        return total

    def to_dict(self) -> dict:
        def enc(values):
            return [v.symbol if isinstance(v, Unitary) else v.value if isinstance(v, enum.Enum)
                    else v for v in values]

        d = {"tier": self.tier, "kind_probs": {k.value: v for k, v in self.kind_probs.items()}}
        for f in ("cycle_unitaries", "pivot_unitaries", "pivot_patterns", "mask_patterns",
                  "unmask_patterns", "strides", "steps", "offsets", "boundaries",
                  "edge_orders", "merges", "share_weights"):
            d[f] = enc(getattr(self, f))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigurationSpace":
        d = dict(d)
        d.pop("schema", None)
        kw = {"tier": d.pop("tier", "custom"), "kind_probs": d.pop("kind_probs")}
        conv = {
            "cycle_unitaries": Unitary.from_symbol, "pivot_unitaries": Unitary.from_symbol,
            "boundaries": Boundary, "edge_orders": EdgeOrder, "merges": bool,
            "share_weights": bool, "strides": int, "steps": int, "offsets": int,
            "pivot_patterns": str, "mask_patterns": str, "unmask_patterns": str,
        }
        for name, values in d.items():
            if name not in conv:
                raise ConfigError(f"unknown configuration-space field {name!r}")
            try:
                kw[name] = tuple(conv[name](v) for v in values)
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"bad value in {name}: {exc}") from None
        try:
            return cls(**kw)
        except DSLError as exc:
            raise ConfigError(str(exc)) from None


def load_space(task: str, tier: str) -> ConfigurationSpace:
    """Shipped preset for a task family (qft, deutsch_jozsa, grover) and tier."""
    path = SPACES_DIR / f"{task}_{tier.lower()}.yaml"
    if not path.exists():
        raise ConfigError(f"no shipped space for task {task!r}, tier {tier!r}")
    return ConfigurationSpace.from_dict(yaml.safe_load(path.read_text()))


# ---------------------------------------------------------------------------
# sampling and mutation


def _pick(rng: np.random.Generator, seq: Sequence):
    return seq[int(rng.integers(len(seq)))]


def sample_motif(cs: ConfigurationSpace, rng: np.random.Generator) -> Motif:
    kinds = [k for k in Kind if k in cs.kind_probs]  # fixed order, whatever the source dict order
    probs = np.array([cs.kind_probs[k] for k in kinds])
    kind = kinds[int(rng.choice(len(kinds), p=probs / probs.sum()))]
    return Motif(kind, **{name: _pick(rng, cs.allowed(kind, name)) for name in RELEVANT[kind]})


def sample_program(cs: ConfigurationSpace, n_motifs: int, rng: np.random.Generator) -> Program:
    if n_motifs < 1:
        raise ConfigError("n_motifs must be >= 1")
    return Program(tuple(sample_motif(cs, rng) for _ in range(n_motifs)))


def _fresh_motif(cs, rng, old: Motif, tries: int = 20) -> Motif:
    new = sample_motif(cs, rng)
    for _ in range(tries):
        if new != old:
            break
        new = sample_motif(cs, rng)
    return new


def mutate_property(p: Program, cs: ConfigurationSpace, rng: np.random.Generator) -> Program:
    i = int(rng.integers(len(p)))
    old = p.body[i]
    options = {}
    for name in RELEVANT[old.kind]:
        alts = [v for v in dict.fromkeys(cs.allowed(old.kind, name)) if v != getattr(old, name)]
        if alts:
            options[name] = alts
    if rng.random() < 0.5 and options:
        name = _pick(rng, sorted(options))
        new = old.with_property(name, _pick(rng, options[name]))
    else:
        new = _fresh_motif(cs, rng, old)
    body = list(p.body)
    body[i] = new
    return replace(p, body=tuple(body))


def mutate_insert(p: Program, cs: ConfigurationSpace, rng: np.random.Generator) -> Program:
    pos = int(rng.integers(len(p) + 1))
    body = list(p.body)
    body.insert(pos, sample_motif(cs, rng))
    return replace(p, body=tuple(body))


def mutate_dropout(p: Program, rng: np.random.Generator) -> Program:
    if len(p) < 2:
        log.debug("dropout skipped on a single-motif program")
        return p
    i = int(rng.integers(len(p)))
    return replace(p, body=p.body[:i] + p.body[i + 1:])


def chop_and_join(p1: Program, p2: Program, rng: np.random.Generator, tries: int = 5):
    """Swap the head pieces of two programs cut at random points."""
    for _ in range(tries):
        c1 = int(rng.integers(len(p1) + 1))
        c2 = int(rng.integers(len(p2) + 1))
        a = p2.body[:c2] + p1.body[c1:]
        b = p1.body[:c1] + p2.body[c2:]
        if a and b:
            return replace(p1, body=a), replace(p2, body=b)
    return p1, p2


def make_children(m1: Program, m2: Program, cs: ConfigurationSpace,
                  rng: np.random.Generator) -> list[tuple[Program, Mutation, tuple[int, ...]]]:
    """Eight children tagged with mutation kind and parent positions (0 = m1, 1 = m2)."""
    a, b = chop_and_join(m1, m2, rng)
    return [
        (a, Mutation.CHOP_JOIN, (0, 1)),
        (b, Mutation.CHOP_JOIN, (0, 1)),
        (mutate_property(m1, cs, rng), Mutation.PROPERTY, (0,)),
        (mutate_property(m2, cs, rng), Mutation.PROPERTY, (1,)),
        (mutate_insert(m1, cs, rng), Mutation.INSERT, (0,)),
        (mutate_insert(m2, cs, rng), Mutation.INSERT, (1,)),
        (mutate_dropout(m1, rng), Mutation.DROPOUT, (0,)),
        (mutate_dropout(m2, rng), Mutation.DROPOUT, (1,)),
    ]


# ---------------------------------------------------------------------------
# population and selection


@dataclass
class Candidate:
    id: int
    program: Program
    report: Optional[FitnessReport] = None
    parents: tuple[int, ...] = ()
    mutation: Mutation = Mutation.INIT
    generation: int = 0

    def __post_init__(self):
        if len(self.parents) != _N_PARENTS[self.mutation]:
            raise ValueError(f"{self.mutation.value} candidate needs "
                             f"{_N_PARENTS[self.mutation]} parents")

    @property
    def f_total(self) -> float:
        return -math.inf if self.report is None else self.report.f_total

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "program": print_program(self.program),
            "report": None if self.report is None else self.report.to_dict(),
            "parents": list(self.parents),
            "mutation": self.mutation.value,
            "generation": self.generation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        return cls(
            d["id"], parse_program(d["program"]),
            None if d["report"] is None else FitnessReport.from_dict(d["report"]),
            tuple(d["parents"]), Mutation(d["mutation"]), d["generation"],
        )


@dataclass
class HyperParams:
    init_size: int = 200
    init_motif_counts: tuple = (2, 3)
    n_batch: int = 4
    tournament_pressure: float = 0.05
    explore_period: float = 200.0
    explore_floor: float = 0.1
    explore_ceiling: float = 0.9
    stop_threshold: Optional[float] = None  # None: use the task's threshold
    max_oracle_calls: int = 1
    max_runtime: Optional[float] = None  # seconds
    max_evaluations: Optional[int] = None
    max_generations: Optional[int] = None
    rng_seed: int = 0
    weights: Weights = field(default_factory=Weights)
    budget: Budget = field(default_factory=Budget)
    jobs: int = 1

    def __post_init__(self):
        if not 0 < self.tournament_pressure <= 1:
            raise ConfigError("tournament_pressure must be in (0, 1]")
        if not 0 <= self.explore_floor <= self.explore_ceiling <= 1:
            raise ConfigError("need 0 <= explore_floor <= explore_ceiling <= 1")
        if self.init_size < 2:
            raise ConfigError("init_size must be >= 2")
        if self.n_batch < 1:
            raise ConfigError("n_batch must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_motif_counts"] = list(self.init_motif_counts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        d = dict(d)
        if "weights" in d:
            d["weights"] = Weights(**d["weights"])
        if "budget" in d:
            d["budget"] = Budget(**d["budget"])
        if "init_motif_counts" in d:
            d["init_motif_counts"] = tuple(d["init_motif_counts"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def explore_probability(t: float, hp: HyperParams) -> float:
    """Probability of random (rather than tournament) selection at generation t."""
    wave = (1 + math.cos(2 * math.pi * t / hp.explore_period)) / 2
    return hp.explore_floor + (hp.explore_ceiling - hp.explore_floor) * wave


def _rank_key(c: Candidate):
    return (-c.f_total, c.id)


def select(pop: Sequence[Candidate], phase: float, pressure: float,
           rng: np.random.Generator) -> tuple[Candidate, Candidate]:
    """Pick two parents: uniformly with probability ``phase``, else by tournament."""
    if len(pop) < 2:
        raise ValueError("selection needs at least two candidates")
    if rng.random() < phase:
        i, j = rng.choice(len(pop), size=2, replace=False)
        return pop[int(i)], pop[int(j)]
    k = min(len(pop), max(2, math.ceil(pressure * len(pop))))
    entrants = [pop[int(i)] for i in rng.choice(len(pop), size=k, replace=False)]
    first, second = heapq.nsmallest(2, entrants, key=_rank_key)
    return first, second


def solves(c: Candidate, threshold: float, oracle_task: bool, max_oracle_calls: int = 1) -> bool:
    r = c.report
    if r is None or r.failed:
        return False
    if oracle_task and r.oracle_calls > max_oracle_calls:
        return False
    return r.min_pair_score() > threshold


def stopping_condition(pop: Sequence[Candidate], hp: HyperParams, elapsed: float,
                       threshold: float, oracle_task: bool) -> bool:
    if hp.max_runtime is not None and elapsed >= hp.max_runtime:
        return True
    return any(solves(c, threshold, oracle_task, hp.max_oracle_calls) for c in pop)


# ---------------------------------------------------------------------------
# the search loop

_WORKER = {}


def _worker_init(task_cfg, weights, budget):
    _WORKER["ts"] = task_from_config(task_cfg).training_set()
    _WORKER["weights"] = weights
    _WORKER["budget"] = budget


def _worker_eval(text: str) -> FitnessReport:
    return evaluate(parse_program(text), _WORKER["ts"], _WORKER["weights"], _WORKER["budget"])


def task_config(task: TaskSpec) -> dict:
    return {"builder": task.family, "name": task.name, "sizes": list(task.sizes),
            "threshold": task.stop_threshold, "max_repetitions": task.max_repetitions}


@dataclass
class SearchResult:
    population: list[Candidate]
    best: Candidate
    success: bool
    timed_out: bool
    generations: int
    evaluations: int
    elapsed: float


class Search:
    """State of one run of the evolutionary loop; checkpointable between generations."""

    def __init__(self, task: TaskSpec, cs: ConfigurationSpace, hp: HyperParams):
        self.task = task
        self.cs = cs
        self.hp = hp
        self.ts = task.training_set()
        self.threshold = hp.stop_threshold if hp.stop_threshold is not None else task.stop_threshold
        self.rng = np.random.default_rng(hp.rng_seed)
        self.population: list[Candidate] = []
        self.eligible: list[Candidate] = []
        self.cache: dict[str, FitnessReport] = {}
        self.generation = 0
        self.elapsed_before = 0.0
        self.solved: Optional[Candidate] = None
        self.top: list[float] = []  # min-heap of the best 200 f_total values
        self.unique_evaluations = 0
        self._pool = None
        self._t0 = None

    # -- evaluation -------------------------------------------------------

    def _evaluate_all(self, programs: list[Program]) -> list[FitnessReport]:
        texts = [print_program(p) for p in programs]
        todo = list(dict.fromkeys(t for t in texts if t not in self.cache))
        if todo:
            if self.hp.jobs > 1:
                if self._pool is None:
                    self._pool = ProcessPoolExecutor(
                        self.hp.jobs, initializer=_worker_init,
                        initargs=(task_config(self.task), self.hp.weights, self.hp.budget))
                reports = list(self._pool.map(_worker_eval, todo, chunksize=4))
            else:
                reports = [evaluate(parse_program(t), self.ts, self.hp.weights, self.hp.budget)
                           for t in todo]
            self.cache.update(zip(todo, reports))
            self.unique_evaluations += len(todo)
        return [self.cache[t] for t in texts]

    def _add(self, program, report, parents=(), mutation=Mutation.INIT):
        c = Candidate(len(self.population), program, report, tuple(parents), mutation,
                      self.generation)
        self._register(c)
        return c

    def _register(self, c: Candidate):
        self.population.append(c)
        if c.report is not None and not c.report.failed:
            self.eligible.append(c)
            if len(self.top) < 200:
                heapq.heappush(self.top, c.f_total)
            elif c.f_total > self.top[0]:
                heapq.heapreplace(self.top, c.f_total)
        if self.solved is None and solves(c, self.threshold, self.task.uses_oracle,
                                          self.hp.max_oracle_calls):
            self.solved = c

    # -- Algorithm steps --------------------------------------------------

    def initialise(self):
        counts = tuple(self.hp.init_motif_counts)
        programs = [sample_program(self.cs, int(_pick(self.rng, counts)), self.rng)
                    for _ in range(self.hp.init_size)]
        for p, rep in zip(programs, self._evaluate_all(programs)):
            self._add(p, rep)

    def step(self):
        self.generation += 1
        phase = explore_probability(self.generation - 1, self.hp)
        pool = self.eligible if len(self.eligible) >= 2 else self.population
        children = []
        for _ in range(self.hp.n_batch):
            m1, m2 = select(pool, phase, self.hp.tournament_pressure, self.rng)
            for prog, kind, who in make_children(m1.program, m2.program, self.cs, self.rng):
                ids = tuple((m1.id, m2.id)[w] for w in who)
                children.append((prog, kind, ids))
        reports = self._evaluate_all([c[0] for c in children])
        for (prog, kind, ids), rep in zip(children, reports):
            self._add(prog, rep, ids, kind)

    @property
    def elapsed(self) -> float:
        running = 0.0 if self._t0 is None else time.perf_counter() - self._t0
        return self.elapsed_before + running

    def out_of_budget(self) -> bool:
        hp = self.hp
        if hp.max_runtime is not None and self.elapsed >= hp.max_runtime:
            return True
        if hp.max_evaluations is not None and len(self.population) >= hp.max_evaluations:
            return True
        if hp.max_generations is not None and self.generation >= hp.max_generations:
            return True
        return False

    def done(self) -> bool:
        return self.solved is not None or self.out_of_budget()

    def best(self) -> Candidate:
        if self.solved is not None:
            return self.solved
        return min(self.population, key=_rank_key)

    def run(self, on_generation: Optional[Callable[["Search"], None]] = None) -> SearchResult:
        self._t0 = time.perf_counter()
        try:
            if not self.population:
                self.initialise()
                if on_generation:
                    on_generation(self)
            while not self.done():
                self.step()
                if on_generation:
                    on_generation(self)
        finally:
            self.elapsed_before = self.elapsed
            self._t0 = None
            if self._pool is not None:
                self._pool.shutdown()
                self._pool = None
        return self.result()

    def result(self) -> SearchResult:
        return SearchResult(
            population=self.population,
            best=self.best(),
            success=self.solved is not None,
            timed_out=self.solved is None,
            generations=self.generation,
            evaluations=len(self.population),
            elapsed=self.elapsed,
        )

    # -- checkpointing ----------------------------------------------------

    def checkpoint(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "task": task_config(self.task),
            "space": self.cs.to_dict(),
            "hyperparams": self.hp.to_dict(),
            "generation": self.generation,
            "elapsed": self.elapsed,
            "rng_state": self.rng.bit_generator.state,
            "unique_evaluations": self.unique_evaluations,
            "population": [c.to_dict() for c in self.population],
        }

    @classmethod
    def from_checkpoint(cls, d: dict, **hp_overrides) -> "Search":
        if d.get("schema") != CHECKPOINT_SCHEMA:
            raise ConfigError(f"unsupported checkpoint schema {d.get('schema')!r}")
        hp = HyperParams.from_dict({**d["hyperparams"], **hp_overrides})
        s = cls(task_from_config(d["task"]), ConfigurationSpace.from_dict(d["space"]), hp)
        s.rng.bit_generator.state = d["rng_state"]
        s.generation = d["generation"]
        s.elapsed_before = d["elapsed"]
        s.unique_evaluations = d["unique_evaluations"]
        for cd in d["population"]:
            c = Candidate.from_dict(cd)
            s._register(c)
            if c.report is not None:
                s.cache.setdefault(print_program(c.program), c.report)
        return s


def run_search(task: TaskSpec, cs: ConfigurationSpace, hp: HyperParams,
               on_generation: Optional[Callable[[Search], None]] = None) -> SearchResult:
    return Search(task, cs, hp).run(on_generation)
