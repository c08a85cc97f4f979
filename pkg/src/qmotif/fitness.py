"""Scoring of candidate programs against a training set.

For each circuit size ``q`` the program is instantiated with a growing
number of repetitions, its CP angles are trained by gradient ascent, and the
mean per-pair overlap is recorded.  The raw fitness is the minimum over
sizes; penalties for gates, extra oracle calls, parameters and non-uniform
per-pair performance are subtracted from it.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .compiler import CircuitIR, instantiate
from .dsl import Program
from .sim import grad_params, run_circuit

INIT_ANGLE = math.pi / 2
EPS_REPEAT = 1e-9


class FitnessError(ValueError):
    pass


@dataclass
class TrainingPair:
    """One input/target example.

    Exactly one of ``target`` (a statevector) and ``target_overlap`` (the
    wanted value of |<0...0|out>|^2, either 0 or 1) is set.
    """

    q: int
    input: np.ndarray
    target: Optional[np.ndarray] = None
    target_overlap: Optional[float] = None
    oracle_instance: Any = None

    def __post_init__(self):
        if (self.target is None) == (self.target_overlap is None):
            raise FitnessError("set exactly one of target and target_overlap")
        if self.target_overlap is not None and self.target_overlap not in (0, 1):
            raise FitnessError("target_overlap must be 0 or 1")
        dim = 1 << self.q
        if self.input.shape != (dim,) or (self.target is not None and self.target.shape != (dim,)):
            raise FitnessError(f"pair dimensions do not match q={self.q}")


OracleBatcher = Callable[[int, list], Callable[[np.ndarray], np.ndarray]]


class PairBatch:
    """The pairs of one circuit size stacked into arrays for batched runs."""

    def __init__(self, pairs: Sequence[TrainingPair], oracle_batcher: Optional[OracleBatcher] = None):
        if not pairs:
            raise FitnessError("no training pairs")
        qs = {p.q for p in pairs}
        if len(qs) != 1:
            raise FitnessError("pairs of one batch must share a circuit size")
        self.q = qs.pop()
        self.pairs = list(pairs)
        self.inputs = np.stack([p.input for p in pairs]).astype(complex)
        dim = 1 << self.q
        self.is_state = np.array([p.target is not None for p in pairs])
        self.targets = np.stack(
            [p.target if p.target is not None else np.zeros(dim) for p in pairs]
        ).astype(complex)
        self.overlaps = np.array([p.target_overlap or 0.0 for p in pairs])
        self.oracle = None
        if oracle_batcher is not None and any(p.oracle_instance is not None for p in pairs):
            self.oracle = oracle_batcher(self.q, [p.oracle_instance for p in pairs])

    def __len__(self) -> int:
        return len(self.pairs)

    def pair_scores(self, out: np.ndarray) -> np.ndarray:
        fid = np.abs(np.sum(np.conj(self.targets) * out, axis=-1)) ** 2
        zero = np.abs(out[:, 0]) ** 2
        return np.where(self.is_state, fid, 1.0 - np.abs(self.overlaps - zero))

    def score(self, out: np.ndarray) -> float:
        return float(self.pair_scores(out).mean())


@dataclass
class TrainingSet:
    pairs: dict[int, list[TrainingPair]]
    oracle_batcher: Optional[OracleBatcher] = None
    max_repetitions: Optional[int] = None  # None: up to the circuit size
    _batches: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def sizes(self) -> list[int]:
        return sorted(self.pairs)

    def batch(self, q: int) -> PairBatch:
        if q not in self._batches:
            if not self.pairs.get(q):
                raise FitnessError(f"no training pairs for q={q}")
            self._batches[q] = PairBatch(self.pairs[q], self.oracle_batcher)
        return self._batches[q]


@dataclass(frozen=True)
class Weights:
    gates: float = 1e-3
    oracle: float = 0.5
    params: float = 1e-3
    jsd: float = 0.1


@dataclass(frozen=True)
class Budget:
    """Training limits.  ``seconds=None`` is the step-capped mode."""

    seconds: Optional[float] = 2.0
    max_steps: int = 2000
    learning_rate: float = 0.1
    tol: float = 1e-9

    @classmethod
    def step_capped(cls, max_steps: int = 2000) -> "Budget":
        return cls(seconds=None, max_steps=max_steps)


@dataclass
class FitnessReport:
    raw_per_q: dict[int, float]
    f_raw: float
    penalties: dict[str, float]
    f_total: float
    trained_params: dict[int, list[float]]
    chosen_r: dict[int, int]
    pair_scores: dict[int, list[float]]
    gate_count: int = 0
    param_count: int = 0
    oracle_calls: int = 0
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def min_pair_score(self) -> float:
        if self.failed:
            return -math.inf
        return min(min(v) for v in self.pair_scores.values())

    def to_dict(self) -> dict:
        def num(x):
            return None if not math.isfinite(x) else x

        return {
            "raw_per_q": {str(k): v for k, v in self.raw_per_q.items()},
            "f_raw": num(self.f_raw),
            "penalties": self.penalties,
            "f_total": num(self.f_total),
            "trained_params": {str(k): v for k, v in self.trained_params.items()},
            "chosen_r": {str(k): v for k, v in self.chosen_r.items()},
            "pair_scores": {str(k): v for k, v in self.pair_scores.items()},
            "gate_count": self.gate_count,
            "param_count": self.param_count,
            "oracle_calls": self.oracle_calls,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitnessReport":
        def keyed(m):
            return {int(k): v for k, v in m.items()}

        return cls(
            raw_per_q={int(k): v for k, v in d["raw_per_q"].items()},
            f_raw=-math.inf if d["f_raw"] is None else d["f_raw"],
            penalties=d["penalties"],
            f_total=-math.inf if d["f_total"] is None else d["f_total"],
            trained_params=keyed(d["trained_params"]),
            chosen_r=keyed(d["chosen_r"]),
            pair_scores=keyed(d["pair_scores"]),
            gate_count=d["gate_count"],
            param_count=d["param_count"],
            oracle_calls=d["oracle_calls"],
            error=d["error"],
        )

    @classmethod
    def failure(cls, message: str) -> "FitnessReport":
        return cls({}, -math.inf, {}, -math.inf, {}, {}, {}, error=message)


# ---------------------------------------------------------------------------


def _as_batch(pairs, oracle_batcher=None) -> PairBatch:
    return pairs if isinstance(pairs, PairBatch) else PairBatch(pairs, oracle_batcher)


def circuit_scores(c: CircuitIR, params: Sequence[float], batch: PairBatch) -> np.ndarray:
    out = run_circuit(c, params, batch.inputs, batch.oracle)
    return batch.pair_scores(out)


def raw_fitness_q(p: Program, q: int, r: int, params: Sequence[float], pairs) -> float:
    """Mean per-pair score of ``p`` at size ``q`` with ``r`` repetitions."""
    batch = _as_batch(pairs)
    if batch.q != q:
        raise FitnessError(f"pairs are for q={batch.q}, not {q}")
    return float(circuit_scores(instantiate(p, q, r), params, batch).mean())


def pair_gradient(c: CircuitIR, params: Sequence[float], pair: TrainingPair, oracle=None) -> np.ndarray:
    """Gradient of one pair's score with respect to the circuit's angles."""
    batch = PairBatch([pair])
    if oracle is not None:
        batch.oracle = oracle
    return grad_params(c, params, batch.inputs, batch.score, batch.oracle)


def jsd_penalty(scores: Sequence[float]) -> float:
    """Jensen-Shannon divergence (nats) between normalised scores and uniform."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise FitnessError("no scores")
    total = s.sum()
    if total <= 0:
        return math.log(2)
    p = np.clip(s, 0, None) / total
    u = np.full(s.size, 1.0 / s.size)
    m = 0.5 * (p + u)

    def kl(a, b):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / b[nz])))

    return max(0.0, 0.5 * kl(p, m) + 0.5 * kl(u, m))


def _train_circuit(c: CircuitIR, batch: PairBatch, budget: Budget) -> tuple[np.ndarray, float]:
    params = np.full(c.param_slots, INIT_ANGLE)
    score = float(circuit_scores(c, params, batch).mean())
    if c.param_slots == 0:
        return params, score
    best_params, best = params.copy(), score
    start = time.perf_counter()
    for _ in range(budget.max_steps):
        if budget.seconds is not None and time.perf_counter() - start > budget.seconds:
            break
        grad = grad_params(c, params, batch.inputs, batch.score, batch.oracle)
        params = params + budget.learning_rate * grad
        new = float(circuit_scores(c, params, batch).mean())
        if new > best:
            best_params, best = params.copy(), new
        done = abs(new - score) < budget.tol
        score = new
        if done:
            break
    return best_params, best


def train_parameters(p: Program, q: int, r: int, pairs, budget: Budget = Budget()):
    """Gradient ascent on the mean score from the fixed pi/2 start.

    Returns the best parameters seen and their score.
    """
    batch = _as_batch(pairs)
    return _train_circuit(instantiate(p, q, r), batch, budget)


@dataclass
class RepetitionResult:
    r: int
    params: np.ndarray
    score: float
    circuit: CircuitIR
    pair_scores: np.ndarray


def repetition_search(p: Program, q: int, pairs, budget: Budget = Budget(),
                      max_repetitions: Optional[int] = None) -> RepetitionResult:
    """Increase r from 1 while the score improves, up to the circuit size.

    A program with fixed repetitions, or a task capping repetitions, skips
    the search.
    """
    if q < 1:
        raise FitnessError("q must be >= 1")
    batch = _as_batch(pairs)
    if p.repetitions is not None:
        candidates = [p.repetitions]
    else:
        top = q if max_repetitions is None else min(q, max_repetitions)
        candidates = range(1, max(top, 1) + 1)
    best = None
    for r in candidates:
        c = instantiate(p, q, r)
        params, score = _train_circuit(c, batch, budget)
        if best is not None and score <= best.score + EPS_REPEAT:
            break
        best = RepetitionResult(r, params, score, c, None)
    best.pair_scores = circuit_scores(best.circuit, best.params, batch)
    return best


def evaluate(p: Program, ts: TrainingSet, weights: Weights = Weights(),
             budget: Budget = Budget()) -> FitnessReport:
    if not ts.pairs:
        raise FitnessError("empty training set")
    try:
        results = {q: repetition_search(p, q, ts.batch(q), budget, ts.max_repetitions)
                   for q in ts.sizes}
    except (ValueError, IndexError) as exc:
        return FitnessReport.failure(f"{type(exc).__name__}: {exc}")
    raw = {q: res.score for q, res in results.items()}
    f_raw = min(raw.values())
    gates = sum(len(res.circuit) for res in results.values())
    n_params = sum(res.circuit.param_slots for res in results.values())
    pooled = np.concatenate([res.pair_scores for res in results.values()])
    penalties = {
        "gates": weights.gates * gates,
        "oracle_calls": weights.oracle * max(0, p.oracle_count - 1),
        "params": weights.params * n_params,
        "jsd": weights.jsd * jsd_penalty(pooled),
    }
    return FitnessReport(
        raw_per_q=raw,
        f_raw=f_raw,
        penalties=penalties,
        f_total=f_raw - sum(penalties.values()),
        trained_params={q: res.params.tolist() for q, res in results.items()},
        chosen_r={q: res.r for q, res in results.items()},
        pair_scores={q: res.pair_scores.tolist() for q, res in results.items()},
        gate_count=gates,
        param_count=n_params,
        oracle_calls=p.oracle_count,
    )
