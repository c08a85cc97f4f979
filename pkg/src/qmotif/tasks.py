"""Training sets, oracles and reference programs for the benchmark tasks."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .compiler import CircuitIR, Gate
from .dsl import Program, Unitary, cycle, mask, oracle, pivot
from .fitness import TrainingPair, TrainingSet
from .sim import OracleImpl, basis_state, uniform_state, zero_state


class TaskError(ValueError):
    pass


# ---------------------------------------------------------------------------
# QFT


def bit_reverse(k: int, q: int) -> int:
    return int(format(k, f"0{q}b")[::-1], 2) if q else 0


def dft_matrix(q: int) -> np.ndarray:
    """Unitary DFT, F[k, x] = exp(2 pi i x k / N) / sqrt(N)."""
    N = 1 << q
    k = np.arange(N)
    return np.exp(2j * np.pi * np.outer(k, k) / N) / math.sqrt(N)


def qft_output_matrix(q: int) -> np.ndarray:
    """DFT followed by reversal of the qubit order.

    The swap-free QFT circuit leaves Fourier coefficient ``k`` on basis state
    ``bit_reverse(k)`` (qubit 0 is the most significant bit), so the targets
    use this matrix rather than the bare DFT.
    """
    N = 1 << q
    perm = [bit_reverse(k, q) for k in range(N)]
    out = np.zeros((N, N), dtype=complex)
    out[perm, :] = dft_matrix(q)
    return out


def build_qft(q: int) -> list[TrainingPair]:
    if q < 1:
        raise TaskError("QFT needs q >= 1")
    U = qft_output_matrix(q)
    pairs = [TrainingPair(q, basis_state(q, x), target=U[:, x].copy()) for x in range(1 << q)]
    pairs.append(TrainingPair(q, uniform_state(q), target=U @ uniform_state(q)))
    return pairs


# ---------------------------------------------------------------------------
# Deutsch-Jozsa: q-1 input qubits plus one ancilla (the last qubit)


def balanced_functions(m: int) -> list[tuple[int, ...]]:
    """Truth tables of every balanced f: {0,1}^m -> {0,1}."""
    size = 1 << m
    tables = []
    for ones in itertools.combinations(range(size), size // 2):
        table = [0] * size
        for x in ones:
            table[x] = 1
        tables.append(tuple(table))
    return tables


def dj_permutation(table) -> np.ndarray:
    """Basis permutation of |x>|a> -> |x>|a xor f(x)>."""
    idx = np.arange(2 * len(table))
    return idx ^ np.asarray(table)[idx >> 1]


def dj_oracle(q: int, table) -> OracleImpl:
    if len(table) != 1 << (q - 1):
        raise TaskError("truth table size does not match q")
    perm = dj_permutation(table)
    return OracleImpl("deutsch_jozsa", tuple(table), lambda s: s[..., perm])


def dj_batch(q: int, tables: list) -> OracleImpl:
    perms = np.stack([dj_permutation(t) for t in tables])
    return OracleImpl("deutsch_jozsa", tuple(map(tuple, tables)),
                      lambda s: np.take_along_axis(s, perms, axis=-1))


def build_dj(q: int) -> list[TrainingPair]:
    if q < 2:
        raise TaskError("Deutsch-Jozsa needs q >= 2 (inputs plus ancilla)")
    m = q - 1
    constant = (0,) * (1 << m)
    pairs = []
    for table in balanced_functions(m):
        pairs.append(TrainingPair(q, zero_state(q), target_overlap=0, oracle_instance=table))
        pairs.append(TrainingPair(q, zero_state(q), target_overlap=1, oracle_instance=constant))
    return pairs


# ---------------------------------------------------------------------------
# Grover


def grover_oracle(q: int, marked: int) -> OracleImpl:
    signs = np.ones(1 << q)
    signs[marked] = -1
    return OracleImpl("grover", marked, lambda s: s * signs)


def grover_batch(q: int, marks: list) -> OracleImpl:
    signs = np.ones((len(marks), 1 << q))
    signs[np.arange(len(marks)), marks] = -1
    return OracleImpl("grover", tuple(marks), lambda s: s * signs)


def build_grover(q: int) -> list[TrainingPair]:
    if q < 2:
        raise TaskError("Grover needs q >= 2")
    psi = uniform_state(q)
    return [TrainingPair(q, psi, target=basis_state(q, m), oracle_instance=m) for m in range(1 << q)]


def grover_success(q: int, r: int) -> float:
    """Probability of the marked state after ``r`` ideal Grover iterations."""
    theta = math.asin(2 ** (-q / 2))
    return math.sin((2 * r + 1) * theta) ** 2


# ---------------------------------------------------------------------------
# oracle lowering to concrete gates


def _flip_zeros(bits: int, qubits: list[int]) -> list[Gate]:
    n = len(qubits)
    return [Gate(Unitary.X, (q,)) for i, q in enumerate(qubits) if not (bits >> (n - 1 - i)) & 1]


def lower_grover(q: int, marked: int) -> list[Gate]:
    qubits = list(range(q))
    flips = _flip_zeros(marked, qubits)
    last = Gate(Unitary.H, (q - 1,))
    return flips + [last, Gate(Unitary.MCX, tuple(qubits)), last] + flips


def lower_dj(q: int, table) -> list[Gate]:
    inputs = list(range(q - 1))
    gates = []
    for x, fx in enumerate(table):
        if fx:
            flips = _flip_zeros(x, inputs)
            gates += flips + [Gate(Unitary.MCX, tuple(inputs) + (q - 1,))] + flips
    return gates


def lower_oracles(c: CircuitIR, lowering: Callable[[int, object], list[Gate]], instance) -> CircuitIR:
    """Replace every ORACLE gate with the gates realising one oracle instance."""
    gates = []
    for g in c.gates:
        if g.unitary is Unitary.ORACLE:
            gates.extend(lowering(c.n_qubits, instance))
        else:
            gates.append(g)
    return CircuitIR(c.n_qubits, gates, c.param_slots, 0)


# ---------------------------------------------------------------------------
# task registry


@dataclass
class TaskSpec:
    name: str
    sizes: tuple[int, ...]
    pair_builder: Callable[[int], list[TrainingPair]]
    oracle_builder: Optional[Callable[[int, object], OracleImpl]] = None
    oracle_batcher: Optional[Callable[[int, list], OracleImpl]] = None
    oracle_lowering: Optional[Callable[[int, object], list[Gate]]] = None
    max_repetitions: Optional[int] = None  # None: up to the circuit size
    stop_threshold: float = 0.99
    family: str = ""
    _ts: Optional[TrainingSet] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.sizes:
            raise TaskError("task needs at least one circuit size")
        self.sizes = tuple(sorted(self.sizes))

    @property
    def uses_oracle(self) -> bool:
        return self.oracle_builder is not None

    def training_set(self) -> TrainingSet:
        if self._ts is None:
            self._ts = TrainingSet({q: self.pair_builder(q) for q in self.sizes},
                                   self.oracle_batcher, self.max_repetitions)
        return self._ts


FAMILIES = {
    "qft": dict(pair_builder=build_qft, sizes=(2, 3, 4), stop_threshold=0.99),
    "deutsch_jozsa": dict(
        pair_builder=build_dj, sizes=(2, 3, 4), oracle_builder=dj_oracle,
        oracle_batcher=dj_batch, oracle_lowering=lower_dj, max_repetitions=1,
        stop_threshold=0.99,
    ),
    "grover": dict(
        pair_builder=build_grover, sizes=(3, 4, 5), oracle_builder=grover_oracle,
        oracle_batcher=grover_batch, oracle_lowering=lower_grover, stop_threshold=0.9,
    ),
}

ALIASES = {"dj": "deutsch_jozsa", "deutsch-jozsa": "deutsch_jozsa"}


def get_task(name: str, /, **overrides) -> TaskSpec:
    family = ALIASES.get(name, name)
    if family not in FAMILIES:
        raise TaskError(f"unknown task {name!r}; known: {', '.join(FAMILIES)}")
    kw = dict(FAMILIES[family])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return TaskSpec(name=kw.pop("name", family), family=family, **kw)


def task_from_config(cfg: dict) -> TaskSpec:
    """Build a task from a mapping with ``name``, ``builder``, ``sizes``, ``threshold``."""
    if "builder" not in cfg and "name" not in cfg:
        raise TaskError("task config needs a name or a builder")
    family = cfg.get("builder", cfg.get("name"))
    sizes = cfg.get("sizes") or cfg.get("Q")
    return get_task(
        family,
        name=cfg.get("name", family),
        sizes=tuple(sizes) if sizes else None,
        stop_threshold=cfg.get("threshold"),
        max_repetitions=cfg.get("max_repetitions"),
    )


def reference_programs() -> dict[str, Program]:
    H, X, Z, CP, MCX = Unitary.H, Unitary.X, Unitary.Z, Unitary.CP, Unitary.MCX
    return {
        "qft": Program((pivot(H, "1*"), pivot(CP, "1*"), mask("1*"))),
        "deutsch_jozsa": Program((
            cycle(H), pivot(Z, "*1"), oracle(), pivot(Z, "*1"), cycle(H),
        )),
        "grover": Program((
            oracle(), cycle(H), cycle(X), pivot(H, "*1"), pivot(MCX, "*1"),
            pivot(H, "*1"), cycle(X), cycle(H),
        )),
    }


def qft_angles(c: CircuitIR) -> list[float]:
    """Textbook angles for a swap-free QFT circuit: pi / 2^(control - target)."""
    params = [0.0] * c.param_slots
    for g in c.gates:
        if g.unitary is Unitary.CP:
            a, b = g.qubits
            params[g.slot] = math.pi / 2 ** abs(a - b)
    return params
