"""Instantiate motif programs at a concrete qubit count.

Each motif generates hyperedges over the qubits that are currently
available; the motif's unitary is attached to every edge.  Masks remove
qubits from the available list and the list carries over between
repetitions, which is what lets ``QMask("1*")`` telescope through the
rounds of a QFT.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .dsl import Boundary, EdgeOrder, Kind, Motif, Program, Unitary, resolve_pattern


class CompileError(ValueError):
    pass


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    unitary: Unitary
    qubits: tuple[int, ...]
    slot: Optional[int] = None

    @property
    def symbol(self) -> str:
        return self.unitary.symbol


@dataclass
class CircuitIR:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    param_slots: int = 0
    oracle_calls: int = 0

    def __len__(self) -> int:
        return len(self.gates)

    def count(self, unitary: Unitary) -> int:
        return sum(g.unitary is unitary for g in self.gates)

    def to_dict(self) -> dict:
        return {
            "schema": "qmotif.circuit/1",
            "n_qubits": self.n_qubits,
            "param_slots": self.param_slots,
            "oracle_calls": self.oracle_calls,
            "gates": [
                {"symbol": g.symbol, "qubits": list(g.qubits), "param_slot": g.slot}
                for g in self.gates
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitIR":
        gates = [
            Gate(Unitary[g["symbol"]], tuple(g["qubits"]), g["param_slot"]) for g in d["gates"]
        ]
        return cls(d["n_qubits"], gates, d["param_slots"], d["oracle_calls"])


@dataclass
class QubitFrame:
    total: int
    available: list[int]

    @classmethod
    def full(cls, n: int) -> "QubitFrame":
        return cls(n, list(range(n)))

    @property
    def masked(self) -> list[int]:
        avail = set(self.available)
        return [q for q in range(self.total) if q not in avail]


def edges_cycle(m: Motif, frame: QubitFrame) -> list[tuple[int, ...]]:
    a = frame.available
    L = len(a)
    if m.unitary.arity == 1:
        return [(q,) for q in a]
    # two-qubit and variadic gates both get pairwise edges from a cycle
    edges = []
    for i in range(m.offset, L, m.step):
        j = i + m.stride
        if j >= L:
            if m.boundary is Boundary.OPEN:
                continue
            j %= L
        if a[i] != a[j]:
            edges.append((a[i], a[j]))
    return edges


def edges_pivot(m: Motif, frame: QubitFrame) -> list[tuple[int, ...]]:
    a = frame.available
    if not a:
        return []
    pivots = [a[i] for i in resolve_pattern(m.pattern, len(a))]
    if m.unitary.arity == 1:
        return [(p,) for p in pivots]
    chosen = set(pivots)
    rest = [q for q in a if q not in chosen]
    if not rest or not pivots:
        return []
    last = m.edge_order is EdgeOrder.PIVOT_LAST

    def join(head, tail):
        return tuple(head) + tuple(tail) if last else tuple(tail) + tuple(head)

    if m.unitary.variadic:
        if m.merge:
            return [join(rest, pivots)]
        return [join((r,), pivots) for r in rest]
    # fixed arity 2: one edge per (remaining, pivot) pair
    return [join((r,), (p,)) for r in rest for p in pivots]


def apply_mask(m: Motif, frame: QubitFrame) -> QubitFrame:
    if m.kind is Kind.MASK:
        a = frame.available
        if not a:
            return QubitFrame(frame.total, [])
        drop = {a[i] for i in resolve_pattern(m.pattern, len(a))}
        return QubitFrame(frame.total, [q for q in a if q not in drop])
    if m.kind is Kind.UNMASK:
        hidden = frame.masked
        if not hidden:
            return QubitFrame(frame.total, list(frame.available))
        back = [hidden[i] for i in resolve_pattern(m.pattern, len(hidden))]
        return QubitFrame(frame.total, sorted(set(frame.available).union(back)))
    raise CompileError(f"apply_mask got a {m.kind.value} motif")


def instantiate(p: Program, n: int, r: Optional[int] = None) -> CircuitIR:
    """Flatten ``p`` into a gate list on ``n`` qubits with ``r`` repetitions.

    ``r`` defaults to the program's fixed repetition count; learned programs
    must be given one explicitly.
    """
    if n < 1:
        raise CompileError("circuit size must be >= 1")
    if r is None:
        r = p.repetitions
        if r is None:
            raise CompileError("program has learned repetitions; pass r")
    if r < 1:
        raise CompileError("repetitions must be >= 1")
    circ = CircuitIR(n)
    frame = QubitFrame.full(n)
    everyone = tuple(range(n))
    for _ in range(r):
        for m in p.body:
            if m.kind is Kind.ORACLE:
                circ.gates.append(Gate(Unitary.ORACLE, everyone))
                circ.oracle_calls += 1
                continue
            if m.kind in (Kind.MASK, Kind.UNMASK):
                frame = apply_mask(m, frame)
                continue
            edges = edges_cycle(m, frame) if m.kind is Kind.CYCLE else edges_pivot(m, frame)
            shared = None
            for e in edges:
                slot = None
                if m.unitary.param_count:
                    if not m.share_weights:
                        slot = circ.param_slots
                        circ.param_slots += 1
                    else:
                        if shared is None:
                            shared = circ.param_slots
                            circ.param_slots += 1
                        slot = shared
                circ.gates.append(Gate(m.unitary, e, slot))
    return circ


# ---------------------------------------------------------------------------
# OpenQASM 2.0

QASM_HEADER = 'OPENQASM 2.0;\ninclude "qelib1.inc";\n'


def format_angle(theta: float) -> str:
    frac = Fraction(theta / math.pi).limit_denominator(1024)
    if frac and abs(float(frac) * math.pi - theta) < 1e-12:
        num, den = frac.numerator, frac.denominator
        head = "pi" if num == 1 else "-pi" if num == -1 else f"{num}*pi"
        return head if den == 1 else f"{head}/{den}"
    if theta == 0:
        return "0"
    return repr(float(theta))


def _mcphase_lines(qubits: Sequence[int], lam: float) -> list[str]:
    # exp(i*lam*x1*...*xm) as a product of parity phases over every
    # non-empty subset; uses x1*...*xm = 2^(1-m) sum_S (-1)^(|S|-1) parity_S
    m = len(qubits)
    out = []
    for size in range(1, m + 1):
        angle = lam * (-1) ** (size - 1) / 2 ** (m - 1)
        for subset in itertools.combinations(qubits, size):
            t = subset[-1]
            ladder = [f"cx q[{s}],q[{t}];" for s in subset[:-1]]
            out += ladder + [f"u1({format_angle(angle)}) q[{t}];"] + ladder[::-1]
    return out


def _mcx_lines(qubits: Sequence[int]) -> list[str]:
    *controls, target = qubits
    if not controls:
        return [f"x q[{target}];"]
    if len(controls) == 1:
        return [f"cx q[{controls[0]}],q[{target}];"]
    if len(controls) == 2:
        return [f"ccx q[{controls[0]}],q[{controls[1]}],q[{target}];"]
    return [f"h q[{target}];", *_mcphase_lines(qubits, math.pi), f"h q[{target}];"]


def export_qasm(c: CircuitIR, params: Sequence[float] = ()) -> str:
    if len(params) != c.param_slots:
        raise ExportError(f"expected {c.param_slots} parameters, got {len(params)}")
    lines = [QASM_HEADER + f"qreg q[{c.n_qubits}];"]
    for g in c.gates:
        u = g.unitary
        if u is Unitary.ORACLE:
            raise ExportError("circuit still contains an unlowered oracle call")
        if u in (Unitary.H, Unitary.X, Unitary.Z):
            lines.append(f"{u.symbol.lower()} q[{g.qubits[0]}];")
        elif u is Unitary.CP:
            a, b = g.qubits
            lines.append(f"cu1({format_angle(params[g.slot])}) q[{a}],q[{b}];")
        elif u is Unitary.MCX:
            lines.extend(_mcx_lines(g.qubits))
    return "\n".join(lines) + "\n"


def draw(c: CircuitIR, params: Sequence[float] = ()) -> str:
    """ASCII rendering: one row per qubit, one column per gate."""
    rows = [[f"q{q}: "] for q in range(c.n_qubits)]
    width = max(len(r[0]) for r in rows)
    for r in rows:
        r[0] = r[0].rjust(width)
    for g in c.gates:
        if g.unitary is Unitary.ORACLE:
            labels = {q: "O" for q in g.qubits}
        elif g.unitary is Unitary.CP:
            lab = "P" if not params else f"P({params[g.slot]:.3f})"
            labels = {g.qubits[0]: "@", g.qubits[1]: lab}
        elif g.unitary is Unitary.MCX:
            labels = {q: "@" for q in g.qubits[:-1]}
            labels[g.qubits[-1]] = "X"
        else:
            labels = {g.qubits[0]: g.symbol}
        lo, hi = min(g.qubits), max(g.qubits)
        w = max(len(s) for s in labels.values())
        for q, row in enumerate(rows):
            if q in labels:
                cell = labels[q].center(w, "-")
            elif lo < q < hi:
                cell = "|".center(w, "-")
            else:
                cell = "-" * w
            row.append("-" + cell + "-")
    return "\n".join("".join(r) for r in rows)
