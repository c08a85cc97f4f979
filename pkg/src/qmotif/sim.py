"""Dense statevector simulation.

Qubit 0 is the most significant bit of the basis index.  Every function
accepts either a single state of shape ``(2**n,)`` or a batch of shape
``(P, 2**n)``; batches let one circuit run over all training inputs at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .compiler import CircuitIR, Gate
from .dsl import Unitary

_S2 = 1 / math.sqrt(2)
SHIFT = math.pi / 2


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class OracleImpl:
    """Task-supplied unitary; ``action`` maps ``(..., 2**n)`` arrays to arrays of the same shape."""

    tag: str
    instance: Any
    action: Callable[[np.ndarray], np.ndarray]

    def __call__(self, states: np.ndarray) -> np.ndarray:
        return self.action(states)


def n_qubits_of(state: np.ndarray) -> int:
    dim = state.shape[-1]
    n = dim.bit_length() - 1
    if dim != 1 << n:
        raise SimulationError(f"state dimension {dim} is not a power of two")
    return n


def zero_state(n: int) -> np.ndarray:
    return basis_state(n, 0)


def basis_state(n: int, index: int) -> np.ndarray:
    if not 0 <= index < 1 << n:
        raise SimulationError(f"basis index {index} out of range for {n} qubits")
    psi = np.zeros(1 << n, dtype=complex)
    psi[index] = 1.0
    return psi


def uniform_state(n: int) -> np.ndarray:
    return np.full(1 << n, (1 << n) ** -0.5, dtype=complex)


def _index(batch_dims: int, n: int, assign: dict[int, int]) -> tuple:
    idx = [slice(None)] * (batch_dims + n)
    for q, v in assign.items():
        idx[batch_dims + q] = v
    return tuple(idx)


def _apply_inplace(t: np.ndarray, b: int, n: int, u: Unitary, qubits: Sequence[int], angle):
    if u is Unitary.H:
        q = qubits[0]
        i0, i1 = _index(b, n, {q: 0}), _index(b, n, {q: 1})
        new0 = (t[i0] + t[i1]) * _S2
        t[i1] = (t[i0] - t[i1]) * _S2
        t[i0] = new0
    elif u is Unitary.X:
        q = qubits[0]
        i0, i1 = _index(b, n, {q: 0}), _index(b, n, {q: 1})
        tmp = t[i0].copy()
        t[i0] = t[i1]
        t[i1] = tmp
    elif u is Unitary.Z:
        t[_index(b, n, {qubits[0]: 1})] *= -1
    elif u is Unitary.CP:
        if angle is None:
            raise SimulationError("CP gate needs an angle")
        a, c = qubits
        t[_index(b, n, {a: 1, c: 1})] *= np.exp(1j * angle)
    elif u is Unitary.MCX:
        *controls, target = qubits
        on = {c: 1 for c in controls}
        i0 = _index(b, n, {**on, target: 0})
        i1 = _index(b, n, {**on, target: 1})
        tmp = t[i0].copy()
        t[i0] = t[i1]
        t[i1] = tmp
    else:
        raise SimulationError(f"cannot apply {u.symbol} directly")


def _check_qubits(n: int, qubits: Sequence[int]):
    if len(set(qubits)) != len(qubits):
        raise SimulationError(f"repeated qubit in {tuple(qubits)}")
    for q in qubits:
        if not 0 <= q < n:
            raise SimulationError(f"qubit {q} out of range for {n} qubits")


def apply_gate(state: np.ndarray, unitary: Unitary, qubits: Sequence[int],
               angle: Optional[float] = None) -> np.ndarray:
    n = n_qubits_of(state)
    _check_qubits(n, qubits)
    if unitary.arity is not None and len(qubits) != unitary.arity:
        raise SimulationError(f"{unitary.symbol} acts on {unitary.arity} qubits")
    b = state.ndim - 1
    out = np.array(state, dtype=complex, copy=True)
    t = out.reshape(out.shape[:-1] + (2,) * n)
    _apply_inplace(t, b, n, unitary, qubits, angle)
    return out


def _run_gates(out: np.ndarray, gates: Sequence[Gate], params, oracle, n: int,
               shift: Optional[tuple[int, float]] = None) -> np.ndarray:
    b = out.ndim - 1
    shape = out.shape[:-1] + (2,) * n
    for k, g in enumerate(gates):
        if g.unitary is Unitary.ORACLE:
            if oracle is None:
                raise SimulationError("circuit calls an oracle but none was supplied")
            out = np.ascontiguousarray(oracle(out), dtype=complex)
            continue
        angle = None
        if g.slot is not None:
            angle = params[g.slot]
            if shift is not None and shift[0] == k:
                angle = angle + shift[1]
        _apply_inplace(out.reshape(shape), b, n, g.unitary, g.qubits, angle)
    return out


def run_circuit(c: CircuitIR, params: Sequence[float], inputs: np.ndarray,
                oracle: Optional[Callable] = None) -> np.ndarray:
    """Apply the gates of ``c`` to ``inputs``; ORACLE gates dispatch to ``oracle``."""
    if len(params) != c.param_slots:
        raise SimulationError(f"expected {c.param_slots} parameters, got {len(params)}")
    if c.oracle_calls and oracle is None:
        raise SimulationError("circuit calls an oracle but none was supplied")
    if inputs.shape[-1] != 1 << c.n_qubits:
        raise SimulationError("input dimension does not match circuit size")
    out = np.array(inputs, dtype=complex, copy=True)
    return _run_gates(out, c.gates, params, oracle, c.n_qubits)


def inverse_circuit(c: CircuitIR) -> CircuitIR:
    """Gates reversed with conjugated angles; only valid without oracles."""
    if c.oracle_calls:
        raise SimulationError("cannot invert a circuit with oracle calls")
    # H, X, Z, MCX are self-inverse; CP(t)^-1 = CP(-t) handled by negating params
    return CircuitIR(c.n_qubits, list(reversed(c.gates)), c.param_slots, 0)


def fidelity(a: np.ndarray, b: np.ndarray):
    """|<a|b>|^2, row-wise for batches."""
    if a.shape[-1] != b.shape[-1]:
        raise SimulationError("state dimensions differ")
    return np.abs(np.sum(np.conj(a) * b, axis=-1)) ** 2


def grad_params(c: CircuitIR, params: Sequence[float], inputs: np.ndarray,
                score: Callable[[np.ndarray], float],
                oracle: Optional[Callable] = None) -> np.ndarray:
    """Parameter-shift gradient of ``score(run_circuit(...))``.

    ``score`` must be an affine function of projector expectations (state
    fidelities or basis-state overlaps).  CP has generator |11><11| with
    eigenvalues {0, 1}, so a shift of pi/2 on each occurrence is exact.
    """
    params = np.asarray(params, dtype=float)
    grad = np.zeros(c.param_slots)
    if c.param_slots == 0:
        return grad
    n = c.n_qubits
    fwd = np.array(inputs, dtype=complex, copy=True)
    for k, g in enumerate(c.gates):
        if g.slot is not None:
            vals = []
            for sign in (1, -1):
                branch = _run_gates(fwd.copy(), c.gates[k:], params, oracle, n, shift=(0, sign * SHIFT))
                vals.append(score(branch))
            grad[g.slot] += (vals[0] - vals[1]) / 2
        fwd = _run_gates(fwd, c.gates[k:k + 1], params, oracle, n)
    return grad
