"""Evolutionary discovery of scalable quantum algorithms from placement motifs."""
from .compiler import CircuitIR, Gate, export_qasm, instantiate
from .dsl import Program, Unitary, cycle, mask, oracle, parse_program, pivot, print_program, unmask
from .evolve import ConfigurationSpace, HyperParams, Search, load_space, run_search
from .fitness import Budget, FitnessReport, Weights, evaluate
from .sim import run_circuit
from .tasks import get_task, reference_programs

__version__ = "0.1.0"

__all__ = [
    "Budget", "CircuitIR", "ConfigurationSpace", "FitnessReport", "Gate", "HyperParams",
    "Program", "Search", "Unitary", "Weights", "cycle", "evaluate", "export_qasm", "get_task",
    "instantiate", "load_space", "mask", "oracle", "parse_program", "pivot", "print_program",
    "reference_programs", "run_circuit", "run_search", "unmask",
]
