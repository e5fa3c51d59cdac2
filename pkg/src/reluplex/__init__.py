"""Reluplex: an SMT-style decision procedure for feed-forward ReLU networks."""
from reluplex.config import RunConfig, SolverConfig
from reluplex.engine import Reluplex, RepairAction, SolveResult, SolveStats, Verdict, solve_atoms
from reluplex.relu import Phase, ReluPair
from reluplex.simplex import LinearAtom, Relation, SimplexState, init_configuration

__all__ = [
    "LinearAtom", "Phase", "Relation", "Reluplex", "ReluPair", "RepairAction", "RunConfig",
    "SimplexState", "SolveResult", "SolveStats", "SolverConfig", "Verdict", "init_configuration",
    "solve_atoms",
]
__version__ = "0.1.0"
