"""Built-in exact/approximate solver pairs."""
from .base import SolverPair, realization_rng, sample_pi_x
from .cohesive import (CohesiveConfig, CohesiveSolverPair, FieldRealization, approx_cohesive_solve,
                       element_energy, element_energy_closed_form, exact_cohesive_solve,
                       integrate_path, sample_fields)
from .synthetic import SyntheticSolverPair, synthetic_pair

SOLVERS = {"cohesive": CohesiveSolverPair, "synthetic": SyntheticSolverPair}


def make_solver(name: str, **options) -> SolverPair:
    """Build a registered solver pair by name."""
    if name == "cohesive":
        return CohesiveSolverPair(CohesiveConfig(**options))
    if name == "synthetic":
        return SyntheticSolverPair(**options)
    raise ValueError(f"unknown solver {name!r}; choose from {sorted(SOLVERS)}")


__all__ = ["SolverPair", "realization_rng", "sample_pi_x", "CohesiveConfig", "CohesiveSolverPair",
           "FieldRealization", "approx_cohesive_solve", "element_energy",
           "element_energy_closed_form", "exact_cohesive_solve", "integrate_path", "sample_fields",
           "SyntheticSolverPair", "synthetic_pair", "make_solver", "SOLVERS"]
