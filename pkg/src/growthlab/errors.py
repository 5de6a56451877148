"""
Exception hierarchy.

Every failure raised by growthlab derives from GrowthLabError so the CLI can
map it to an exit code: ConfigError -> 1, SolverError -> 2,
AcceptanceError -> 3.
"""


class GrowthLabError(Exception):
    """Base class for all growthlab errors."""

    exit_code = 2


class ConfigError(GrowthLabError):
    """Invalid configuration or scenario file."""

    exit_code = 1

    def __init__(self, message: str, field: str = None, line: int = None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class GridError(GrowthLabError):
    """Grid mismatch, out-of-bounds geometry or misaligned boundary data."""


class DomainError(GridError):
    """A domain cannot be built or queried as requested."""


class HypothesisError(GrowthLabError):
    """Inputs violate the hypothesis of the result being exercised."""


class SolverError(GrowthLabError):
    """A numerical solve failed."""


class ConvergenceError(SolverError):
    """Iteration limit reached or residual above tolerance."""


class SingularityError(SolverError):
    """Source point too close to the boundary for singularity splitting."""


class SeriesDivergenceError(SolverError):
    """Perturbation series outside its operational convergence guard."""


class CFLError(SolverError):
    """Time step exceeds the stability bound."""


class MassConservationError(SolverError):
    """Balayage lost or gained mass beyond tolerance (box too small)."""


class AcceptanceError(GrowthLabError):
    """One or more acceptance checks failed."""

    exit_code = 3
