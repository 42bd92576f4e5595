class SolverError(RuntimeError):
    """Base class for optimizer failures."""


class SolverDegenerateError(SolverError):
    """The normal equations have a null space beyond what the fixed set and priors remove."""
