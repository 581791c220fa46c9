"""Exception types shared across the package.

The CLI maps these onto exit codes: contract violations (bad inputs,
mismatched grids, malformed files) exit with 3, numerical failures
(singular systems, rank deficiency) with 4.
"""


class ContractError(ValueError):
    """Input data or arguments violate a documented precondition."""


class NumericalError(RuntimeError):
    """A numerical routine failed (singularity, rank deficiency, divergence)."""
