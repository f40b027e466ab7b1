"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 2 (argparse),
everything below exits 1.
"""


class SulcalError(Exception):
    """Base class for all package errors."""


class StructuralError(SulcalError):
    """A skeleton crop violates a structural invariant (overlap, out of bounds, ...)."""


class FormatError(SulcalError):
    """An on-disk artifact (crop file, manifest, checkpoint) cannot be parsed."""


class ContractError(SulcalError):
    """An operation was called with arguments violating its precondition."""


class GenerationError(SulcalError):
    """The synthetic generator cannot fit the requested pattern."""


class TrainingDivergedError(SulcalError):
    """Training produced a non-finite loss."""
