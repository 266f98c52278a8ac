"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, I/O and format
errors -> 3, numeric/training failures -> 4.
"""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class DegenerateNormError(ValueError):
    """A vector that must be normalized has (near-)zero norm."""


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


class DataError(ValueError):
    """Malformed input data (e.g. token id outside the vocabulary)."""


class GeometryError(ValueError):
    """Invalid region geometry (e.g. zero-area box)."""


class DomainError(ValueError):
    """Value outside the mathematical domain of an operation."""


class FormatError(ValueError):
    """Malformed binary container. Carries the byte offset of the failed read."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TrainingError(RuntimeError):
    """Non-finite gradients or other numeric failure during optimization."""
