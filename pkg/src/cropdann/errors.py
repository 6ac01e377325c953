"""Exception types shared across the package."""


class CropDannError(Exception):
    """Base class for all package errors."""


class ShapeError(CropDannError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


class NumericDomainError(CropDannError):
    """An operand lies outside the mathematical domain of an operation."""


class NumericError(CropDannError):
    """A computation produced a non-finite value."""


class ContractError(CropDannError):
    """A caller violated a documented precondition."""


class CsvFormatError(CropDannError):
    """A season CSV file is malformed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(CropDannError):
    """A checkpoint file cannot be loaded or does not match the model."""
