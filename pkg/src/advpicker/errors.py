"""Exception types shared across the package."""


class FormatError(ValueError):
    """Malformed corpus file. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AlignmentError(ValueError):
    """Sequences that must be aligned (by length or by id) are not."""


class ShapeError(ValueError):
    """Tensor shapes incompatible with the requested operation."""


class NonScalarLoss(ValueError):
    """backward() called on a tensor that is not a scalar."""


class MissingGrad(RuntimeError):
    """An optimizer step was requested for a parameter with no gradient."""


class InvalidBIO(ValueError):
    """A tag sequence violates the BIO transition rules."""


class EmptyInput(ValueError):
    """An operation received an empty collection it cannot act on."""


class EmptySubset(EmptyInput):
    """Distillation was asked to train on an empty selection."""


class LabelLeakError(ValueError):
    """Gold target labels reached a code path that must never see them."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""
