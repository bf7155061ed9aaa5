"""
Custom exceptions for better error handling.
"""
from typing import Optional, Sequence


class BregmanRomError(Exception):
    """Base exception for sparse autoencoder errors."""
    pass


class ConfigurationError(BregmanRomError, ValueError):
    """Configuration or command-line argument errors."""
    pass


class ShapeMismatchError(BregmanRomError, ValueError):
    """Operand shapes are incompatible."""
    def __init__(self, message: str, expected: Optional[Sequence[int]] = None, actual: Optional[Sequence[int]] = None):
        self.expected = tuple(expected) if expected is not None else None
        self.actual = tuple(actual) if actual is not None else None
        if expected is not None or actual is not None:
            message = f"{message} (expected {self.expected}, got {self.actual})"
        super().__init__(message)


class NonFiniteError(BregmanRomError, ArithmeticError):
    """A NaN or Inf value appeared in a matrix, loss or update."""
    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        self.epoch = epoch
        self.batch = batch
        if epoch is not None or batch is not None:
            message = f"{message} (epoch={epoch}, batch={batch})"
        super().__init__(message)


class TrainingDivergedError(NonFiniteError):
    """Training produced a non-finite loss; carries the metrics recorded so far."""
    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None,
                 metrics: Optional[list] = None, model=None):
        self.metrics = list(metrics or [])
        self.model = model
        super().__init__(message, epoch=epoch, batch=batch)


class StabilityError(BregmanRomError, ValueError):
    """Explicit time stepping would be unstable."""
    def __init__(self, message: str, mu: Optional[float] = None, dt: Optional[float] = None, dx: Optional[float] = None):
        self.mu = mu
        self.dt = dt
        self.dx = dx
        super().__init__(f"{message} (mu={mu}, dt={dt}, dx={dx})")


class CFLViolationError(StabilityError):
    """Two-dimensional diffusion CFL condition violated."""
    pass


class FileFormatError(BregmanRomError):
    """Base class for artifact parse errors."""
    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None,
                 field: Optional[str] = None):
        self.path = path
        self.offset = offset
        self.field = field
        details = []
        if path is not None:
            details.append(f"path={path}")
        if offset is not None:
            details.append(f"offset={offset}")
        if field is not None:
            details.append(f"field={field}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class SnapshotFormatError(FileFormatError):
    """Snapshot (SNP1) file is corrupt or truncated."""
    pass


class ModelFormatError(FileFormatError):
    """Model JSON file is corrupt or inconsistent."""
    pass
