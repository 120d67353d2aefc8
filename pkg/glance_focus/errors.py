"""
Exception hierarchy shared by every glance_focus module.
"""

from typing import Any, Dict, Optional


class GlanceFocusError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(GlanceFocusError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(GlanceFocusError, ValueError):
    """A documented precondition was violated."""


class TargetIndexError(ContractError, IndexError):
    """A class target lies outside the logits' class axis."""


class FormatError(GlanceFocusError, ValueError):
    """A file does not follow its documented format."""

    def __init__(self, message: str, path: Optional[str] = None,
                 offset: Optional[int] = None, line: Optional[int] = None):
        location = []
        if path is not None:
            location.append(str(path))
        if offset is not None:
            location.append(f"byte offset {offset}")
        if line is not None:
            location.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(location)})" if location else message)
        self.path = path
        self.offset = offset
        self.line = line


class CheckpointMismatchError(FormatError):
    """A checkpoint's version or tensor shapes do not match the model being restored."""


class GenerationError(GlanceFocusError, RuntimeError):
    """Synthetic episode generation could not satisfy its constraints."""


class TrainingDivergedError(GlanceFocusError, FloatingPointError):
    """A loss became non-finite; carries the offending component values."""

    def __init__(self, message: str, components: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.components = dict(components or {})
