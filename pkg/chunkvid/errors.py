"""
Chunkvid Error Classes.

Custom exceptions with actionable error messages that say what went
wrong and, where there is one, how to fix it. Every error carries the
process exit code the CLI uses when it escapes a command.
"""

from typing import Optional


class ChunkvidError(Exception):
    """Base class for all chunkvid errors."""

    exit_code = 1

    def __init__(self, message: str, suggestion: Optional[str] = None):
        self.message = message
        self.suggestion = suggestion
        super().__init__(self.format())

    def format(self) -> str:
        """Format error with suggestion."""
        lines = [f"Error: {self.message}"]

        if self.suggestion:
            lines.append("")
            lines.append(f"Suggestion: {self.suggestion}")

        return "\n".join(lines)


# =============================================================================
# Shape and Range Errors
# =============================================================================

class DimensionError(ChunkvidError, ValueError):
    """Operand shapes are incompatible."""

    exit_code = 3

    def __init__(self, op: str, shape_a: tuple, shape_b: Optional[tuple] = None):
        if shape_b is None:
            message = f"{op}: unsupported shape {tuple(shape_a)}"
        else:
            message = f"{op}: shape mismatch between {tuple(shape_a)} and {tuple(shape_b)}"
        self.shapes = (tuple(shape_a), None if shape_b is None else tuple(shape_b))
        super().__init__(message)


class RangeError(ChunkvidError, ValueError):
    """An index or parameter lies outside its valid range."""

    exit_code = 2


class ConfigError(ChunkvidError, ValueError):
    """Configuration is invalid or contains unknown keys."""

    exit_code = 2

    def __init__(self, message: str, section: Optional[str] = None):
        where = f"[{section}] " if section else ""
        super().__init__(
            message=f"{where}{message}",
            suggestion="Check the key names and ranges against `chunkvid help`.",
        )


# =============================================================================
# Numeric Errors
# =============================================================================

class NumericError(ChunkvidError, ArithmeticError):
    """A computation produced or received a non-finite or degenerate value."""

    exit_code = 3


class FullyMaskedRowError(NumericError):
    """Every position of an attention row is masked."""

    def __init__(self):
        super().__init__("fully masked attention row")


class ZeroNormError(NumericError):
    """Cosine similarity requested for a zero vector."""

    def __init__(self):
        super().__init__(
            "zero-norm embedding",
            suggestion="Prompts must contain at least one token the embedder can hash.",
        )


class DegenerateImportanceError(NumericError):
    """Importance vector sums to zero, no coverage count exists."""

    def __init__(self):
        super().__init__("degenerate importance")


class ReferenceScoreError(NumericError):
    """First-segment score too close to zero to divide by."""

    def __init__(self, q1: float, guard: float):
        super().__init__(
            f"reference score near zero (Q_1={q1:.3g} <= {guard:.3g})",
            suggestion="The metric is flat at zero in the first segment; drift is undefined.",
        )


# =============================================================================
# I/O Errors
# =============================================================================

class FormatError(ChunkvidError):
    """A binary file has a bad magic, version or truncated payload."""

    exit_code = 4

    def __init__(self, path: str, detail: str):
        self.path = path
        super().__init__(f"{path}: {detail}")


class VideoReadError(ChunkvidError):
    """A frame file could not be decoded."""

    exit_code = 4

    def __init__(self, path: str, detail: Optional[str] = None):
        self.path = path
        message = f"could not read frame file {path}"
        if detail:
            message += f": {detail}"
        super().__init__(
            message,
            suggestion="Frames must be binary PGM (P5) or PPM (P6) files with maxval 255.",
        )
