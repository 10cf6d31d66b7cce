"""Exception hierarchy shared across the package."""

from __future__ import annotations


class GindError(Exception):
    """Base class for all errors raised by gind."""


class InputError(GindError, ValueError):
    """Malformed or out-of-range user input."""


class EmptyGraphError(InputError):
    pass


class ShapeError(GindError, ValueError):
    pass


class ConfigError(GindError, ValueError):
    """A configuration value violates its documented invariant."""


class NumericalError(GindError, ArithmeticError):
    """Non-finite values appeared during a computation.

    ``context`` carries whatever diagnostic state the raiser had on hand
    (iteration index, residual history, ...).
    """

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context


class DivergenceError(NumericalError):
    pass


class DatasetError(GindError):
    """Base class for dataset loading and validation failures."""


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class ParseError(DatasetError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class RaggedRowsError(ParseError):
    pass


class LabelRangeError(DatasetError):
    pass


class MaskOverlapError(DatasetError):
    def __init__(self, node: int, splits: tuple[str, ...]):
        super().__init__(f"node {node} appears in more than one split: {', '.join(splits)}")
        self.node = node
        self.splits = splits
