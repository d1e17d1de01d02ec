"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class HSMError(Exception):
    """Base class for all errors raised by hiersoftmax."""


# taxonomy
class TaxonomyError(HSMError, ValueError):
    pass


class EmptyInput(TaxonomyError):
    pass


class ChildHasTwoParents(TaxonomyError):
    def __init__(self, node: str):
        super().__init__(f"node {node!r} has more than one parent")
        self.node = node


class CycleDetected(TaxonomyError):
    def __init__(self, node: str):
        super().__init__(f"cycle through node {node!r}")
        self.node = node


class MultipleRoots(TaxonomyError):
    def __init__(self, nodes: list[str]):
        super().__init__(f"taxonomy has several roots: {', '.join(map(repr, nodes))}")
        self.node = nodes[1]
        self.nodes = nodes


class NotALeaf(HSMError, ValueError):
    pass


class NotAParent(HSMError, ValueError):
    pass


# numerics
class DimensionMismatch(HSMError, ValueError):
    pass


class ShapeMismatch(HSMError, ValueError):
    pass


class InvalidStep(HSMError, ValueError):
    pass


# encoder
class EmptySequence(HSMError, ValueError):
    pass


class InvalidDropoutRate(HSMError, ValueError):
    pass


class StaleCache(HSMError, RuntimeError):
    """Raised when backward() is given activations cached under older parameters."""


# data / training
class UnknownLabel(HSMError, ValueError):
    def __init__(self, name: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"label {name!r} is not a taxonomy leaf{where}")
        self.name = name
        self.line = line


class MalformedLine(HSMError, ValueError):
    def __init__(self, line: int, reason: str = "malformed line", path: str | None = None):
        src = f"{path}:" if path else "line "
        super().__init__(f"{src}{line}: {reason}")
        self.line = line


class MissingFile(HSMError, FileNotFoundError):
    pass


class EmptyDataset(HSMError, ValueError):
    pass


class TooFewExamples(HSMError, ValueError):
    pass


class InvalidRate(HSMError, ValueError):
    pass


# metrics
class LengthMismatch(HSMError, ValueError):
    pass


class UnknownLeaf(HSMError, ValueError):
    pass


class ConfigError(HSMError, ValueError):
    pass
