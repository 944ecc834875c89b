"""Exception types raised across the toolkit."""


class StructIsoError(Exception):
    """Base class for all errors raised by structiso."""


class ParseError(StructIsoError):
    """A CSV or descriptor file could not be parsed.

    ``row`` and ``column`` are 1-based positions in the source file when known.
    """

    def __init__(self, message, path=None, row=None, column=None):
        self.path = path
        self.row = row
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class NonFiniteInput(StructIsoError):
    pass


class ConstantColumn(StructIsoError):
    def __init__(self, index, name=None):
        self.index = index
        self.name = name
        label = f"{index} ({name})" if name is not None else str(index)
        super().__init__(f"column {label} has (near) zero variance")


class DimensionMismatch(StructIsoError):
    pass


class DegenerateCovariance(StructIsoError):
    pass


class InvalidStructure(StructIsoError):
    """A penalty structure failed validation; ``problems`` lists every defect."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InvalidTree(InvalidStructure):
    pass


class NonFiniteIterate(StructIsoError):
    """ADMM iterates diverged to inf/nan."""


class NotConverged(StructIsoError):
    pass


class NoFaultySamples(StructIsoError):
    pass
