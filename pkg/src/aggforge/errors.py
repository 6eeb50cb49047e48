"""Exception hierarchy for aggforge."""


class AggForgeError(Exception):
    """Base class for all engine errors."""


# catalog

class CatalogError(AggForgeError):
    pass


class ConfigError(CatalogError):
    """Malformed schema/tree config file."""


class CyclicTree(CatalogError):
    pass


class DisconnectedTree(CatalogError):
    pass


class RunningIntersectionViolation(CatalogError):
    def __init__(self, left, right, middle, missing):
        self.triple = (left, right, middle)
        self.missing = tuple(sorted(missing))
        super().__init__(
            f"attributes {sorted(missing)} shared by {left} and {right} "
            f"are missing from {middle} on the path between them"
        )


class CyclicSchema(CatalogError):
    pass


# storage

class StorageError(AggForgeError):
    pass


class ParseError(StorageError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ArityMismatch(StorageError):
    pass


class UnknownAttribute(AggForgeError):
    def __init__(self, name, where=""):
        self.name = name
        msg = f"unknown attribute {name!r}"
        if where:
            msg += f" in {where}"
        super().__init__(msg)


class NotSorted(StorageError):
    pass


# queries

class QueryError(AggForgeError):
    pass


class SyntaxError(QueryError):  # noqa: A001 - mirrors the DSL error name
    def __init__(self, position, message):
        self.position = position
        super().__init__(f"at position {position}: {message}")


class UnknownFunction(QueryError):
    pass


class UnboundAttribute(QueryError):
    pass


class NotDynamic(QueryError):
    pass


# planning / execution

class UnjoinableView(AggForgeError):
    pass


class MissingDependency(AggForgeError):
    pass


class CycleDetected(AggForgeError):
    pass


class EmptyJoin(AggForgeError):
    pass
