"""Exception hierarchy. The CLI maps each family onto an exit code."""


class RulegenError(Exception):
    """Base class for all library errors."""


class DataError(RulegenError):
    """Bad or unusable input data (CLI exit code 3)."""


class SchemaError(DataError):
    pass


class DataParseError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class InfeasibleRuleError(RulegenError):
    """A rule whose conditions describe an empty region."""


class SizeGuardError(RulegenError):
    """Exact enumeration would exceed the configured size budget."""


class UnsupportedMetricError(RulegenError):
    pass


class SolverError(RulegenError):
    """The LP solver broke down numerically (CLI exit code 4)."""
