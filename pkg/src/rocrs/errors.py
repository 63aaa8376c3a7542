"""Exception taxonomy shared across the package.

Every error raised on purpose derives from RocrsError so callers can catch
library failures without swallowing genuine bugs.
"""


class RocrsError(Exception):
    """Base class for all library errors."""


class InputError(RocrsError, ValueError):
    """Malformed user input: bad ids, inconsistent shapes, broken JSON fields."""


class DomainError(RocrsError, ValueError):
    """Structurally valid input outside an operation's domain
    (e.g. a point outside the polytope, an unbounded knapsack where a
    bounded one is required)."""


class CapacityError(RocrsError):
    """A desk-scale enumeration cap would be exceeded."""


class NumericalError(RocrsError):
    """An iterative numeric procedure failed to make progress or converge."""


class LogicError(RocrsError):
    """Caller broke a call-sequence contract (e.g. accepting a blocked
    element, setting the same trace fate twice)."""


class InternalError(RocrsError):
    """An invariant the library itself is responsible for was violated."""


class OracleContractError(RocrsError):
    """A user-supplied oracle returned a value outside its contract
    (e.g. a negative submodular value)."""


class UnsupportedError(RocrsError):
    """The operation does not support this instance shape."""
