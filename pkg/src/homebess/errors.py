"""Exception types shared across the package."""


class HomebessError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(HomebessError):
    """Invalid configuration value, search space, or CLI input."""


class NotFoundError(ConfigError):
    """A requested entity (customer id, file, checkpoint) does not exist."""


class DataError(HomebessError):
    """Problem with the content of an input data file."""


class FormatError(DataError):
    """Input file does not follow the documented layout."""


class ValidationError(DataError):
    """A value violates a domain invariant (e.g. negative energy)."""


class DuplicateError(DataError):
    """The same (customer, category, date) row appears twice."""


class ProtocolError(HomebessError):
    """An episode or stateful object was used out of order."""


class ContractError(HomebessError):
    """A precondition between cooperating functions was violated."""


class ShapeError(HomebessError):
    """Array or network dimensions do not line up."""


class NumericError(HomebessError):
    """A loss or gradient became non-finite; the trial cannot continue."""


class PolicyError(HomebessError):
    """A policy emitted a negative or non-finite action component."""


class ResourceGuardError(HomebessError):
    """A brute-force computation would exceed its size limit."""
