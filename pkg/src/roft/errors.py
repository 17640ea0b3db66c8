"""Exception taxonomy shared across the toolkit."""


class RoftError(Exception):
    """Base class for all toolkit errors."""


class ContractViolationError(RoftError):
    """An operation was called outside its contract (shape/range/symmetry)."""


class ValidationError(RoftError):
    """Input data or configuration failed a structural validation pass."""


class DatasetParseError(ValidationError):
    """A dataset file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(RoftError):
    """A run configuration is malformed or references an unknown option."""


class UndefinedMetricError(RoftError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class ConvergenceError(RoftError):
    """An iterative solver exhausted its iteration budget."""


class DomainError(RoftError):
    """A closed-form expression was evaluated at a singular point."""


class TrainingError(RoftError):
    """Training aborted; carries provenance of the failure."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if batch is not None:
            where.append(f"batch {batch}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.epoch = epoch
        self.batch = batch
