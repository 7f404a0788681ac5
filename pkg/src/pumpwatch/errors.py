"""Exception hierarchy shared across the package."""


class PumpwatchError(Exception):
    """Base class for all package-specific errors."""


class NonMonotonicTimestamp(PumpwatchError):
    """A trade stream went backwards in time."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"timestamp decreases at record index {index}")


class NonPositiveValue(PumpwatchError):
    """A price, quantity, or timestamp that must be positive is not."""


class ParseError(PumpwatchError):
    """A trade file row could not be parsed. The whole file is rejected."""

    def __init__(self, row: int, reason: str):
        self.row = row
        self.reason = reason
        super().__init__(f"row {row}: {reason}")


class NetworkError(PumpwatchError):
    """A transient exchange-API failure that survived all retries."""


class RateLimited(PumpwatchError):
    """The exchange asked us to back off and we exhausted our patience."""


class GapDetected(PumpwatchError):
    """Trade-id pagination returned a hole in the id sequence."""


class MisalignedOrigin(PumpwatchError):
    """Chunk origin is not on the chunk-size grid."""


class EmptyTrainingSet(PumpwatchError):
    """A classifier was asked to train on zero rows."""


class FeatureDimensionMismatch(PumpwatchError):
    """Prediction input width does not match the model's feature names."""


class SingleClassInput(PumpwatchError):
    """Precision-recall analysis needs at least one positive and one negative."""


class TooFewEvents(PumpwatchError):
    """Cross-validation needs at least k labeled events."""


class InsufficientCoverage(PumpwatchError):
    """Trade data does not span an event's evaluation window."""

    def __init__(self, event, reason: str = ""):
        self.event = event
        msg = f"insufficient trade coverage for {event}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class InvalidScenario(PumpwatchError):
    """A synthetic scenario violates its own constraints."""


class ModelFormatError(PumpwatchError):
    """A serialized model file is unreadable or has the wrong version."""


class ConfigError(PumpwatchError):
    """A TOML config file is missing required keys or has bad values."""
