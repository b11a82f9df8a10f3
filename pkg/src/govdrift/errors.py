"""Exception hierarchy for govdrift.

Everything raised on purpose derives from :class:`GovDriftError`. The CLI maps
:class:`DataError` subclasses to exit code 2 and :class:`ConfigError`
subclasses to exit code 1.
"""


class GovDriftError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(GovDriftError):
    """Invalid configuration, schema mapping or CLI usage."""


class DataError(GovDriftError):
    """Input data cannot support the requested operation."""


# ingest
class MissingColumn(DataError):
    pass


class EmptySource(DataError):
    pass


class ThresholdedParseFailure(DataError):
    pass


class AllMissingFeature(DataError):
    pass


class InsufficientWindows(DataError):
    pass


# refmodel
class SingleClassWindow(DataError):
    pass


class TooFewRecords(DataError):
    pass


class NonFiniteLoss(DataError):
    pass


class UnknownFeature(DataError):
    pass


# proxies
class EmptyReferenceWindow(DataError):
    pass


class EmptySample(DataError):
    pass


class EmptyWindow(DataError):
    pass


# monitor
class NoActiveMonitors(DataError):
    pass


# inject
class UnknownTargetFeature(DataError):
    pass


class MissingLabels(DataError):
    pass


# harness
class ScheduleMismatch(DataError):
    pass


class WindowCountMismatch(DataError):
    pass


class IoFailure(GovDriftError):
    pass
