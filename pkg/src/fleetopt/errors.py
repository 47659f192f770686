"""Exception hierarchy shared across the package.

Three broad categories map onto CLI exit codes: configuration problems
(exit 2), bad or inconsistent input data (exit 3), and everything else
(exit 4).
"""


class FleetoptError(Exception):
    """Base class for all package errors."""


class ConfigError(FleetoptError):
    """Invalid or inconsistent run configuration."""


class DataError(FleetoptError):
    """Input data failed validation."""


# -- blackboard ---------------------------------------------------------------

class InvalidKey(DataError):
    """Key is empty or not a well-formed /-separated path."""


class VersionConflict(FleetoptError):
    """Compare-and-swap failed: expected version does not match the
    current version. Signals a concurrent writer; re-read and retry."""

    def __init__(self, key: str, expected: int, actual: int):
        super().__init__(
            f"version conflict on {key!r}: expected {expected}, found {actual}"
        )
        self.key = key
        self.expected = expected
        self.actual = actual


class FutureRevision(DataError):
    """changes_since() was asked about a revision beyond the store head."""


# -- observer -----------------------------------------------------------------

class ParseError(DataError):
    """A source file does not match its documented schema."""


class DuplicateResource(DataError):
    """Two inventory rows share the same (platform, id)."""


class UnknownResource(DataError):
    """Telemetry references a resource absent from the inventory."""


class NonMonotonicTimestamps(DataError):
    """Samples for one resource are not strictly increasing in time."""


class EmptyWindow(DataError):
    """No samples survive trimming to the observation window."""


# -- forecast -----------------------------------------------------------------

class EmptySeries(DataError):
    """Statistics requested over an empty series."""


class SeriesTooShort(DataError):
    """Series shorter than the minimum the operation requires."""


# -- rightsizing --------------------------------------------------------------

class NoFeasibleFlavor(FleetoptError):
    """No catalog flavor satisfies the required allocation (the need
    exceeds the catalog; surfaced as a diagnostic, not a crash)."""


# -- security -----------------------------------------------------------------

class GenerationTimeout(FleetoptError):
    """Text-generation client exceeded its allotted time."""


class ClientError(FleetoptError):
    """Text-generation client failed or returned an empty response."""


# -- strategizer --------------------------------------------------------------

class MissingObjective(ConfigError):
    """An objective required by the weighting scheme is absent."""


# -- workflow -----------------------------------------------------------------

class DuplicateProposal(FleetoptError):
    """A proposal directory for this recommendation already exists in
    the window (the emit is a no-op)."""


class UnknownRecommendation(DataError):
    """Feedback references a recommendation id not on the blackboard."""


class MalformedRecord(DataError):
    """A feedback record is missing required fields."""


class StaleTarget(FleetoptError):
    """The resource's live flavor no longer matches the recommendation's
    recorded current flavor; the change was invalidated, not applied."""


# -- simulator ----------------------------------------------------------------

class InfeasibleSpec(ConfigError):
    """The fleet specification's distribution constraints cannot be
    satisfied (verified post-generation)."""
