"""Exception types shared across the package.

Plain ``ValueError`` is used for invalid arguments; the classes here cover
failures that callers are expected to catch and handle individually.
"""


class TeleFleetError(Exception):
    """Base class for package-specific errors."""


class DecodeError(TeleFleetError):
    """A binary payload or file header could not be decoded.

    The message names the first field that failed.
    """


class OrderingError(TeleFleetError):
    """A timestamp went backwards where a stream requires monotone time."""


class IntegrityError(TeleFleetError):
    """A stored record failed its checksum."""

    def __init__(self, message: str, topic_id: int | None = None, seq: int | None = None):
        super().__init__(message)
        self.topic_id = topic_id
        self.seq = seq


class NotFoundError(TeleFleetError):
    """Lookup of a session, robot, or user that does not exist."""


class AlreadyPresentError(TeleFleetError):
    """An id was registered or enqueued twice."""
