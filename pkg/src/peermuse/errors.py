"""Exception types shared across the package."""


class PeermuseError(Exception):
    """Base class for all package errors."""


class NotFoundError(PeermuseError):
    """A referenced entity (ego, concept, token) is unknown."""


class InvalidInputError(PeermuseError):
    """Structurally invalid data (bad round, empty training set, ...)."""


class InvalidConfigError(PeermuseError):
    """A run configuration violates its invariants."""


class MissingVocabularyError(PeermuseError):
    """A document has no in-vocabulary token for the requested embedding table."""


class NotReadyError(PeermuseError):
    """An operation needs a trained model that is not available."""


class SchemaError(PeermuseError):
    """A log file does not match the expected record schema."""

    def __init__(self, path, line_number, message):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = str(path)
        self.line_number = line_number
