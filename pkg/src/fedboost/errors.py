"""Exception types shared across the package."""


class FedboostError(Exception):
    """Base class for all package-specific errors."""


class InvalidValueError(FedboostError, ValueError):
    """A value rejected at insertion time (non-finite, out of domain)."""


class IncompatibleSketchError(FedboostError, ValueError):
    """Sketches built with different relative-error parameters cannot merge."""


class EmptySketchError(FedboostError, ValueError):
    """Quantile queries require at least one inserted value."""


class DatasetLoadError(FedboostError):
    """A CSV or recipe could not be turned into a usable dataset."""


class PreparationError(FedboostError):
    """Prepared dataset does not match the recipe's expectations."""


class InfeasiblePartitionError(FedboostError):
    """The requested partition cannot produce trainable party slices."""


class UnsupportedSchemeError(FedboostError, ValueError):
    """Partition scheme outside the supported five-party family."""


class EmptyFederationError(FedboostError, ValueError):
    """No party contributed any samples."""


class ProtocolError(FedboostError):
    """A federation message violated the protocol contract."""


class SchemaError(ProtocolError):
    """Parties disagree on the shared data schema (features or classes)."""


class PartyTimeoutError(ProtocolError):
    """A registered party failed to reply within the round timeout."""

    def __init__(self, party_id: str, detail: str = ""):
        self.party_id = party_id
        msg = f"party {party_id!r} did not reply in time"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)


class RoundAbortedError(FedboostError):
    """A training round could not be completed; carries the last good model."""

    def __init__(self, message: str, last_good_model=None, history=None):
        super().__init__(message)
        self.last_good_model = last_good_model
        self.history = history or []


class UndefinedMetricError(FedboostError, ValueError):
    """A metric was requested over an empty evaluation set."""
