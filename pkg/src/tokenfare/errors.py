"""Exception hierarchy shared by every actor.

Each class carries a short ``code`` used on the wire so that a client can
re-raise the same exception type the server raised.
"""


class FareError(Exception):
    code = "error"
    status = 500


class ParameterError(FareError, ValueError):
    code = "parameter"
    status = 400


class ProtocolAbort(FareError):
    """The user side of the blind-signature protocol refused to continue."""

    code = "abort"
    status = 400


class InvalidProof(FareError):
    """The signer's response does not yield a valid signature."""

    code = "invalid-proof"
    status = 400


class ReplayError(FareError):
    code = "replay"
    status = 409


class ConflictError(FareError):
    code = "conflict"
    status = 409


class NotFound(FareError, LookupError):
    code = "not-found"
    status = 404


class Denied(FareError):
    code = "denied"
    status = 403


class DoubleSpend(Denied):
    code = "double-spend"


class Discrepancy(FareError):
    """A published proof block disagrees with what the user holds."""

    code = "discrepancy"
    status = 409


class NothingToPublish(FareError):
    code = "nothing-to-publish"
    status = 409


class LedgerUnavailable(FareError):
    code = "ledger-unavailable"
    status = 503


ERRORS_BY_CODE = {
    cls.code: cls
    for cls in (
        FareError,
        ParameterError,
        ProtocolAbort,
        InvalidProof,
        ReplayError,
        ConflictError,
        NotFound,
        Denied,
        DoubleSpend,
        Discrepancy,
        NothingToPublish,
        LedgerUnavailable,
    )
}
