"""Exception hierarchy shared by every protocol role."""


class JJEError(Exception):
    """Base class for protocol errors."""


class InvalidParameter(JJEError, ValueError):
    """An argument violates an operation's precondition."""


class CombineError(JJEError):
    """Partial decryptions could not be combined into a plaintext.

    Raised for missing, duplicated or malformed partials; under an n-of-n
    scheme this is what a withholding or corrupted custodian looks like.
    """


class ProtocolOrderError(JJEError):
    """An operation was invoked before its prerequisite step."""


class Forbidden(JJEError):
    """The caller lacks the physical or legal standing for the action."""


class Refused(JJEError):
    """A participant declined to take part in a request."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class AccessFailed(JJEError):
    """A warranted access case reached the Failed state."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)
