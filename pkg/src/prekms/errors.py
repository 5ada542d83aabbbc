"""Exception hierarchy shared by every layer of the toolkit.

Wire handlers and the CLI map these onto error codes / exit codes, so the
class names double as the stable error identifiers.
"""

from __future__ import annotations


class PrekmsError(Exception):
    """Base class; `code` is the stable identifier used on the wire."""

    code = "Error"
    exit_code = 1

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


# --- cryptographic layer -------------------------------------------------

class OutOfGroup(PrekmsError):
    code = "OutOfGroup"
    exit_code = 5


class ZeroKey(PrekmsError):
    code = "ZeroKey"
    exit_code = 5


class WrongRecipient(PrekmsError):
    """Authenticated unwrap of an ephemeral key failed."""

    code = "WrongRecipient"
    exit_code = 3


class InsufficientShares(PrekmsError):
    code = "InsufficientShares"
    exit_code = 5


class BadAuth(PrekmsError):
    code = "BadAuth"
    exit_code = 3


class BadSignature(PrekmsError):
    code = "BadSignature"
    exit_code = 5


class BadAuthTag(PrekmsError):
    """Symmetric authentication failure on an envelope body."""

    code = "BadAuth"
    exit_code = 5


class MalformedHeader(PrekmsError):
    code = "MalformedHeader"
    exit_code = 5


class AontIntegrityError(PrekmsError):
    code = "AontIntegrity"
    exit_code = 5


class MissingPredecessor(PrekmsError):
    code = "MissingPredecessor"
    exit_code = 5


class NotADescendant(PrekmsError):
    code = "NotADescendant"
    exit_code = 2


# --- node / policy layer --------------------------------------------------

class UnknownPolicy(PrekmsError):
    code = "UnknownPolicy"
    exit_code = 3


class DuplicatePolicy(PrekmsError):
    code = "DuplicatePolicy"
    exit_code = 2


class QuotaExceeded(PrekmsError):
    code = "QuotaExceeded"
    exit_code = 4


class NoEscrow(PrekmsError):
    code = "NoEscrow"
    exit_code = 4


class OutsideWindow(PrekmsError):
    code = "OutsideWindow"
    exit_code = 3


class ConditionFalse(PrekmsError):
    code = "ConditionFalse"
    exit_code = 3


class Revoked(PrekmsError):
    code = "Revoked"
    exit_code = 3


class NodeUnavailable(PrekmsError):
    code = "NodeUnavailable"
    exit_code = 4


# --- ledger ----------------------------------------------------------------

class InsufficientBalance(PrekmsError):
    code = "InsufficientBalance"
    exit_code = 4


class StillLocked(PrekmsError):
    code = "StillLocked"
    exit_code = 4


class NoEligibleNodes(PrekmsError):
    code = "NoEligibleNodes"
    exit_code = 4


class AlreadySettled(PrekmsError):
    code = "AlreadySettled"
    exit_code = 4


class UnknownEscrow(PrekmsError):
    code = "UnknownEscrow"
    exit_code = 4


# --- audit ------------------------------------------------------------------

class WrongPhase(PrekmsError):
    code = "WrongPhase"
    exit_code = 4


class BadReveal(PrekmsError):
    code = "BadReveal"
    exit_code = 4


class DuplicateVote(PrekmsError):
    code = "DuplicateVote"
    exit_code = 4


# --- storage / client --------------------------------------------------------

class UnknownContent(PrekmsError):
    code = "UnknownContent"
    exit_code = 4


class UnknownName(PrekmsError):
    code = "UnknownName"
    exit_code = 2


# first definition wins, so wire code "BadAuth" decodes to the authorization
# error rather than the envelope-body variant
CODE_TO_ERROR: dict[str, type[PrekmsError]] = {}
for _cls in list(globals().values()):
    if isinstance(_cls, type) and issubclass(_cls, PrekmsError) and _cls is not PrekmsError:
        CODE_TO_ERROR.setdefault(_cls.code, _cls)


def from_code(code: str, message: str = "") -> PrekmsError:
    """Rebuild a typed error from its wire code (unknown codes -> base class)."""
    cls = CODE_TO_ERROR.get(code, PrekmsError)
    err = cls(message)
    return err
