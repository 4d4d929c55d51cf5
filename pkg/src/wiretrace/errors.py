"""Exception hierarchy.

Every error family maps to one CLI exit code (see ``wiretrace.cli``).
"""


class WiretraceError(Exception):
    """Base class for all toolkit errors."""


# capture parsing
class CaptureError(WiretraceError):
    pass


class UnknownMagic(CaptureError):
    pass


class Truncated(CaptureError):
    pass


class TruncatedRecord(CaptureError):
    """Record header or body cut short.

    In follow mode this means "wait for more data", not corruption.
    """


class OversizedRecord(CaptureError):
    pass


# analysis
class AnalysisError(WiretraceError):
    pass


class NotABindingRequest(AnalysisError):
    pass


class OutOfOrderEvent(AnalysisError):
    pass


class InvalidInterval(AnalysisError):
    pass


class ClockBaseMissing(AnalysisError):
    pass


class UnsortedInput(AnalysisError):
    pass


class SpecInvalid(AnalysisError):
    pass


class SourceVanished(AnalysisError):
    pass


# custody
class LedgerError(WiretraceError):
    pass


class EmptyBaselineField(LedgerError):
    pass


class ChainBroken(LedgerError):
    pass


class BadResumeToken(LedgerError):
    pass


class LedgerExists(LedgerError):
    pass


class LedgerLocked(LedgerError):
    pass


class ReportBlocked(LedgerError):
    """Report emission refused: unverified ledger or unexplained differences."""
