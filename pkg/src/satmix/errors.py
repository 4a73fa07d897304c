"""Exception hierarchy.

Every error carries a stable string ``code`` and a distinct process ``exit_code``
used by the command-line front end.
"""


class SatmixError(ValueError):
    code = "ERROR"
    exit_code = 1


class ParseError(SatmixError):
    code = "PARSE_ERROR"
    exit_code = 2


class DegenerateVariance(SatmixError):
    code = "DEGENERATE_VARIANCE"
    exit_code = 3


class EnumerationTooLarge(SatmixError):
    code = "ENUMERATION_TOO_LARGE"
    exit_code = 4

    def __init__(self, n_assignments: int, cap: int):
        self.n_assignments = n_assignments
        self.cap = cap
        super().__init__(
            f"C(N, m) = {n_assignments} assignments exceeds the enumeration cap {cap}"
        )


class ConfigInvalid(SatmixError):
    code = "CONFIG_INVALID"
    exit_code = 5


class GroupTooSmall(SatmixError):
    code = "GROUP_TOO_SMALL"
    exit_code = 6


class RhoRequired(SatmixError):
    code = "RHO_REQUIRED"
    exit_code = 7


class RhoUndefined(SatmixError):
    code = "RHO_UNDEFINED"
    exit_code = 8


class RhoOutOfRange(SatmixError):
    code = "RHO_OUT_OF_RANGE"
    exit_code = 9


class MismatchedInputs(SatmixError):
    code = "MISMATCHED_INPUTS"
    exit_code = 10


class ZeroSigma(SatmixError):
    code = "ZERO_SIGMA"
    exit_code = 11


class DegenerateDenominator(SatmixError):
    code = "DEGENERATE_DENOMINATOR"
    exit_code = 12


class RankDeficient(SatmixError):
    code = "RANK_DEFICIENT"
    exit_code = 13


class UnknownFormula(SatmixError):
    code = "UNKNOWN_FORMULA"
    exit_code = 14


class NoControls(SatmixError):
    code = "NO_CONTROLS"
    exit_code = 15


class InvalidMarginals(SatmixError):
    code = "INVALID_MARGINALS"
    exit_code = 16


class InvalidInput(SatmixError):
    """A precondition on shapes, ranges or counts was violated."""

    code = "INVALID_INPUT"
    exit_code = 17


class VerificationFailed(SatmixError):
    code = "VERIFICATION_FAILED"
    exit_code = 18
