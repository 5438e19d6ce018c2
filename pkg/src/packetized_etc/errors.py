"""Exception hierarchy shared by all modules."""


class EtcError(Exception):
    """Base class for every error raised by this package."""


class NotControllable(EtcError):
    pass


class SingularA(EtcError):
    pass


class MultiInputUnsupported(EtcError):
    """Raised by dead-beat synthesis for m > 1.

    Supply a gain explicitly and check it with ``validate_deadbeat_gain``.
    """


class NotNilpotent(EtcError):
    def __init__(self, residual, tolerance):
        super().__init__(
            f"(A+BK)^nu has Frobenius norm {residual:.3e} > tolerance {tolerance:.3e}"
        )
        self.residual = residual
        self.tolerance = tolerance


class UnstableArgument(EtcError):
    pass


class UnstableConfiguration(EtcError):
    pass


class DimensionMismatch(EtcError, ValueError):
    pass


class ToleranceNotMet(EtcError):
    def __init__(self, estimate, error, tolerance):
        super().__init__(
            f"error estimate {error:.3e} exceeds requested tolerance {tolerance:.3e}"
        )
        self.estimate = estimate
        self.error = error
        self.tolerance = tolerance


class VanishingMass(EtcError):
    pass


class NegativeMassDifference(EtcError):
    pass


class ConfigInvalid(EtcError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
