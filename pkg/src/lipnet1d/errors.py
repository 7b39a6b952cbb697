"""Exception hierarchy shared by all lipnet1d modules."""


class LipNetError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(LipNetError, ValueError):
    pass


class NotPositiveDefinite(LipNetError, ValueError):
    pass


class NotSymmetric(LipNetError, ValueError):
    pass


class Singular(LipNetError, ValueError):
    pass


class SingularPrev(Singular):
    """The incoming factor L_{i-1} of a parameterized layer is numerically singular."""


class ModeError(LipNetError):
    pass


class FormatError(LipNetError, ValueError):
    pass


class LengthMismatch(FormatError):
    pass


class CertificateMismatch(LipNetError):
    pass


class NonFiniteLoss(LipNetError, FloatingPointError):
    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")
