"""Exception types shared across the library.

Numeric-failure exceptions (NotAMixture, DivergentLevyMeasure, ...) signal
that an operation's tolerance contract could not be met; input-contract
violations raise InvalidMeasure / Unsupported* / InvalidExponents.
"""


class WeakconvError(Exception):
    """Base class for all library errors."""


class InvalidMeasure(WeakconvError):
    """Mixing measure violates an invariant (mass, monotone grid, sign)."""


class NotAMixture(WeakconvError):
    """Inversion produced a CDF that is non-monotone beyond tolerance."""


class NotInfinitelyDivisible(WeakconvError):
    """Fractional convolution power is undefined for this measure."""


class UnsupportedKernel(WeakconvError):
    """Operation is not available for this kernel kind."""


class UnsupportedExponent(WeakconvError):
    """Requested stability index exceeds the kernel's characteristic exponent."""


class InvalidExponents(WeakconvError):
    """Subordination exponents must satisfy 0 < q < p."""


class DivergentLevyMeasure(WeakconvError):
    """Radial Levy measure fails the integrability condition.

    ``end`` identifies the failing end: "zero" or "infinity".
    """

    def __init__(self, message, end):
        super().__init__(message)
        self.end = end


class NoConvergence(WeakconvError):
    """An iterative schedule did not stabilize within its budget."""


class TruncationTooShort(WeakconvError):
    """Poisson series truncation leaves more than the allowed tail mass."""


class Unavailable(WeakconvError):
    """Density evaluation did not converge at the configured precision."""


class NoStableElement(WeakconvError):
    """No canonical stable element exists for the requested exponent."""
