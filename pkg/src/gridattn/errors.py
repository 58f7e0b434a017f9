"""Exception types raised by the simulator and its kernels."""


class DimensionError(ValueError):
    """Matrix shape is not a multiple of the tile size or operands disagree."""


class NonFiniteInput(ValueError):
    """A kernel was handed NaN or infinite values."""


class PlacementError(ValueError):
    """A program referenced a core outside the compute region."""


class SramOverflow(MemoryError):
    """A core's SRAM occupancy would exceed its usable tile budget."""

    def __init__(self, message, coord=None):
        super().__init__(message)
        self.coord = coord

    def __str__(self):
        base = super().__str__()
        if self.coord is not None:
            return f"core {self.coord}: {base}"
        return base


class KernelError(RuntimeError):
    """Any other exception raised inside a per-core kernel, tagged with its core."""

    def __init__(self, coord, cause):
        super().__init__(f"kernel on core {coord} failed: {cause!r}")
        self.coord = coord
        self.cause = cause


class SpecError(ValueError):
    """Malformed experiment specification."""


class OracleMismatch(AssertionError):
    """Kernel output disagrees with the float64 reference beyond tolerance."""
