"""Exception types raised across the package."""


class AdalagError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(AdalagError, ValueError):
    """Model or algorithm parameters violate their stated constraints."""


class DegenerateWeightsError(AdalagError, ValueError):
    """A categorical distribution was requested with zero total mass."""


class WeightCollapseError(DegenerateWeightsError):
    """Every particle weight underflowed to zero at some time step."""

    def __init__(self, t: int):
        super().__init__(f"all particle weights are zero at t={t}")
        self.t = t


class DegenerateBackwardWeightsError(DegenerateWeightsError):
    """The backward kernel products w_l * q(x_l, x') are all zero for a target."""

    def __init__(self, index: int | None = None):
        where = "" if index is None else f" for particle {index}"
        super().__init__(f"backward weights are all zero{where}")
        self.index = index


class RetentionError(AdalagError, LookupError):
    """A genealogy lookup reached outside the retained window."""


class NumericalError(AdalagError, ArithmeticError):
    """A matrix that must be invertible or SPD was not."""


class ActiveSetOverflowError(AdalagError, RuntimeError):
    """The number of active estimators exceeded the configured cap."""
