"""Exception and warning types raised across the package."""


class SubsetError(Exception):
    """Base class for numeric and domain failures."""


class DimensionError(SubsetError, ValueError):
    pass


class DomainError(SubsetError, ValueError):
    pass


class RankDeficiencyError(SubsetError, ValueError):
    def __init__(self, rank, ncols, message=None):
        self.rank = rank
        self.ncols = ncols
        super().__init__(
            message or f"basis has numerical rank {rank} but {ncols} columns"
        )


class DegenerateWeightsError(SubsetError):
    pass


class NotPositiveDefiniteError(SubsetError, ValueError):
    pass


class SingularCovarianceError(SubsetError):
    pass


class InsufficientDrawsError(SubsetError, ValueError):
    pass


class NormalizerUnderflowError(SubsetError):
    def __init__(self, phi, log_z):
        self.phi = phi
        self.log_z = log_z
        super().__init__(f"normalizer underflows at phi={phi!r} (log Z = {log_z:.6g})")


class SubsetWarning(UserWarning):
    pass


class BoundaryMaximumWarning(SubsetWarning):
    def __init__(self, nu_star, message=None):
        self.nu_star = nu_star
        super().__init__(
            message or f"Bayes factor still increasing at upper bound nu={nu_star:g}"
        )


class FlatProfileWarning(SubsetWarning):
    pass


class LowESSWarning(SubsetWarning):
    pass


class InputFormatError(SubsetError):
    """An input file exists but cannot be parsed."""
