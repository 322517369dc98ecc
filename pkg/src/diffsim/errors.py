"""Exception types raised by the numerical routines."""


class DiffsimError(Exception):
    """Base class for all library errors."""


class UnderflowError(DiffsimError):
    """Kernel sum fell below the floor; the point is too far from every sample."""


class NonConvergence(DiffsimError):
    def __init__(self, message, last):
        super().__init__(message)
        self.last = last


class DegenerateCenter(DiffsimError):
    """The gradient component on the centering axis is (nearly) zero."""


class DegenerateSpectrum(DiffsimError):
    """|grad U|^2 and P0^2 coincide, so the two eigenvalues merge."""


class RankDeficient(DiffsimError):
    pass


class StationaryStart(DiffsimError):
    """A rho curve was requested from a point that is already a mode."""


class StepCollapse(DiffsimError):
    pass


class OptimizationStall(DiffsimError):
    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


class BadMagic(DiffsimError):
    pass


class TruncatedFile(DiffsimError):
    pass


class StageError(DiffsimError):
    """A CLI stage is missing its upstream artifacts."""


class ConfigError(DiffsimError):
    pass
