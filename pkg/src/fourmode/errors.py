"""Exception types shared across the package."""


class NonUnitaryError(ValueError):
    """A matrix expected to be unitary failed the unitarity check."""


class InvalidStateError(ValueError):
    """A density matrix is not Hermitian, unit-trace and positive."""


class MomentumConditionError(ValueError):
    """Two velocities do not satisfy the Bragg momentum condition."""


class InsufficientStatisticsError(ValueError):
    """An estimator's normalisation (a denominator or Lambda) vanished."""


class FitError(RuntimeError):
    """A fit did not converge or the data carry no usable signal.

    ``diagnostics`` holds whatever the fitter knew when it gave up.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConfigError(ValueError):
    """A configuration file could not be parsed or failed validation."""
