"""Exception types shared across the package."""


class SchemaError(ValueError):
    """A file or matrix does not match the expected column layout."""


class ValidationError(ValueError):
    """Data violates an invariant (non-finite entries, bad treatment codes, ...)."""


class CalibrationError(ValueError):
    """Prior or offset calibration is impossible (constant outcome, overflow, ...)."""


class DegenerateDataError(ValueError):
    """The data cannot support the requested operation (single-class treatment, ...)."""
