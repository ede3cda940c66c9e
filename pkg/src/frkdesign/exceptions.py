"""Exception types shared across the package."""


class DomainError(ValueError):
    """A location falls outside the spatial domain (or outside the active mask)."""


class NumericalError(RuntimeError):
    """A matrix factorization failed even after diagonal jitter."""
