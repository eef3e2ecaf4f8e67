class ConfigurationError(ValueError):
    """Invalid parameters, grids, windows or config documents."""


class DegenerateInputError(ValueError):
    """Input carries nothing to work on (zero modulus, empty support, zero distance)."""
