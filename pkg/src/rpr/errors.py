class ConfigError(ValueError):
    """Raised for invalid noise, adversary, estimator or experiment settings."""


class DegenerateInputError(ValueError):
    """Raised when an estimator is handed data it cannot summarise."""
