class ValidationError(ValueError):
    """An input violates a documented precondition."""


class ConfigError(ValidationError):
    """A configuration field violates its constraint."""

    def __init__(self, field: str, rule: str):
        super().__init__(f"{field}: {rule}")
        self.field = field
        self.rule = rule


class InsufficientDataError(ValueError):
    """Too few usable observations for the requested estimate."""


class UsageError(ValueError):
    """Arguments are individually valid but inconsistent with each other."""
