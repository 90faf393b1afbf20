"""Exception hierarchy shared across the package."""


class DmfpError(Exception):
    """Base class for all package errors."""


class InvalidPriorError(DmfpError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        shown = "; ".join(str(v) for v in self.violations[:10])
        more = len(self.violations) - 10
        if more > 0:
            shown += f"; ... ({more} more)"
        super().__init__(f"invalid prior: {shown}")


class InvalidArgumentError(DmfpError, ValueError):
    pass


class BracketError(DmfpError, ValueError):
    pass


class QuadratureError(DmfpError, RuntimeError):
    pass


class InstabilityError(DmfpError, RuntimeError):
    pass


class DegenerateDataError(DmfpError, ValueError):
    pass


class ConfigError(DmfpError, ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config: " + "; ".join(self.errors))
