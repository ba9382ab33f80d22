"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SoftArmError(Exception):
    exit_code = 1


class PressureRangeError(SoftArmError, ValueError):
    """Pressure outside the actuator's [0, 250] kPa range."""


class DomainError(SoftArmError, ValueError):
    pass


class ConfigError(SoftArmError, ValueError):
    exit_code = 2


class ShapeError(SoftArmError, ValueError):
    pass


class SizeError(SoftArmError, ValueError):
    pass


class DegenerateChannelError(SoftArmError, ValueError):
    def __init__(self, channel):
        super().__init__(f"channel {channel!r} is constant over the training split")
        self.channel = channel


class CacheError(SoftArmError, RuntimeError):
    pass


class NumericError(SoftArmError, ArithmeticError):
    pass


class DependencyError(SoftArmError, RuntimeError):
    exit_code = 3


class CompatibilityError(SoftArmError, ValueError):
    exit_code = 4


class PartialAblationError(SoftArmError, RuntimeError):
    exit_code = 5

    def __init__(self, message, completed=()):
        super().__init__(message)
        self.completed = list(completed)


class ParseError(SoftArmError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VersionError(ParseError):
    def __init__(self, found, supported):
        super().__init__(f"unsupported format version {found!r} (supported: {supported})")
        self.found = found
