"""Exception hierarchy for switchstein."""


class SwitchsteinError(Exception):
    """Base class for all errors raised by this package."""


class GeneratorError(SwitchsteinError, ValueError):
    pass


class NegativeOffDiagonal(GeneratorError):
    pass


class RowSumViolation(GeneratorError):
    pass


class TimeOutOfRange(SwitchsteinError, ValueError):
    pass


class NonDividingStep(SwitchsteinError, ValueError):
    pass


class NonNestedStep(SwitchsteinError, ValueError):
    pass


class NotAGridPoint(SwitchsteinError, ValueError):
    pass


class MissingJumpTail(SwitchsteinError, ValueError):
    pass


class StepTooLarge(SwitchsteinError, ValueError):
    pass


class PlanInvalid(SwitchsteinError, ValueError):
    pass


class ConfigError(SwitchsteinError, ValueError):
    """Raised for unreadable or inconsistent experiment configuration."""
