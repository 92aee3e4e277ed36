"""Exception types raised across the package."""


class MMGMRFError(Exception):
    """Base class for all package errors."""


class ValidationError(MMGMRFError, ValueError):
    """Input data violates a documented invariant."""


class NonMonotonicTimestamps(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class UnknownLink(ValidationError):
    def __init__(self, link, message=None):
        self.link = link
        super().__init__(message or f"link {link} is not in the network")


class UncoveredLink(MMGMRFError):
    def __init__(self, links):
        self.links = list(links)
        super().__init__(f"links without model coverage: {self.links}")


class PathTooLong(MMGMRFError):
    pass


class NumericalError(MMGMRFError, ArithmeticError):
    """Base class for numerical failures."""


class NotPositiveDefinite(NumericalError):
    def __init__(self, pivot):
        self.pivot = int(pivot)
        super().__init__(f"matrix is not positive definite (pivot {self.pivot})")


class DegenerateVariance(NumericalError):
    pass


class NotConverged(NumericalError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class LineSearchFailed(NumericalError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
