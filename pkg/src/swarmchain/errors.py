"""Exception types shared across the package."""


class SwarmChainError(Exception):
    pass


# chain
class InvalidBlock(SwarmChainError):
    pass


class InvalidLinkage(InvalidBlock):
    pass


class InvalidProof(InvalidBlock):
    pass


class InsufficientBalance(InvalidBlock):
    pass


class EmptyInput(SwarmChainError, ValueError):
    pass


# pow
class NoProof(SwarmChainError):
    """The search ended without reaching the minimum partial difficulty."""


# estimator
class ZeroElapsed(SwarmChainError, ValueError):
    pass


class InsufficientHistory(SwarmChainError):
    pass


class NoEligibleNodes(SwarmChainError):
    pass


# quality
class UnknownChannelCount(SwarmChainError, KeyError):
    pass


class InsufficientCalibration(SwarmChainError, ValueError):
    pass


class Incomparable(SwarmChainError):
    """Stamps describe different things; this is not evidence either way."""


class SelfValidation(SwarmChainError, ValueError):
    pass


# allocation
class TypeMismatch(SwarmChainError, ValueError):
    pass


class MissingQuality(SwarmChainError, KeyError):
    pass


# network
class AdmissionTimeout(SwarmChainError):
    pass


class NoLink(SwarmChainError, KeyError):
    pass


class ScenarioError(SwarmChainError, ValueError):
    """Scenario file failed to parse or validate. ``key`` names the culprit."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
