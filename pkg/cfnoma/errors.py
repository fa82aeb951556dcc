from typing import Any, Dict


class CfnomaError(Exception):
    def __init__(self, reason: str, **detail: Any):
        super().__init__(reason)
        self.reason = reason
        self.detail = detail

    @property
    def error(self) -> str:
        return type(self).__name__

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.error, "reason": self.reason, **self.detail}


class ConfigError(CfnomaError):
    pass


class DomainError(CfnomaError, ValueError):
    pass


class UnreachableRateError(CfnomaError):
    pass


class OrderingViolationError(CfnomaError):
    pass


class DegenerateApproximationError(CfnomaError):
    pass


class GPError(CfnomaError):
    pass


class GPInfeasibleError(GPError):
    def __init__(self, reason: str, certificate: Dict[str, Any], **detail: Any):
        super().__init__(reason, **detail)
        self.certificate = certificate

    def to_dict(self) -> Dict[str, Any]:
        return {**super().to_dict(), "certificate": self.certificate}


class GPUnboundedError(GPError):
    pass


class GPNumericalError(GPError):
    pass


class InfeasibleScenarioError(CfnomaError):
    def __init__(self, reason: str, shortfall: Dict[int, float], **detail: Any):
        super().__init__(reason, **detail)
        self.shortfall = shortfall

    def to_dict(self) -> Dict[str, Any]:
        return {**super().to_dict(), "shortfall": {str(k): v for k, v in self.shortfall.items()}}


class InvalidLoopError(CfnomaError):
    pass
