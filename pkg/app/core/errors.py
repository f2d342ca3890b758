"""Иерархия ошибок. exit_code используется CLI при завершении процесса."""
from typing import Optional, Sequence

import numpy as np


class MteBoundsError(Exception):
    exit_code = 1


class ConfigError(MteBoundsError, ValueError):
    """Невалидная конфигурация, флаги CLI или схема входного CSV."""
    exit_code = 2


class NumericalError(MteBoundsError):
    exit_code = 3

    def __init__(self, message: str, achieved_error: Optional[float] = None):
        super().__init__(message)
        self.achieved_error = achieved_error


class EstimationError(NumericalError):
    pass


class SeparationError(EstimationError):
    def __init__(self, component: str, direction: np.ndarray, names: Sequence[str]):
        self.component = component
        self.direction = np.asarray(direction, dtype=float)
        self.names = list(names)
        terms = ", ".join(f"{n}={v:+.3f}" for n, v in zip(self.names, self.direction))
        super().__init__(f"[{component}] separation detected along direction ({terms})")


class RankDeficiencyError(EstimationError):
    def __init__(self, component: str, columns: Sequence[str]):
        self.component = component
        self.columns = list(columns)
        super().__init__(f"[{component}] design matrix is rank deficient; collinear columns: {self.columns}")


class InsufficientDataError(EstimationError):
    def __init__(self, message: str, effective_n: int):
        super().__init__(f"{message} (effective n = {effective_n})")
        self.effective_n = effective_n


class SingularDesignError(EstimationError):
    pass


class ZeroWeightError(NumericalError):
    pass


class AssumptionViolation(MteBoundsError):
    exit_code = 3


class DiagnosticsViolation(MteBoundsError):
    exit_code = 4
