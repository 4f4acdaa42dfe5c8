from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class EstimationError(RuntimeError):
    """An estimator could not produce a result for the given data."""


@dataclass
class SmoothedEstimate:
    """Estimated state at index ``m`` given measurements up to ``d``."""

    m: int
    x: np.ndarray
    method: str
    cov: Optional[np.ndarray] = None
    iterations: int = 0
    converged: bool = True
    truncated_state: Optional[int] = None
    objective: list = field(default_factory=list)
