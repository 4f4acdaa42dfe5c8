"""Fixed-interval estimators of the state at the initialization day."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..model import ModelParams, NoiseConfig, build_F, spectral_report
from .backcast import (
    MatrixPowers,
    NlsConfig,
    OmegaMatrix,
    PhiSystem,
    build_omega,
    build_phi,
    gls_solve,
    nls_estimate,
    ols_estimate,
    omega_elements,
    predicted_schedule,
)
from .kalman import KalmanPass, default_initial, kalman_forward, rts_backward
from .result import EstimationError, SmoothedEstimate

METHODS = ("RTS", "OLS", "NLS")


def estimate_initial_state(method: str, y, params: ModelParams, noise: NoiseConfig, cfg,
                           phi: Optional[PhiSystem] = None) -> SmoothedEstimate:
    """Estimate the state at day ``cfg.m`` from measurements ``y_0..y_d``.

    RTS consumes the whole series; the batch methods use days ``cfg.k_min..d``
    after truncating a near-zero mode of ``F`` if one exists. A prebuilt
    ``phi`` (without measurements) may be passed to skip its construction.
    """
    method = method.upper()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    y = np.asarray(getattr(y, "y", y), dtype=float)
    if len(y) < cfg.d + 1:
        raise ValueError(f"need {cfg.d + 1} measurements, got {len(y)}")
    y = y[:cfg.d + 1]
    mats = build_F(params)
    if method == "RTS":
        kp = kalman_forward(mats, params, noise, y)
        return rts_backward(kp, mats)[cfg.m]
    if phi is None:
        phi = build_phi(mats, cfg.m, cfg.d, cfg.k_min, spectral_report(mats))
    sys = phi.with_measurements(y)
    if method == "OLS":
        return ols_estimate(sys, nonneg=getattr(cfg, "ols_nonneg", False))
    nls_cfg = NlsConfig(getattr(cfg, "s_tol", 1e-6), getattr(cfg, "max_iters", 50))
    return nls_estimate(sys, mats, params, noise, nls_cfg)


__all__ = [
    "EstimationError", "KalmanPass", "MatrixPowers", "METHODS", "NlsConfig", "OmegaMatrix",
    "PhiSystem", "SmoothedEstimate", "build_omega", "build_phi", "default_initial",
    "estimate_initial_state", "gls_solve", "kalman_forward", "nls_estimate", "ols_estimate",
    "omega_elements", "predicted_schedule", "rts_backward",
]
