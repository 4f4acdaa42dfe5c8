"""Kalman filter with state-dependent process noise and the RTS backward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg

from ..model import N_STATES, ModelMatrices, ModelParams, NoiseConfig, process_noise_cov
from .result import EstimationError, SmoothedEstimate

#: diffuse prior variance on every state at day 0
DIFFUSE_VAR = 1e4


def _sym(p):
    return 0.5 * (p + p.T)


def default_initial(y0: float, var: float = DIFFUSE_VAR):
    """Initial estimate ``(y0, ..., y0)`` with a diffuse diagonal covariance."""
    return np.full(N_STATES, float(y0)), var * np.eye(N_STATES)


def clamped_cov_fn(params: ModelParams, noise: NoiseConfig) -> Callable:
    def q(x):
        return process_noise_cov(params, np.maximum(x, 0.0), noise)
    return q


@dataclass
class KalmanPass:
    """Forward-pass quantities for days ``0..d``.

    Day 0 holds the initial estimate in both the prior and posterior slots;
    its innovation, gain and innovation variance are zero.
    """

    x_prior: np.ndarray
    x_post: np.ndarray
    p_prior: np.ndarray
    p_post: np.ndarray
    innovations: np.ndarray
    gains: np.ndarray
    innovation_vars: np.ndarray
    init_state: np.ndarray
    init_cov: np.ndarray


def kalman_forward(mats: ModelMatrices, params: ModelParams, noise: NoiseConfig, y,
                   init_state=None, init_cov=None, cov_fn: Optional[Callable] = None) -> KalmanPass:
    """Run the filter over ``y_0..y_d``.

    The process noise covariance at step ``k`` is evaluated at the predicted
    state ``x_{k|k-1}`` (clamped at zero), since the true state is unknown.
    ``cov_fn`` overrides that evaluation, e.g. to force a constant covariance.
    """
    y = np.asarray(getattr(y, "y", y), dtype=float)
    n = len(y)
    if n < 2:
        raise ValueError("need at least two measurements")
    if init_state is None or init_cov is None:
        s0, c0 = default_initial(y[0])
        init_state = s0 if init_state is None else init_state
        init_cov = c0 if init_cov is None else init_cov
    x0 = np.asarray(init_state, dtype=float)
    p0 = np.asarray(init_cov, dtype=float)
    if not np.allclose(p0, p0.T):
        raise ValueError("initial covariance must be symmetric")
    q_of = cov_fn or clamped_cov_fn(params, noise)

    f, h = mats.f, mats.h
    nx = f.shape[0]
    r = noise.r
    out = KalmanPass(
        x_prior=np.empty((n, nx)), x_post=np.empty((n, nx)),
        p_prior=np.empty((n, nx, nx)), p_post=np.empty((n, nx, nx)),
        innovations=np.zeros(n), gains=np.zeros((n, nx)), innovation_vars=np.zeros(n),
        init_state=x0, init_cov=p0,
    )
    out.x_prior[0] = out.x_post[0] = x0
    out.p_prior[0] = out.p_post[0] = p0
    eye = np.eye(nx)
    for k in range(1, n):
        xp = f @ out.x_post[k - 1]
        pp = _sym(f @ out.p_post[k - 1] @ f.T + q_of(xp))
        innov = y[k] - (h @ xp).item()
        s = (h @ pp @ h.T).item() + r
        if not s > 0:
            raise EstimationError(f"innovation variance {s:g} is not positive at step {k}")
        gain = (pp @ h.T).ravel() / s
        out.x_prior[k], out.p_prior[k] = xp, pp
        out.innovations[k], out.innovation_vars[k], out.gains[k] = innov, s, gain
        out.x_post[k] = xp + gain * innov
        out.p_post[k] = _sym((eye - np.outer(gain, h)) @ pp)
    return out


def rts_backward(kp: KalmanPass, mats: ModelMatrices, pinv_fallback: bool = False) -> List[SmoothedEstimate]:
    """Backward smoothing pass; returns one estimate per day ``0..d``.

    The covariance recursion is
    ``P_{k|d} = P_{k|k} + C_k (P_{k+1|d} - P_{k+1|k}) C_k^T``, the standard
    RTS form. A plus sign inside the bracket does not give the smoother
    covariance: it grows instead of shrinking with added data.
    """
    n = kp.x_post.shape[0]
    f = mats.f
    xs = kp.x_post.copy()
    ps = kp.p_post.copy()
    for k in range(n - 2, -1, -1):
        pp = kp.p_prior[k + 1]
        try:
            # C = P_{k|k} F^T P_{k+1|k}^{-1}, via a solve against symmetric P_{k+1|k}
            c = scipy.linalg.solve(pp, f @ kp.p_post[k], assume_a="sym").T
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            if not pinv_fallback:
                raise EstimationError(f"predicted covariance singular at step {k + 1}") from exc
            c = kp.p_post[k] @ f.T @ np.linalg.pinv(pp)
        xs[k] = kp.x_post[k] + c @ (xs[k + 1] - kp.x_prior[k + 1])
        ps[k] = _sym(kp.p_post[k] + c @ (ps[k + 1] - pp) @ c.T)
    return [SmoothedEstimate(m=k, x=xs[k], cov=ps[k], method="RTS") for k in range(n)]
