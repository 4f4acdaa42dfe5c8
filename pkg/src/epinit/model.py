"""Discrete-time linear model of early epidemic spread.

State ordering throughout the package is ``(I_c, I, A, E, phi)``: cumulative
infectious incidence, infected, asymptomatic, exposed and infectious pressure.
Only ``I_c`` is measured.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple, Optional, Sequence

import numpy as np

STATE_NAMES = ("I_c", "I", "A", "E", "phi")
N_STATES = 5

#: eigenvalues with modulus below this are treated as a truncatable zero mode
TAU_ZERO = 1e-6
#: relative singular value tolerance for numerical rank
RANK_RTOL = 1e-10


class ParameterError(ValueError):
    """Raised for model parameters outside their admissible range."""


class NegativeStateError(ValueError):
    """Raised when a population-dependent quantity gets a negative state."""


@dataclass(frozen=True)
class ModelParams:
    """Rates (per day) and fractions parameterizing the linear model."""

    sigma: float
    gamma_A: float
    gamma_I: float
    f0: float
    f1: float
    beta: float
    rho: float
    theta_A: float
    theta_E: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ParameterError(f"{f.name} must be finite and >= 0, got {v!r}")
        for name in ("f0", "f1", "sigma", "gamma_A", "gamma_I"):
            v = getattr(self, name)
            if v > 1:
                raise ParameterError(f"{name} must lie in [0, 1], got {v!r}")

    def as_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})


#: parametrization used by the studies when none is given: illustrative
#: values inside the default prior ranges, not fitted to any data
DEFAULT_PARAMS = ModelParams(
    sigma=0.5, gamma_A=0.25, gamma_I=0.2, f0=0.6, f1=0.4,
    beta=1.2, rho=0.3, theta_A=0.5, theta_E=0.3,
)


@dataclass(frozen=True)
class NoiseConfig:
    """Diagonal of the constant model-uncertainty covariance and measurement variance."""

    q0_diag: tuple = (0.1,) * N_STATES
    r: float = 0.1

    def __post_init__(self):
        q0 = tuple(float(v) for v in np.broadcast_to(self.q0_diag, (N_STATES,)))
        object.__setattr__(self, "q0_diag", q0)
        if any(v < 0 or not np.isfinite(v) for v in q0):
            raise ParameterError(f"q0_diag entries must be >= 0, got {q0}")
        if self.r < 0 or not np.isfinite(self.r):
            raise ParameterError(f"r must be >= 0, got {self.r}")

    @property
    def q0(self) -> np.ndarray:
        return np.diag(self.q0_diag)


@dataclass(frozen=True)
class ModelMatrices:
    f: np.ndarray
    h: np.ndarray


def build_F(params: ModelParams) -> ModelMatrices:
    """State matrix and output row of the linear model."""
    s, gA, gI = params.sigma, params.gamma_A, params.gamma_I
    f0, f1 = params.f0, params.f1
    decay = np.exp(-params.rho)
    shed = 1.0 - decay
    f = np.array([
        [1.0, 0.0, gA * f1, s * f0, 0.0],
        [0.0, 1.0 - gI, gA * f1, s * f0, 0.0],
        [0.0, 0.0, 1.0 - gA, s * (1.0 - f0), 0.0],
        [0.0, 0.0, 0.0, 1.0 - s, params.beta],
        [0.0, shed, params.theta_A * shed, params.theta_E * shed, decay],
    ])
    h = np.zeros((1, N_STATES))
    h[0, 0] = 1.0
    return ModelMatrices(f=f, h=h)


def stoichiometry() -> np.ndarray:
    """5x6 map from per-channel event counts to state increments.

    Channels: E->I, E->A, A->I, A->recovered, I->removed, exposure.
    """
    return np.array([
        [1, 0, 1, 0, 0, 0],
        [1, 0, 1, 0, -1, 0],
        [0, 1, -1, -1, 0, 0],
        [-1, -1, 0, 0, 0, 1],
        [0, 0, 0, 0, 0, 0],
    ], dtype=float)


def channel_rates(params: ModelParams, x) -> np.ndarray:
    """Per-day event rates of the six channels at state ``x``.

    ``x`` may be a single state or an array with states along the last axis.
    """
    x = np.asarray(x, dtype=float)
    i, a, e, phi = x[..., 1], x[..., 2], x[..., 3], x[..., 4]
    s, gA = params.sigma, params.gamma_A
    return np.stack([
        s * params.f0 * e,
        s * (1.0 - params.f0) * e,
        gA * params.f1 * a,
        gA * (1.0 - params.f1) * a,
        params.gamma_I * i,
        params.beta * phi,
    ], axis=-1)


def poisson_cov(params: ModelParams, x) -> np.ndarray:
    """Covariance of the Poisson approximation error at a nonnegative state.

    Written out entry by entry; :func:`channel_rates` with
    :func:`stoichiometry` gives the same matrix as ``B diag(rates) B^T``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise NegativeStateError(f"state must be componentwise >= 0, got {x}")
    _, i, a, e, phi = x
    s, gA, gI, f0, f1 = params.sigma, params.gamma_A, params.gamma_I, params.f0, params.f1
    to_i = gA * f1 * a + s * f0 * e
    q = np.zeros((N_STATES, N_STATES))
    q[0, 0] = q[0, 1] = q[1, 0] = to_i
    q[1, 1] = to_i + gI * i
    q[0, 2] = q[2, 0] = q[1, 2] = q[2, 1] = -gA * f1 * a
    q[0, 3] = q[3, 0] = q[1, 3] = q[3, 1] = -s * f0 * e
    q[2, 2] = gA * a + s * (1.0 - f0) * e
    q[2, 3] = q[3, 2] = -s * (1.0 - f0) * e
    q[3, 3] = s * e + params.beta * phi
    return q


def process_noise_cov(params: ModelParams, x, noise: NoiseConfig) -> np.ndarray:
    """Total process noise covariance ``Q(x) = Q1(x) + Q0``."""
    return poisson_cov(params, x) + noise.q0


def observability_matrix(mats: ModelMatrices) -> np.ndarray:
    rows = [mats.h]
    for _ in range(N_STATES - 1):
        rows.append(rows[-1] @ mats.f)
    return np.vstack(rows)


def numerical_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    sv = np.linalg.svd(np.atleast_2d(a), compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


class SpectralReport(NamedTuple):
    eigenvalues: np.ndarray
    unstable: bool
    near_zero_state: Optional[int]


def spectral_report(mats: ModelMatrices, tau_zero: float = TAU_ZERO) -> SpectralReport:
    """Eigenvalues of F, an instability flag and the state tied to a near-zero mode.

    The near-zero state is the index of the largest-magnitude component of the
    left eigenvector belonging to the smallest eigenvalue with
    ``|lambda| < tau_zero``. A left null vector ``w`` gives ``w @ x_{k+1} = 0``
    whatever ``x_k`` is, so the state it points at is (nearly) always zero.
    """
    lam, vec = np.linalg.eig(mats.f.T)
    mod = np.abs(lam)
    unstable = bool(np.max(mod) > 1.0)
    near_zero = None
    small = np.flatnonzero(mod < tau_zero)
    if small.size:
        j = small[np.argmin(mod[small])]
        near_zero = int(np.argmax(np.abs(vec[:, j])))
    return SpectralReport(lam, unstable, near_zero)


def as_state(values: Sequence[float]) -> np.ndarray:
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.shape != (N_STATES,):
        raise ValueError(f"state must have {N_STATES} components, got shape {x.shape}")
    return x
