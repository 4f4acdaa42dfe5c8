"""Batch estimators that express every measurement through the state at day ``m``.

``y_k = H F^(k-m) x_m + w~_k`` for ``k_min <= k <= d``. Ordinary least squares
ignores the correlation of ``w~``; the nonlinear variant reweights with the
covariance ``Omega`` of ``w~``, which itself depends on ``x_m`` through the
state-dependent process noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from ..model import (
    N_STATES,
    ModelMatrices,
    ModelParams,
    NoiseConfig,
    SpectralReport,
    numerical_rank,
    process_noise_cov,
    spectral_report,
)
from .result import EstimationError, SmoothedEstimate

#: ridge added to an ill-conditioned Omega, relative to its largest diagonal entry
RIDGE_REL = 1e-8
#: iterative refinement steps after the unconstrained least-squares solve
REFINE_STEPS = 2


class MatrixPowers:
    """Row vectors ``H F^n`` for positive and negative ``n``.

    Negative powers come from repeated solves against one LU factorization of
    ``F``; the inverse is never formed.
    """

    def __init__(self, f: np.ndarray, h: np.ndarray):
        self.f = f
        self.h = np.asarray(h, dtype=float).reshape(-1)
        self._lu = None
        self._cache = {0: self.h}

    def _factor(self):
        if self._lu is None:
            if numerical_rank(self.f) < self.f.shape[0]:
                raise EstimationError("F is singular; negative powers are undefined")
            self._lu = scipy.linalg.lu_factor(self.f)
        return self._lu

    def row(self, n: int) -> np.ndarray:
        if n in self._cache:
            return self._cache[n]
        step = 1 if n > 0 else -1
        j = n - step
        prev = self.row(j)
        if n > 0:
            val = prev @ self.f
        else:
            # z = prev F^{-1}  <=>  F^T z^T = prev^T
            val = scipy.linalg.lu_solve(self._factor(), prev, trans=1)
        self._cache[n] = val
        return val

    def table(self, lo: int, hi: int) -> np.ndarray:
        """Rows for exponents ``lo..hi`` stacked in order."""
        return np.vstack([self.row(n) for n in range(lo, hi + 1)])

    def propagate(self, x: np.ndarray, n: int) -> np.ndarray:
        """``F^n x`` for any integer ``n``."""
        x = np.asarray(x, dtype=float)
        if n >= 0:
            return np.linalg.matrix_power(self.f, n) @ x
        lu = self._factor()
        for _ in range(-n):
            x = scipy.linalg.lu_solve(lu, x)
        return x


@dataclass
class PhiSystem:
    """Stacked backcasting rows ``H F^(k-m)`` for ``k = k_min..d``.

    When a near-zero mode of ``F`` was truncated, ``keep`` lists the retained
    state indices and the rows live in that reduced space.
    """

    phi: np.ndarray
    k_min: int
    m: int
    d: int
    keep: tuple
    truncated_state: Optional[int] = None
    y: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = field(default=None, repr=False)
    h: Optional[np.ndarray] = field(default=None, repr=False)

    def with_measurements(self, y) -> "PhiSystem":
        """Attach the measurements matching the rows (``y`` is indexed from day 0)."""
        y = np.asarray(getattr(y, "y", y), dtype=float)
        if len(y) < self.d + 1:
            raise ValueError(f"need measurements up to day {self.d}, got {len(y)} values")
        sel = y[self.k_min:self.d + 1].copy()
        return PhiSystem(self.phi, self.k_min, self.m, self.d, self.keep,
                         self.truncated_state, sel, self.f, self.h)

    def embed(self, z: np.ndarray) -> np.ndarray:
        """Map a reduced-space vector back to the 5 states (truncated state = 0)."""
        x = np.zeros(N_STATES)
        x[list(self.keep)] = z
        return x

    def powers(self) -> MatrixPowers:
        return MatrixPowers(self.f, self.h)


def build_phi(mats: ModelMatrices, m: int, d: int, k_min: int,
              spectral: Optional[SpectralReport] = None) -> PhiSystem:
    if not 0 <= k_min <= m <= d:
        raise ValueError(f"need 0 <= k_min <= m <= d, got k_min={k_min}, m={m}, d={d}")
    spectral = spectral if spectral is not None else spectral_report(mats)
    keep = tuple(range(N_STATES))
    trunc = spectral.near_zero_state
    if trunc is not None:
        keep = tuple(i for i in keep if i != trunc)
    idx = list(keep)
    f = mats.f[np.ix_(idx, idx)]
    h = mats.h[:, idx]
    pw = MatrixPowers(f, h)
    if k_min < m and numerical_rank(f) < len(idx):
        raise EstimationError("F is singular and has no truncatable near-zero mode")
    phi = pw.table(k_min - m, d - m)
    if not np.all(np.isfinite(phi)):
        raise EstimationError("backcasting rows overflow; raise k_min")
    return PhiSystem(phi, k_min, m, d, keep, trunc, None, f, h)


def _scaled_lstsq(a: np.ndarray, b: np.ndarray, nonneg: bool = False):
    norms = np.linalg.norm(a, axis=0)
    if np.any(norms == 0):
        raise EstimationError("backcasting matrix has a zero column")
    a_s = a / norms
    rank = numerical_rank(a_s)
    if rank < a.shape[1]:
        raise EstimationError(f"backcasting matrix is rank deficient: numerical rank {rank} < {a.shape[1]}")
    if nonneg:
        z, _ = scipy.optimize.nnls(a_s, b)
    else:
        z = np.linalg.lstsq(a_s, b, rcond=None)[0]
        # backcast rows span many orders of magnitude; refining with the
        # corrected semi-normal equations recovers digits the solve loses
        r = np.linalg.qr(a_s, mode="r")
        for _ in range(REFINE_STEPS):
            g = a_s.T @ (b - a_s @ z)
            z = z + scipy.linalg.solve_triangular(r, scipy.linalg.solve_triangular(r, g, trans="T"))
    return z / norms


def ols_estimate(sys: PhiSystem, nonneg: bool = False) -> SmoothedEstimate:
    """Minimize ``||Y - Phi x_m||^2``, optionally subject to ``x_m >= 0``."""
    if sys.y is None:
        raise ValueError("PhiSystem has no measurements attached")
    z = _scaled_lstsq(sys.phi, sys.y, nonneg)
    return SmoothedEstimate(m=sys.m, x=sys.embed(z), method="OLS",
                            truncated_state=sys.truncated_state)


@dataclass
class OmegaMatrix:
    omega: np.ndarray
    schedule: np.ndarray
    k_min: int
    m: int


def omega_elements(schedule, pw: MatrixPowers, m: int, k_min: int, d: int, r: float,
                   orientation: str = "corrected") -> np.ndarray:
    """Element-wise covariance of the backcasting residuals, no symmetrization.

    ``orientation="corrected"`` uses ``n~ = n`` after ``m`` and ``n~ = -n - 1``
    before it; this matches propagating the process noise forward from ``m``
    and backward towards ``k_min``. ``"printed"`` swaps the two cases and is
    kept only to demonstrate that it disagrees with simulation.
    """
    if orientation not in ("corrected", "printed"):
        raise ValueError(f"unknown orientation {orientation!r}")
    q = np.asarray(schedule, dtype=float)
    ks = np.arange(k_min, d + 1)
    out = np.zeros((ks.size, ks.size))
    for i, k in enumerate(ks):
        for j, l in enumerate(ks):
            dk, dl = k - m, l - m
            r1 = min(abs(dk), abs(dl)) if dk * dl >= 0 else 0
            val = r if k == l else 0.0
            if r1 > 0:
                n = np.arange(r1)
                after = k >= m if orientation == "corrected" else k < m
                nt = n if after else -n - 1
                if abs(dk) <= abs(dl):
                    r2, r3 = nt - k + l, k - 1 - nt
                else:
                    r2, r3 = nt - l + k, l - 1 - nt
                left = np.array([pw.row(int(e)) for e in r2])
                right = np.array([pw.row(int(e)) for e in nt])
                # the printed cases can reach day d + 1; clip so they stay comparable
                r3 = np.clip(r3, 0, q.shape[0] - 1)
                val += float(np.einsum("ni,nij,nj->", left, q[r3], right))
            out[i, j] = val
    return out


def build_omega(schedule, mats: ModelMatrices, m: int, k_min: int, d: int, r: float,
                keep=None, orientation: str = "corrected") -> OmegaMatrix:
    """Covariance of ``W = (w~_k_min, ..., w~_d)`` for the covariance set ``schedule``.

    ``schedule[j]`` is the process noise covariance of the step from day ``j``
    to ``j + 1`` (days ``0..d``). ``keep`` restricts to a truncated state subset.
    """
    q = np.asarray(schedule, dtype=float)
    if q.shape[0] < d + 1:
        raise ValueError(f"schedule must cover days 0..{d}, got {q.shape[0]} matrices")
    f, h = mats.f, mats.h
    if keep is not None:
        idx = list(keep)
        f, h = f[np.ix_(idx, idx)], h[:, idx]
        q = q[:, idx][:, :, idx]
    pw = MatrixPowers(f, h)
    om = omega_elements(q, pw, m, k_min, d, r, orientation)
    return OmegaMatrix(0.5 * (om + om.T), q, k_min, m)


@dataclass(frozen=True)
class NlsConfig:
    s_tol: float = 1e-6
    max_iters: int = 50

    def __post_init__(self):
        if not self.s_tol > 0:
            raise ValueError("s_tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def _whiten(omega: np.ndarray):
    """Cholesky factor of the unit-diagonal rescaling of ``omega`` and the scales.

    Entries for days far from ``m`` are many orders of magnitude larger than
    those near it; equilibrating first keeps the factorization well posed.
    """
    scale = np.sqrt(np.diag(omega))
    if not np.all(scale > 0):
        raise EstimationError("Omega has a non-positive diagonal entry")
    corr = omega / np.outer(scale, scale)
    try:
        return scipy.linalg.cho_factor(corr, lower=True)[0], scale
    except np.linalg.LinAlgError:
        ridge = RIDGE_REL * float(np.max(np.diag(corr)))
        try:
            low = scipy.linalg.cho_factor(corr + ridge * np.eye(corr.shape[0]), lower=True)[0]
        except np.linalg.LinAlgError as exc:
            raise EstimationError("Omega is singular even after ridge regularization") from exc
        return low, scale


def gls_solve(phi: np.ndarray, y: np.ndarray, omega: np.ndarray):
    """Minimize ``(Y - Phi x)^T Omega^{-1} (Y - Phi x)``; returns ``(x, objective)``."""
    low, scale = _whiten(omega)
    # C order keeps the least-squares call on the same LAPACK path as OLS
    a = np.ascontiguousarray(scipy.linalg.solve_triangular(low, phi / scale[:, None], lower=True))
    b = scipy.linalg.solve_triangular(low, y / scale, lower=True)
    x = _scaled_lstsq(a, b)
    res = b - a @ x
    return x, float(res @ res)


def predicted_schedule(x_m: np.ndarray, sys: PhiSystem, cov_fn: Callable) -> np.ndarray:
    """``Q(F^(k-m) x_m)`` for days ``0..d``; a prediction with any negative
    component is replaced by the zero state before evaluating ``Q``."""
    pw = sys.powers()
    z = np.asarray(x_m, dtype=float)[list(sys.keep)]
    preds = {sys.m: z}
    for k in range(sys.m + 1, sys.d + 1):
        preds[k] = sys.f @ preds[k - 1]
    for k in range(sys.m - 1, -1, -1):
        preds[k] = pw.propagate(preds[k + 1], -1)
    out = np.empty((sys.d + 1, N_STATES, N_STATES))
    zero = np.zeros(N_STATES)
    for k in range(sys.d + 1):
        full = sys.embed(preds[k])
        out[k] = cov_fn(zero if np.any(full < 0) else full)
    return out


def nls_estimate(sys: PhiSystem, mats: ModelMatrices, params: ModelParams, noise: NoiseConfig,
                 cfg: NlsConfig = NlsConfig(), cov_fn: Optional[Callable] = None) -> SmoothedEstimate:
    """Iteratively reweighted backcasting with the state-dependent covariance.

    Seeded by ordinary least squares. Each pass evaluates the noise schedule at
    the current estimate, rebuilds ``Omega``, solves the weighted problem and
    stops once the weighted objective changes by less than ``cfg.s_tol``.
    ``iterations`` counts weighted solves, so a state-independent covariance
    stops after two.
    """
    if sys.y is None:
        raise ValueError("PhiSystem has no measurements attached")
    cov_fn = cov_fn or (lambda x: process_noise_cov(params, x, noise))
    x = ols_estimate(sys).x
    s = np.inf
    history = []
    converged = False
    it = 0
    while it < cfg.max_iters:
        it += 1
        s0 = s
        sched = predicted_schedule(x, sys, cov_fn)
        om = build_omega(sched, mats, sys.m, sys.k_min, sys.d, noise.r, keep=sys.keep)
        z, s = gls_solve(sys.phi, sys.y, om.omega)
        x = sys.embed(z)
        history.append(s)
        if abs(s0 - s) < cfg.s_tol:
            converged = True
            break
    return SmoothedEstimate(m=sys.m, x=x, method="NLS", iterations=it, converged=converged,
                            truncated_state=sys.truncated_state, objective=history)
