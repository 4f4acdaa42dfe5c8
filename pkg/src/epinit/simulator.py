"""Synthetic epidemic data: linear model with Poisson channel noise, and a
daily tau-leap Markov chain with susceptible depletion."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .model import (
    N_STATES,
    ModelMatrices,
    ModelParams,
    NoiseConfig,
    ParameterError,
    as_state,
    build_F,
    channel_rates,
    stoichiometry,
)


@dataclass
class Trajectory:
    """States at days ``0..d`` as a ``(d + 1, 5)`` array."""

    states: np.ndarray
    params: ModelParams
    seed: Optional[int] = None
    kind: str = "lti"
    #: CTMC bookkeeping (S, removed, recovered per day); empty for LTI runs
    aux: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.states.shape[0] - 1


@dataclass
class MeasurementSeries:
    y: np.ndarray
    r: float = 0.0
    label: str = ""

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class PriorRanges:
    """Uniform prior interval per parameter.

    The defaults cover plausible early-outbreak values; they are a
    starting point for experiments, not fitted distributions.
    """

    sigma: tuple = (0.2, 0.8)
    gamma_A: tuple = (0.1, 0.5)
    gamma_I: tuple = (0.1, 0.5)
    f0: tuple = (0.3, 0.9)
    f1: tuple = (0.1, 0.7)
    beta: tuple = (0.5, 2.0)
    rho: tuple = (0.2, 1.0)
    theta_A: tuple = (0.2, 1.0)
    theta_E: tuple = (0.2, 1.0)

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if lo > hi:
                raise ParameterError(f"{f.name}: lower bound {lo} exceeds upper bound {hi}")
        # constraints are per-field boxes, so checking both corners suffices
        ModelParams(**{f.name: getattr(self, f.name)[0] for f in fields(self)})
        ModelParams(**{f.name: getattr(self, f.name)[1] for f in fields(self)})


def sample_prior(ranges: PriorRanges, seed) -> ModelParams:
    rng = np.random.default_rng(seed)
    draws = {}
    for f in fields(ranges):
        lo, hi = getattr(ranges, f.name)
        draws[f.name] = float(lo) if lo == hi else float(rng.uniform(lo, hi))
    return ModelParams(**draws)


def _check_horizon(d):
    if int(d) != d or d < 1:
        raise ValueError(f"horizon d must be an integer >= 1, got {d!r}")
    return int(d)


def lti_increments(params: ModelParams, x, noise: NoiseConfig, rng, size=None,
                   mats: Optional[ModelMatrices] = None) -> np.ndarray:
    """One-step noisy increments ``x_{k+1} - x_k`` from state ``x`` (no clamping).

    Channel counts are Poisson at the rates of ``x``; shifting them by their
    mean gives process noise with covariance ``B diag(rates) B^T``. The
    constant uncertainty term is drawn as independent Gaussians with
    variances ``q0_diag``.
    """
    mats = mats or build_F(params)
    x = as_state(x)
    shape = (N_STATES,) if size is None else (size, N_STATES)
    rates = channel_rates(params, x)
    counts = rng.poisson(rates, size=None if size is None else (size, rates.size))
    w1 = (counts - rates) @ stoichiometry().T
    w0 = rng.standard_normal(shape) * np.sqrt(noise.q0_diag)
    return (mats.f @ x - x) + w1 + w0


def simulate_lti(params: ModelParams, x0, d: int, noise: NoiseConfig, seed,
                 stochastic: bool = True) -> Trajectory:
    """Propagate the linear model with state-dependent Poisson noise.

    States driven negative are clamped to zero after each step.
    """
    d = _check_horizon(d)
    x0 = as_state(x0)
    if np.any(x0 < 0):
        raise ValueError(f"initial state must be >= 0, got {x0}")
    mats = build_F(params)
    rng = np.random.default_rng(seed)
    states = np.empty((d + 1, N_STATES))
    states[0] = x0
    for k in range(d):
        x = states[k]
        if stochastic:
            states[k + 1] = np.maximum(x + lti_increments(params, x, noise, rng, mats=mats), 0.0)
        else:
            states[k + 1] = mats.f @ x
    return Trajectory(states, params, seed=seed, kind="lti")


def _split(rng, total, p):
    return rng.binomial(total, p) if total > 0 else 0


def simulate_ctmc(params: ModelParams, x0, d: int, population: int, seed) -> Trajectory:
    """Daily tau-leap of the compartment chain.

    Each channel fires a Poisson number of times at the rate of the current
    day. Channels draining the same compartment are drawn as one Poisson total,
    capped at the compartment size, then split binomially; uncapped this is
    identical in law to independent Poisson channels. Exposure is scaled by
    the susceptible fraction and capped at ``S``.
    """
    d = _check_horizon(d)
    x0 = as_state(x0)
    comp = x0[:4]
    if np.any(x0 < 0) or np.any(comp != np.round(comp)):
        raise ValueError(f"infeasible initial state {x0}: compartments must be nonnegative integers")
    population = int(population)
    infected0 = int(x0[1] + x0[2] + x0[3])
    if population < infected0:
        raise ValueError(f"population {population} smaller than initial I + A + E = {infected0}")

    rng = np.random.default_rng(seed)
    s_, gA, gI = params.sigma, params.gamma_A, params.gamma_I
    decay = np.exp(-params.rho)

    ic, i, a, e = (int(v) for v in comp)
    phi = float(x0[4])
    sus, removed, recovered = population - infected0, 0, 0

    states = np.empty((d + 1, N_STATES))
    aux = {"S": np.empty(d + 1, dtype=np.int64),
           "removed": np.empty(d + 1, dtype=np.int64),
           "recovered": np.empty(d + 1, dtype=np.int64)}

    def record(k):
        states[k] = (ic, i, a, e, phi)
        aux["S"][k], aux["removed"][k], aux["recovered"][k] = sus, removed, recovered

    record(0)
    for k in range(d):
        leave_e = min(rng.poisson(s_ * e), e)
        e_to_i = _split(rng, leave_e, params.f0)
        e_to_a = leave_e - e_to_i

        leave_a = min(rng.poisson(gA * a), a)
        a_to_i = _split(rng, leave_a, params.f1)
        a_to_r = leave_a - a_to_i

        i_out = min(rng.poisson(gI * i), i)
        frac = sus / population if population > 0 else 0.0
        exposed = min(rng.poisson(params.beta * phi * frac), sus)

        phi = decay * phi + (1.0 - decay) * (i + params.theta_A * a + params.theta_E * e)
        new_i = e_to_i + a_to_i
        ic += new_i
        i += new_i - i_out
        a += e_to_a - leave_a
        e += exposed - leave_e
        sus -= exposed
        removed += i_out
        recovered += a_to_r
        record(k + 1)
    return Trajectory(states, params, seed=seed, kind="ctmc", aux=aux)


def generate_measurements(traj: Trajectory, noise: NoiseConfig, seed=None,
                          noise_free: bool = False) -> MeasurementSeries:
    """Cumulative incidence plus zero-mean Gaussian noise of variance ``noise.r``."""
    ic = traj.states[:, 0].astype(float)
    if noise_free or noise.r == 0:
        return MeasurementSeries(ic.copy(), r=0.0 if noise_free else noise.r)
    rng = np.random.default_rng(seed)
    return MeasurementSeries(ic + np.sqrt(noise.r) * rng.standard_normal(ic.shape), r=noise.r)
