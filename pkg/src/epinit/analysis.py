"""Ensemble error studies, kernel density curves and the re-initialization study."""

from __future__ import annotations

import logging
import math
import unicodedata
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .config import ExperimentConfig
from .estimators import METHODS, EstimationError, build_phi, estimate_initial_state
from .model import STATE_NAMES, ModelParams, build_F, spectral_report
from .simulator import (
    PriorRanges,
    generate_measurements,
    sample_prior,
    simulate_ctmc,
    simulate_lti,
)

log = logging.getLogger(__name__)

SOURCES = ("LTI", "CTMC")
REINIT_STATES = ("I", "E", "A")


class DegenerateSampleError(ValueError):
    """All samples are equal, so the density is a point mass."""


@dataclass
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def quantile(self, q: float) -> float:
        """Quantile of the (renormalized) curve by inverse interpolation of its CDF."""
        steps = 0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.grid)
        cdf = np.concatenate([[0.0], np.cumsum(steps)])
        return float(np.interp(q * cdf[-1], cdf, self.grid))

    def median(self) -> float:
        return self.quantile(0.5)


def silverman_bandwidth(samples) -> float:
    x = np.asarray(samples, dtype=float)
    return 1.06 * float(np.std(x, ddof=1)) * x.size ** (-0.2)


def kde_fit(samples: Sequence[float], grid_size: int = 512) -> KdeCurve:
    """Gaussian kernel density with Silverman's bandwidth.

    The grid spans three bandwidths beyond the sample range on each side.
    """
    x = np.asarray(samples, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size < 2 or np.ptp(x) == 0:
        raise DegenerateSampleError(f"need at least two distinct samples, got {np.unique(x)[:3]}")
    # gaussian_kde scales its factor by the ddof=1 standard deviation
    kde = stats.gaussian_kde(x, bw_method=1.06 * x.size ** (-0.2))
    h = silverman_bandwidth(x)
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_size)
    return KdeCurve(grid, kde(grid), h)


@dataclass
class ErrorEnsemble:
    method: str
    state_index: int
    errors: np.ndarray

    @property
    def state(self) -> str:
        return STATE_NAMES[self.state_index]


@dataclass
class StudyResult:
    source: str
    params: ModelParams
    m: int
    ensembles: Dict[Tuple[str, str], ErrorEnsemble]
    kdes: Dict[Tuple[str, str], KdeCurve]
    failures: Dict[str, int]
    analyzed: int
    #: per analyzed realization: (index, method) -> estimate, plus truth
    estimates: List[dict] = field(default_factory=list)

    def summary(self) -> List[dict]:
        rows = []
        for method in METHODS:
            for state in STATE_NAMES:
                ens = self.ensembles.get((method, state))
                err = ens.errors if ens is not None else np.array([])
                rows.append({
                    "method": method,
                    "state": state,
                    "mean_err": float(np.mean(err)) if err.size else float("nan"),
                    "std_err": float(np.std(err, ddof=1)) if err.size > 1 else float("nan"),
                    "mae": float(np.median(np.abs(err))) if err.size else float("nan"),
                    "n_failed": self.failures.get(method, 0),
                })
        return rows


def study_params(cfg: ExperimentConfig, ranges: PriorRanges = PriorRanges()) -> ModelParams:
    if cfg.params is not None:
        return cfg.params
    return sample_prior(ranges, np.random.SeedSequence([cfg.seed, 0]))


def realization_seeds(seed: int, n: int):
    return np.random.SeedSequence([seed, 1]).spawn(n)


def simulate_realization(source: str, params: ModelParams, cfg: ExperimentConfig, seed):
    """One synthetic data set: trajectory and measurements.

    Measurements of the chain are exact case counts; the linear model's
    carry Gaussian noise of variance ``cfg.r``.
    """
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    # spawn from a copy: spawning advances the parent's child counter
    seed = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    sim_seed, meas_seed = seed.spawn(2)
    if source == "LTI":
        traj = simulate_lti(params, cfg.x0, cfg.d, cfg.noise, sim_seed)
        y = generate_measurements(traj, cfg.noise, meas_seed)
    else:
        x0 = np.array(cfg.x0)
        x0[:4] = np.round(x0[:4])
        traj = simulate_ctmc(params, x0, cfg.d, cfg.population, sim_seed)
        y = generate_measurements(traj, cfg.noise, noise_free=True)
    return traj, y


def _simulate_one(args):
    traj, y = simulate_realization(*args)
    return traj.states, y.y


def _estimate_one(args):
    params, cfg, y = args
    mats = build_F(params)
    try:
        phi = build_phi(mats, cfg.m, cfg.d, cfg.k_min, spectral_report(mats))
    except EstimationError as exc:
        phi = exc
    out = {}
    for method in METHODS:
        try:
            if method != "RTS" and isinstance(phi, Exception):
                raise phi
            est = estimate_initial_state(method, y, params, cfg.noise, cfg, phi=phi if method != "RTS" else None)
            out[method] = est
        except (EstimationError, np.linalg.LinAlgError) as exc:
            out[method] = exc
    return out


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves job order, so results do not depend on completion order
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def run_error_study(cfg: ExperimentConfig, ranges: PriorRanges = PriorRanges(),
                    source: str = "LTI") -> StudyResult:
    """Simulate ``cfg.realizations`` data sets and record estimation errors at day ``m``.

    For the Markov chain source only the ``cfg.top_fraction`` realizations with
    the largest final cumulative incidence are analyzed, mimicking the choice
    of regions where the outbreak took hold.
    """
    source = source.upper()
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}; expected LTI or CTMC")
    params = study_params(cfg, ranges)
    seeds = realization_seeds(cfg.seed, cfg.realizations)
    sims = _map(_simulate_one, [(source, params, cfg, s) for s in seeds], cfg.workers)

    idx = list(range(len(sims)))
    if source == "CTMC":
        keep = max(1, math.ceil(cfg.top_fraction * len(sims)))
        # stable sort: ties keep realization order
        idx = sorted(idx, key=lambda i: -sims[i][0][-1, 0])[:keep]
        idx.sort()

    results = _map(_estimate_one, [(params, cfg, sims[i][1]) for i in idx], cfg.workers)

    errors = {method: [] for method in METHODS}
    failures = {method: 0 for method in METHODS}
    records = []
    for i, res in zip(idx, results):
        truth = sims[i][0][cfg.m]
        rec = {"realization": i, "truth": truth}
        for method in METHODS:
            est = res[method]
            if isinstance(est, Exception):
                failures[method] += 1
                log.warning("realization %d: %s failed: %s", i, method, est)
                continue
            errors[method].append(est.x - truth)
            rec[method] = est
        records.append(rec)

    ensembles, kdes = {}, {}
    for method in METHODS:
        arr = np.array(errors[method]).reshape(-1, len(STATE_NAMES))
        for s, state in enumerate(STATE_NAMES):
            ens = ErrorEnsemble(method, s, arr[:, s])
            ensembles[(method, state)] = ens
            try:
                kdes[(method, state)] = kde_fit(ens.errors, cfg.grid_size)
            except DegenerateSampleError:
                log.warning("%s/%s: fewer than two distinct errors, KDE skipped", method, state)
    return StudyResult(source, params, cfg.m, ensembles, kdes, failures, len(idx), records)


#: built-in (I, E, A) estimates per region and method for the re-initialization study
REGION_ESTIMATES = {
    "Stockholm": {"RTS": (2, 3, 3), "OLS": (0, 4, 4), "NLS": (0, 4, 4)},
    "Skåne": {"RTS": (24, 28, 24), "OLS": (7, 30, 31), "NLS": (12, 30, 29)},
    "Västra Götaland": {"RTS": (24, 39, 30), "OLS": (36, 40, 28), "NLS": (29, 40, 31)},
}


def ascii_key(name: str) -> str:
    """Lower-case ASCII folding of a region name ("Skåne" -> "skane")."""
    folded = unicodedata.normalize("NFKD", name).encode("ascii", "ignore").decode()
    return "_".join(folded.lower().split())


def lookup_region(table: dict, name: str):
    by_key = {ascii_key(k): k for k in table}
    key = by_key.get(ascii_key(name))
    if key is None:
        raise KeyError(f"unknown region {name!r}; available: {', '.join(table)}")
    return key, table[key]


def reinit_state(i: int, e: int, a: int, params: ModelParams) -> np.ndarray:
    """Full chain state from an (I, E, A) estimate.

    Cumulative incidence starts at ``I``. The infectious pressure is set to the
    level it holds relative to current shedding while the outbreak grows at
    the dominant eigenvalue of ``F``; with no growth mode it falls back to the
    constant-population equilibrium.
    """
    decay = np.exp(-params.rho)
    shedding = i + params.theta_A * a + params.theta_E * e
    growth = float(np.max(np.abs(np.linalg.eigvals(build_F(params).f))))
    growth = max(growth, 1.0)
    phi = (1.0 - decay) * shedding / (growth - decay)
    return np.array([i, i, a, e, phi], dtype=float)


@dataclass
class ReinitResult:
    log_pops: Dict[Tuple[str, str], np.ndarray]
    kdes: Dict[Tuple[str, str], Optional[KdeCurve]]

    def median(self, method: str, state: str) -> float:
        kde = self.kdes[(method, state)]
        return kde.median() if kde is not None else float(self.log_pops[(method, state)][0])


def _reinit_one(args):
    params, x0, d, population, ss = args
    traj = simulate_ctmc(params, x0, d, population, ss)
    return traj.states[-1]


def run_reinit_study(estimates: Dict[str, Sequence[int]], params: ModelParams, n: int = 50,
                     d: int = 42, population: int = 1_000_000, seed: int = 0,
                     grid_size: int = 512, workers: int = 1) -> ReinitResult:
    """Simulate the chain ``n`` times from each method's (I, E, A) initial condition
    and fit densities of ``log10(population + 1)`` on day ``d``.

    Realization ``j`` uses the same seed for every method.
    """
    log_pops, kdes = {}, {}
    seeds = realization_seeds(seed, n)
    for method, iea in estimates.items():
        iea = tuple(int(v) for v in iea)
        if any(v < 0 for v in iea):
            raise ValueError(f"{method}: initial condition must be nonnegative, got {iea}")
        x0 = reinit_state(*iea, params)
        finals = np.array(_map(_reinit_one, [(params, x0, d, population, s) for s in seeds], workers))
        for state in REINIT_STATES:
            col = STATE_NAMES.index(state)
            vals = np.log10(finals[:, col] + 1.0)
            log_pops[(method, state)] = vals
            try:
                kdes[(method, state)] = kde_fit(vals, grid_size)
            except DegenerateSampleError:
                log.warning("%s/%s: all realizations equal (%g); point mass", method, state, vals[0])
                kdes[(method, state)] = None
    return ReinitResult(log_pops, kdes)
