import logging

import numpy as np
import pytest
from scipy import stats

from epinit.analysis import (
    REGION_ESTIMATES,
    DegenerateSampleError,
    ascii_key,
    kde_fit,
    lookup_region,
    reinit_state,
    run_error_study,
    run_reinit_study,
    silverman_bandwidth,
)
from epinit.config import ExperimentConfig
from epinit.model import DEFAULT_PARAMS, build_F
from epinit.simulator import PriorRanges


class TestKde:
    def test_standard_normal_peak(self):
        x = np.random.default_rng(0).standard_normal(10_000)
        kde = kde_fit(x)
        assert np.interp(0.0, kde.grid, kde.density) == pytest.approx(1 / np.sqrt(2 * np.pi), rel=0.1)

    def test_two_points_symmetric(self):
        kde = kde_fit([0.0, 1.0])
        mean = np.trapezoid(kde.grid * kde.density, kde.grid) / np.trapezoid(kde.density, kde.grid)
        assert mean == pytest.approx(0.5, abs=1e-6)
        np.testing.assert_allclose(kde.density, kde.density[::-1], rtol=1e-12)

    def test_integrates_to_one(self):
        x = np.random.default_rng(1).exponential(size=300)
        assert kde_fit(x).integral() == pytest.approx(1.0, abs=0.01)

    def test_bandwidth_rule(self):
        x = np.random.default_rng(2).normal(3, 2, 500)
        assert silverman_bandwidth(x) == pytest.approx(1.06 * np.std(x, ddof=1) * 500 ** -0.2)
        kde = kde_fit(x, grid_size=64)
        assert kde.grid.size == 64
        assert kde.grid[0] == pytest.approx(x.min() - 3 * kde.bandwidth)
        assert kde.grid[-1] == pytest.approx(x.max() + 3 * kde.bandwidth)

    def test_median_of_symmetric_sample(self):
        x = np.random.default_rng(3).normal(5, 1, 2000)
        assert kde_fit(x).median() == pytest.approx(np.median(x), abs=0.05)

    @pytest.mark.parametrize("samples", [[2.0, 2.0, 2.0], [1.0], []])
    def test_degenerate(self, samples):
        with pytest.raises(DegenerateSampleError):
            kde_fit(samples)


class TestErrorStudy:
    def test_single_realization_skips_kde(self, caplog):
        cfg = ExperimentConfig(realizations=1, seed=3)
        with caplog.at_level(logging.WARNING, logger="epinit.analysis"):
            res = run_error_study(cfg)
        assert all(e.errors.size <= 1 for e in res.ensembles.values())
        assert res.kdes == {}
        assert "KDE skipped" in caplog.text

    def test_sizes_and_determinism(self):
        cfg = ExperimentConfig(realizations=8, seed=4)
        a, b = run_error_study(cfg), run_error_study(cfg)
        for key, ens in a.ensembles.items():
            assert ens.errors.size == 8 - a.failures[key[0]]
            assert np.array_equal(ens.errors, b.ensembles[key].errors)
        assert {r["method"] for r in a.summary()} == {"RTS", "OLS", "NLS"}
        assert len(a.summary()) == 15

    def test_worker_count_does_not_change_results(self):
        a = run_error_study(ExperimentConfig(realizations=6, seed=5, workers=1))
        b = run_error_study(ExperimentConfig(realizations=6, seed=5, workers=2))
        for key in a.ensembles:
            assert np.array_equal(a.ensembles[key].errors, b.ensembles[key].errors)

    def test_chain_keeps_top_fraction(self):
        cfg = ExperimentConfig(realizations=9, seed=6, population=100_000, q0_diag=(2.0,) * 5,
                               r=0.5, top_fraction=0.66)
        res = run_error_study(cfg, source="ctmc")
        assert res.analyzed == 6 and res.source == "CTMC"

    def test_prior_params(self):
        res = run_error_study(ExperimentConfig(realizations=3, seed=7, params=None), PriorRanges())
        assert res.params != DEFAULT_PARAMS

    def test_unknown_source(self):
        with pytest.raises(ValueError):
            run_error_study(ExperimentConfig(realizations=2), source="ode")


class TestReinit:
    def test_table_regions(self):
        assert REGION_ESTIMATES["Skåne"]["RTS"] == (24, 28, 24)
        assert lookup_region(REGION_ESTIMATES, "skane")[0] == "Skåne"
        assert lookup_region(REGION_ESTIMATES, "Vastra Gotaland")[0] == "Västra Götaland"
        assert ascii_key("Västra Götaland") == "vastra_gotaland"
        with pytest.raises(KeyError):
            lookup_region(REGION_ESTIMATES, "Uppsala")

    def test_initial_state(self):
        x = reinit_state(2, 3, 3, DEFAULT_PARAMS)
        assert x[0] == x[1] == 2 and x[2] == 3 and x[3] == 3 and x[4] > 0
        # the pressure scales linearly with the populations
        np.testing.assert_allclose(reinit_state(4, 6, 6, DEFAULT_PARAMS)[4], 2 * x[4])
        assert reinit_state(0, 0, 0, DEFAULT_PARAMS)[4] == 0

    def test_pressure_consistent_with_growth(self):
        # along the growth mode, phi_{k+1} / phi_k equals the dominant eigenvalue
        p = DEFAULT_PARAMS
        f = build_F(p).f
        lam, vec = np.linalg.eig(f)
        v = np.real(vec[:, np.argmax(np.abs(lam))])
        v = v / v[1]
        x = reinit_state(v[1], v[3], v[2], p)
        np.testing.assert_allclose(x[4], v[4], rtol=1e-10)

    def test_identical_conditions_indistinguishable(self):
        res = run_reinit_study({"RTS": (5, 6, 5), "OLS": (5, 6, 5)}, DEFAULT_PARAMS, n=30, d=20,
                               population=100_000, seed=1)
        for state in ("I", "E", "A"):
            a, b = res.log_pops[("RTS", state)], res.log_pops[("OLS", state)]
            assert stats.ks_2samp(a, b).pvalue > 0.01

    def test_zero_condition_is_point_mass(self):
        res = run_reinit_study({"RTS": (0, 0, 0)}, DEFAULT_PARAMS, n=5, d=10, population=1000, seed=2)
        for state in ("I", "E", "A"):
            assert res.kdes[("RTS", state)] is None
            assert np.all(res.log_pops[("RTS", state)] == 0)
            assert res.median("RTS", state) == 0

    def test_negative_condition_rejected(self):
        with pytest.raises(ValueError):
            run_reinit_study({"RTS": (-1, 0, 0)}, DEFAULT_PARAMS, n=2, d=5)


@pytest.mark.slow
def test_weighted_backcast_tracks_incidence_better_than_linear():
    res = run_error_study(ExperimentConfig(realizations=40, seed=11, workers=2))
    mae = {r["method"]: r["mae"] for r in res.summary() if r["state"] == "I_c"}
    assert mae["NLS"] < mae["OLS"]
