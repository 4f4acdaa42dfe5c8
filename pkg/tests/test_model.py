import numpy as np
import pytest
from hypothesis import given

from epinit.model import (
    DEFAULT_PARAMS,
    ModelParams,
    NegativeStateError,
    NoiseConfig,
    ParameterError,
    build_F,
    channel_rates,
    numerical_rank,
    observability_matrix,
    poisson_cov,
    process_noise_cov,
    spectral_report,
    stoichiometry,
)
from epinit.simulator import PriorRanges, sample_prior
from oracles import transition_matrix
from strategies import params_strategy, state_strategy


def frozen(**kw):
    base = dict(sigma=0.0, gamma_A=0.0, gamma_I=0.0, f0=0.6, f1=0.4, beta=0.0, rho=0.0,
                theta_A=0.7, theta_E=0.2)
    base.update(kw)
    return ModelParams(**base)


class TestBuildF:
    def test_frozen_transitions_give_identity(self):
        assert np.array_equal(build_F(frozen()).f, np.eye(5))

    def test_generic_entries(self):
        f = build_F(DEFAULT_PARAMS).f
        assert f[0, 2] == pytest.approx(0.1, abs=1e-15)
        assert f[0, 3] == pytest.approx(0.3, abs=1e-15)
        assert f[4, 4] == pytest.approx(np.exp(-0.3), abs=1e-15)

    def test_output_row(self):
        assert np.array_equal(build_F(DEFAULT_PARAMS).h, [[1, 0, 0, 0, 0]])

    def test_entries_match_reference_over_prior_draws(self):
        for seed in range(1000):
            p = sample_prior(PriorRanges(), seed)
            np.testing.assert_allclose(build_F(p).f, transition_matrix(p), rtol=0, atol=1e-15)

    @given(params_strategy)
    def test_entries_nonnegative(self, p):
        assert np.all(build_F(p).f >= 0)

    @pytest.mark.parametrize("bad", [dict(f0=1.5), dict(beta=-0.1), dict(sigma=float("nan"))])
    def test_invalid_params_rejected(self, bad):
        with pytest.raises(ParameterError):
            ModelParams(**(DEFAULT_PARAMS.as_dict() | bad))


class TestProcessNoise:
    def test_zero_state_gives_constant_part(self):
        q = process_noise_cov(DEFAULT_PARAMS, np.zeros(5), NoiseConfig((0.1, 0.2, 0.3, 0.4, 0.5), 1.0))
        np.testing.assert_array_equal(q, np.diag([0.1, 0.2, 0.3, 0.4, 0.5]))

    def test_single_asymptomatic(self):
        q = process_noise_cov(DEFAULT_PARAMS, [0, 0, 1, 0, 0], NoiseConfig(0.0, 0.1))
        assert q[0, 0] == pytest.approx(0.1)
        assert q[2, 2] == pytest.approx(0.25)
        assert q[0, 2] == pytest.approx(-0.1)

    @given(params_strategy, state_strategy)
    def test_last_row_and_column_zero(self, p, x):
        q = poisson_cov(p, x)
        assert np.all(q[4] == 0) and np.all(q[:, 4] == 0)

    @given(params_strategy, state_strategy)
    def test_symmetric_psd(self, p, x):
        q = poisson_cov(p, x)
        assert np.array_equal(q, q.T)
        scale = max(1.0, np.abs(q).max())
        assert np.linalg.eigvalsh(q).min() >= -1e-12 * scale

    @given(params_strategy, state_strategy)
    def test_channel_decomposition(self, p, x):
        b = stoichiometry()
        expected = b @ np.diag(channel_rates(p, x)) @ b.T
        np.testing.assert_allclose(poisson_cov(p, x), expected, rtol=1e-12, atol=1e-12)

    def test_stoichiometry_reproduces_drift(self):
        # mean increment B @ rates equals (F - I) x on the four compartments
        # that the channels move (the pressure has no channel)
        for seed in range(20):
            p = sample_prior(PriorRanges(), seed)
            x = np.random.default_rng(seed).uniform(0, 50, 5)
            drift = (build_F(p).f - np.eye(5)) @ x
            np.testing.assert_allclose((stoichiometry() @ channel_rates(p, x))[:4], drift[:4], atol=1e-10)

    def test_negative_state_rejected(self):
        with pytest.raises(NegativeStateError):
            poisson_cov(DEFAULT_PARAMS, [0, -1, 0, 0, 0])


class TestObservability:
    def test_identity(self):
        o = observability_matrix(build_F(frozen()))
        assert np.all(o == o[0]) and numerical_rank(o) == 1

    def test_no_detection_paths(self):
        mats = build_F(ModelParams(**(DEFAULT_PARAMS.as_dict() | dict(f0=0.0, f1=0.0))))
        o = observability_matrix(mats)
        np.testing.assert_array_equal(o, np.tile(mats.h, (5, 1)))
        assert numerical_rank(o) == 1

    def test_generic_full_rank(self):
        assert numerical_rank(observability_matrix(build_F(DEFAULT_PARAMS))) == 5


class TestSpectral:
    def test_identity(self):
        rep = spectral_report(build_F(frozen()))
        np.testing.assert_allclose(rep.eigenvalues, 1.0)
        assert not rep.unstable and rep.near_zero_state is None

    def test_generic_one_growth_mode(self):
        rep = spectral_report(build_F(DEFAULT_PARAMS))
        assert rep.unstable
        assert np.sum(np.abs(rep.eigenvalues) > 1) == 1

    def test_fast_incubation_flag_follows_threshold(self):
        mats = build_F(ModelParams(**(DEFAULT_PARAMS.as_dict() | dict(sigma=1.0, f0=1.0))))
        assert mats.f[3, 3] == 0
        rep = spectral_report(mats)
        small = np.abs(rep.eigenvalues).min()
        assert (rep.near_zero_state is not None) == (small < 1e-6)
        # a looser threshold always flags the smallest mode
        assert spectral_report(mats, tau_zero=small * 1.01).near_zero_state is not None

    def test_exact_zero_mode_points_at_exposed(self):
        # no transmission and a one-day incubation: E is identically zero after a step
        mats = build_F(ModelParams(**(DEFAULT_PARAMS.as_dict() | dict(sigma=1.0, beta=0.0))))
        assert spectral_report(mats).near_zero_state == 3
