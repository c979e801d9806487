import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectra_gauntlet.field import make_grid
from spectra_gauntlet.nn import NetConfig, init_network
from spectra_gauntlet.ntk import (CutoffQuery, EmpiricalNTK, GramMatrix, NtkSpectrum, equal_amplitude_target,
                                  fit_decay_exponent, fourier_eigenvalue, fourier_modes, fourier_spectrum,
                                  median_convergence_steps, ntk_gram, resolved_cutoff,
                                  run_spectral_bias_experiment)


@pytest.fixture(scope="module")
def small_gram():
    params = init_network(NetConfig((1, 32, 32, 1), seed=0))
    return ntk_gram(params, make_grid(64, 1.0))


class TestGram:
    def test_symmetric_psd(self, small_gram):
        K = small_gram.entries
        assert np.max(np.abs(K - K.T)) <= 1e-10 * np.max(np.abs(K))
        eig = np.linalg.eigvalsh(K)
        assert eig[0] >= -1e-8 * eig[-1]

    def test_rejects_asymmetric(self):
        K = np.eye(4)
        K[0, 1] = 0.5
        with pytest.raises(ValueError, match="symmetric"):
            GramMatrix(make_grid(4, 1.0), K)

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError, match="semi-definite"):
            GramMatrix(make_grid(4, 1.0), np.diag([1.0, 1.0, 1.0, -1.0]))

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            GramMatrix(make_grid(4, 1.0), np.eye(3))


class TestRayleigh:
    def test_modes_unit_norm(self):
        c, s = fourier_modes(make_grid(32, 1.0), 3)
        assert np.linalg.norm(c) == pytest.approx(1.0) and np.linalg.norm(s) == pytest.approx(1.0)
        assert abs(c @ s) < 1e-14

    def test_circulant_kernel_exact(self):
        # A circulant kernel is diagonal in the Fourier basis: quotients are
        # its DFT eigenvalues, identical for cos and sin.
        g = make_grid(32, 1.0)
        lam = 1.0 / (1.0 + np.arange(17) ** 2)
        row = np.fft.irfft(lam, 32)
        K = np.array([np.roll(row, i) for i in range(32)])
        gram = GramMatrix(g, K)
        for k in (1, 4, 9):
            for phase in ("cos", "sin", "average"):
                assert fourier_eigenvalue(gram, k, phase) == pytest.approx(lam[k], rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(1e-3, 1e3), st.integers(1, 31))
    def test_positive_scaling(self, small_gram, c, k):
        scaled = GramMatrix(small_gram.points, c * small_gram.entries)
        assert fourier_eigenvalue(scaled, k) == pytest.approx(c * fourier_eigenvalue(small_gram, k), rel=1e-12)

    @pytest.mark.parametrize("k", [0, 32, 40])
    def test_wavenumber_range(self, small_gram, k):
        with pytest.raises(ValueError):
            fourier_eigenvalue(small_gram, k)

    def test_unknown_phase(self, small_gram):
        with pytest.raises(ValueError):
            fourier_eigenvalue(small_gram, 1, "tan")


class TestDecayFit:
    @pytest.mark.parametrize("alpha", [0.5, 2.0, 3.7])
    def test_recovers_planted_exponent(self, alpha):
        ks = np.arange(1, 33)
        fit = fit_decay_exponent(NtkSpectrum(ks, 5.0 * ks ** (-alpha)), (1, 32))
        assert fit.alpha == pytest.approx(alpha, abs=1e-12)
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)

    def test_rejects_non_positive(self):
        ks = np.arange(1, 9)
        lam = ks ** -2.0
        lam[3] = 0.0
        with pytest.raises(ValueError, match="non-positive"):
            fit_decay_exponent(NtkSpectrum(ks, lam), (1, 8))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_decay_exponent(NtkSpectrum([1, 2, 3], [1.0, 0.5, 0.3]), (1, 3))

    def test_spectrum_validation(self):
        with pytest.raises(ValueError):
            NtkSpectrum([2, 1], [1.0, 1.0])
        with pytest.raises(KeyError):
            NtkSpectrum([1, 2], [1.0, 1.0]).eigenvalue(5)


class TestCutoff:
    def test_arithmetic(self):
        eps = 0.5
        t = 100 * np.log(1 / eps)
        assert resolved_cutoff(CutoffQuery(eta=1.0, t=t, epsilon=eps, alpha=2.0)) == pytest.approx(10.0, rel=1e-14)

    @pytest.mark.parametrize("kw", [dict(eta=0.0), dict(t=-1.0), dict(alpha=0.0), dict(epsilon=1.0),
                                    dict(epsilon=0.0)])
    def test_rejects_invalid(self, kw):
        base = dict(eta=1.0, t=1.0, epsilon=0.1, alpha=2.0)
        base.update(kw)
        with pytest.raises(ValueError):
            CutoffQuery(**base)


class TestSpectralBias:
    def test_target(self):
        x = np.arange(256) / 256
        y = equal_amplitude_target(x)
        amps = 2 * np.abs(np.fft.rfft(y) / 256)
        np.testing.assert_allclose(amps[[1, 3, 7, 15]], 1.0, rtol=1e-12)
        assert np.sum(amps > 1e-10) == 4

    def test_small_run_and_censoring(self):
        res = run_spectral_bias_experiment(NetConfig((1, 16, 16, 1), seed=0), make_grid(64, 1.0),
                                           lr=1e-3, steps=30, fit_range=(1, 16))
        assert res.censored == [1, 3, 7, 15]
        assert all(v is None for v in res.observed_ratios.values())
        assert res.theory_ratios[1] == 1.0
        out = res.to_json()
        assert out["censored"] == [1, 3, 7, 15] and out["t_k"]["1"] is None

    def test_median_keeps_censoring(self):
        class R:
            def __init__(self, steps):
                self.convergence_steps = steps

        med = median_convergence_steps([R({1: 10, 3: None}), R({1: 20, 3: 5}), R({1: 30, 3: 6})])
        assert med == {1: 20.0, 3: None}

    def test_rejects_other_domain(self):
        with pytest.raises(ValueError):
            run_spectral_bias_experiment(NetConfig((1, 4, 1)), make_grid(16, 2.0), steps=1)


class TestEstimator:
    def test_fit_sets_alpha(self):
        est = EmpiricalNTK(hidden_layer_sizes=(32, 32), max_wavenumber=16, fit_range=(1, 16))
        est.fit(np.arange(64) / 64)
        assert est.alpha_ > 0 and est.spectrum_.wavenumbers[-1] == 16
        assert est.get_params()["max_wavenumber"] == 16

    def test_rejects_non_grid_points(self):
        with pytest.raises(ValueError):
            EmpiricalNTK().fit(np.linspace(0, 1, 64))

    def test_spectrum_reproducible(self):
        g = make_grid(64, 1.0)
        a = fourier_spectrum(ntk_gram(init_network(NetConfig((1, 16, 1), seed=5)), g), range(1, 9))
        b = fourier_spectrum(ntk_gram(init_network(NetConfig((1, 16, 1), seed=5)), g), range(1, 9))
        np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
