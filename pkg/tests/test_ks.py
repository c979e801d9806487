from dataclasses import replace

import numpy as np
import pytest

from spectra_gauntlet.field import Spectrum, make_grid
from spectra_gauntlet.ks import (KsBlowUpError, KsConfig, Trajectory, advance_spectra, dealias_mask,
                                 estimate_lyapunov, etd_coefficients, etdrk4_step, generate_dataset,
                                 initial_spectrum, integrate, integrate_batch, ks_rhs_linear_symbol,
                                 solve_from, trajectory_seeds)


def step_halving_ratio(config, T=1.0, dt=0.05):
    """``err(dt) / err(dt / 2)`` against a fine reference from an attractor state."""
    g = config.grid
    c = etd_coefficients(g, dt, config.scheme)
    v0 = advance_spectra(initial_spectrum(config)[None], c, int(round(config.burn_in_time / dt)))[0]

    def run(h):
        return advance_spectra(v0, etd_coefficients(g, h, config.scheme), int(round(T / h)))

    ref = run(dt / 64)
    return np.linalg.norm(run(dt) - ref) / np.linalg.norm(run(dt / 2) - ref)


class TestConfig:
    def test_defaults(self):
        c = KsConfig()
        assert (c.grid.n, c.grid.length, c.dt, c.delta) == (256, 64.0, 0.05, 0.25)

    @pytest.mark.parametrize("kw", [dict(dt=0.0), dict(snapshot_stride=0), dict(burn_in_time=-1.0),
                                    dict(k_ic=0), dict(k_ic=90), dict(scheme="rk4")])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            KsConfig(**kw)


class TestLinearRegime:
    def test_symbol(self):
        g = make_grid(16, 2 * np.pi)
        q = np.arange(9)
        np.testing.assert_allclose(ks_rhs_linear_symbol(g).real, q ** 2 - q ** 4)

    def test_dealias_mask(self):
        m = dealias_mask(make_grid(256, 1.0))
        assert m[85] == 1.0 and m[86] == 0.0

    @pytest.mark.parametrize("scheme", ["hochbruck-ostermann", "cox-matthews"])
    def test_modes_evolve_exactly(self, scheme):
        g = make_grid(256, 64.0)
        c = etd_coefficients(g, 0.05, scheme, nonlinear=False)
        v0 = np.zeros(g.n_modes, complex)
        v0[1:40] = 1e-3 * np.exp(1j * np.arange(1, 40))
        v = advance_spectra(v0, c, 100)
        expected = v0 * np.exp(ks_rhs_linear_symbol(g).real * 5.0)
        sel = slice(1, 40)
        np.testing.assert_allclose(v[sel], expected[sel], rtol=1e-8, atol=0)


class TestStepping:
    def test_step_halving_order(self):
        assert 11.0 <= step_halving_ratio(KsConfig()) <= 21.0

    def test_step_checks_coefficients(self):
        g = make_grid(256, 64.0)
        c = etd_coefficients(g, 0.05)
        s = Spectrum(g, initial_spectrum(KsConfig()))
        with pytest.raises(ValueError):
            etdrk4_step(s, 0.1, c)
        out = etdrk4_step(s, 0.05, c)
        np.testing.assert_array_equal(out.coeffs, advance_spectra(s.coeffs, c, 1))

    def test_blow_up_detected(self):
        g = make_grid(16, 64.0)
        cfg = KsConfig(grid=g, dt=5.0, k_ic=2, ic_amplitude=50.0, burn_in_time=0.0)
        with pytest.raises(KsBlowUpError) as info:
            integrate(cfg, 500.0)
        assert info.value.last_finite_time >= 0.0


class TestTrajectories:
    def test_integrate_layout(self):
        cfg = KsConfig(burn_in_time=5.0)
        tr = integrate(cfg, 7.5)
        assert len(tr) == 10
        np.testing.assert_allclose(tr.times[[0, -1]], [5.25, 7.5])
        assert tr.fields[0].grid == cfg.grid

    def test_bounded_on_attractor(self):
        tr = integrate(KsConfig(seed=11), 150.0)
        assert np.max(np.abs(tr.snapshots)) <= 50.0
        assert np.std(tr.snapshots) > 0.5

    def test_deterministic(self):
        a = integrate_batch(KsConfig(burn_in_time=10.0), [1, 2], 12.0)
        b = integrate_batch(KsConfig(burn_in_time=10.0), [1, 2], 12.0)
        np.testing.assert_array_equal(a, b)

    def test_solve_from_continues_trajectory(self):
        cfg = KsConfig(burn_in_time=10.0)
        tr = integrate(cfg, 15.0)
        cont = solve_from(tr.snapshots[0], cfg, 4)
        np.testing.assert_allclose(cont, tr.snapshots[1:5], rtol=0, atol=1e-9)

    def test_trajectory_reshapes(self):
        g = make_grid(8, 1.0)
        tr = Trajectory(g, np.zeros(16), 0.0, 0.5)
        assert len(tr) == 2 and tr.failure_step is None


class TestDataset:
    def test_seeds_distinct_and_stable(self):
        s = trajectory_seeds(5, 50)
        assert len(set(s)) == 50 and s == trajectory_seeds(5, 50)
        assert s != trajectory_seeds(6, 50)

    def test_pairs(self, small_dataset):
        ds = small_dataset
        n_snap = ds.train_trajectories.shape[1]
        assert ds.inputs.shape == (2 * (n_snap - 1), 256)
        np.testing.assert_array_equal(ds.inputs[1], ds.targets[0])
        i, j = ds.pair_source[-1]
        np.testing.assert_array_equal(ds.targets[-1], ds.train_trajectories[i, j + 1])
        assert len(ds.test_trajectories) == 1
        assert set(ds.train_seeds).isdisjoint(ds.test_seeds)
        assert ds.manifest()["delta"] == 0.25

    def test_bitwise_reproducible(self, small_dataset):
        again = generate_dataset(small_dataset.config, n_train=2, n_test=1, horizon=10.0)
        np.testing.assert_array_equal(again.inputs, small_dataset.inputs)
        np.testing.assert_array_equal(again.test_trajectories[0].snapshots,
                                      small_dataset.test_trajectories[0].snapshots)


class TestLyapunov:
    def test_short_estimate(self):
        est = estimate_lyapunov(KsConfig(seed=2), n_renorm=200)
        assert 0.02 < est.lambda1 < 0.2
        assert est.doubling_time == pytest.approx(np.log(2) / est.lambda1)
        assert est.log_growths.shape == (200,)

    def test_rejects_perturbation_size(self):
        with pytest.raises(ValueError):
            estimate_lyapunov(KsConfig(), perturbation_size=1e-3)

    def test_seed_changes_reference(self):
        a = estimate_lyapunov(replace(KsConfig(), seed=1), n_renorm=5)
        b = estimate_lyapunov(replace(KsConfig(), seed=2), n_renorm=5)
        assert not np.array_equal(a.log_growths, b.log_growths)
