import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spectra_gauntlet.hybrid import (CostModel, HybridSchedule, Trigger, attractor_trigger, cost_sweep,
                                     dissipation_energy, evaluate_trigger, hybrid_rollout,
                                     ks_residual_norm, net_speedup, solver_reference)
from spectra_gauntlet.ks import KsConfig, Trajectory, solve_from
from spectra_gauntlet.surrogate import rollout


@pytest.fixture(scope="module")
def setup(small_operator, small_dataset):
    params = small_operator[0]
    truth = small_dataset.test_trajectories[0]
    ref = Trajectory(truth.grid, truth.snapshots, 0.0, truth.dt_snapshot)
    return params, small_dataset.config, ref


class TestSchedule:
    @pytest.mark.parametrize("kw", [dict(K=0), dict(M=0), dict(policy="random")])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            HybridSchedule(**kw)

    def test_adaptive_needs_trigger(self):
        with pytest.raises(ValueError):
            HybridSchedule(policy="adaptive")

    def test_trigger_validation(self):
        with pytest.raises(ValueError):
            Trigger("spectral_entropy", 1.0)
        with pytest.raises(ValueError):
            Trigger(threshold=-1.0)


class TestCostModel:
    def test_reference_value(self):
        assert net_speedup(CostModel(1e-3, 1.0), HybridSchedule(10, 2)) == pytest.approx(12 / 2.01, abs=1e-12)

    @given(st.integers(1, 50), st.integers(1, 10), st.floats(1e-4, 0.99))
    def test_monotone(self, K, M, ratio):
        cost = CostModel(ratio, 1.0)
        s = net_speedup(cost, HybridSchedule(K, M))
        assert net_speedup(cost, HybridSchedule(K, M + 1)) <= s + 1e-12
        assert net_speedup(cost, HybridSchedule(K + 1, M)) >= s - 1e-12

    def test_adaptive_has_no_closed_form(self):
        with pytest.raises(ValueError):
            net_speedup(CostModel(), HybridSchedule(policy="adaptive", trigger=Trigger(threshold=1.0)))

    def test_costs_positive(self):
        with pytest.raises(ValueError):
            CostModel(0.0, 1.0)


class TestMonitors:
    def test_dissipation_energy_only_high_bands(self):
        x = np.arange(256) / 256
        low = np.sin(2 * np.pi * 10 * x)
        high = 0.1 * np.sin(2 * np.pi * 100 * x)
        assert dissipation_energy(low)[0] == pytest.approx(0.0, abs=1e-25)
        assert dissipation_energy(low + high)[0] == pytest.approx(0.005, rel=1e-12)

    def test_trigger_threshold_is_inclusive(self):
        x = np.arange(256) / 256
        state = 0.1 * np.sin(2 * np.pi * 100 * x)
        hist = np.stack([state, state])
        assert evaluate_trigger(hist, Trigger(threshold=0.005 * (1 - 1e-12)))
        assert not evaluate_trigger(hist, Trigger(threshold=0.006))
        with pytest.raises(ValueError):
            evaluate_trigger(hist[:1], Trigger(threshold=0.0))

    def test_residual_small_on_solver_step(self, small_dataset):
        cfg = small_dataset.config
        tr = small_dataset.test_trajectories[0].snapshots
        assert ks_residual_norm(tr[0], tr[1], cfg) < 0.1
        assert ks_residual_norm(tr[0], tr[0][::-1], cfg) > 1.0
        with pytest.raises(ValueError):
            evaluate_trigger(tr[:2], Trigger("residual_norm", 0.1))

    def test_attractor_trigger(self, small_dataset):
        trig = attractor_trigger(small_dataset.train_trajectories, factor=3.0)
        mean = dissipation_energy(small_dataset.train_trajectories.reshape(-1, 256)).mean()
        assert trig.threshold == pytest.approx(3.0 * mean)


class TestRollout:
    def test_no_correction_matches_surrogate_bitwise(self, setup):
        params, cfg, truth = setup
        rec = hybrid_rollout(params, cfg, HybridSchedule(K=20, M=2), truth.fields[0], 15)
        pure = rollout(params, truth.fields[0], 15)
        np.testing.assert_array_equal(rec.trajectory.snapshots, pure.snapshots)
        assert rec.provenance == ["surrogate"] * 15 and rec.events == []

    def test_solver_reference_matches_solver_bitwise(self, setup):
        _, cfg, truth = setup
        ref = solver_reference(cfg, truth.fields[0], 6)
        np.testing.assert_array_equal(ref.snapshots[1:], solve_from(truth.snapshots[0], cfg, 6))

    def test_schedule_bookkeeping(self, setup):
        params, cfg, truth = setup
        rec = hybrid_rollout(params, cfg, HybridSchedule(3, 2), truth.fields[0], 12, truth)
        assert rec.provenance == (["surrogate"] * 3 + ["solver"] * 2) * 2 + ["surrogate"] * 2
        assert len(rec.trajectory) == 13 == len(rec.provenance) + 1
        assert [(e.start_step, e.end_step) for e in rec.events] == [(3, 5), (8, 10)]
        assert rec.n_surrogate_steps == 8 and rec.n_solver_steps == 4
        assert rec.errors[0] == 0.0 and rec.final_error == rec.errors[-1]
        assert rec.modeled_cost(CostModel(0.5, 1.0)) == 8 * 0.5 + 4
        assert all(e.eps_hi5_pre is not None for e in rec.events)

    def test_solver_window_integrates_from_hybrid_state(self, setup):
        params, cfg, truth = setup
        rec = hybrid_rollout(params, cfg, HybridSchedule(2, 3), truth.fields[0], 5)
        S = rec.trajectory.snapshots
        np.testing.assert_array_equal(S[3:6], solve_from(S[2], cfg, 3))

    def test_adaptive_stops_on_trigger(self, setup):
        params, cfg, truth = setup
        sched = HybridSchedule(K=10, M=1, policy="adaptive", trigger=Trigger(threshold=0.0))
        rec = hybrid_rollout(params, cfg, sched, truth.fields[0], 6)
        assert rec.provenance == ["surrogate", "solver"] * 3
        assert rec.trigger_steps == [1, 3, 5] and all(e.triggered for e in rec.events)

    def test_adaptive_caps_at_K(self, setup):
        params, cfg, truth = setup
        sched = HybridSchedule(K=4, M=1, policy="adaptive", trigger=Trigger(threshold=1e30))
        rec = hybrid_rollout(params, cfg, sched, truth.fields[0], 10)
        assert rec.provenance[:5] == ["surrogate"] * 4 + ["solver"] and rec.trigger_steps == []

    def test_scale_selective_keeps_surrogate_low_modes(self, setup):
        params, cfg, truth = setup
        rec = hybrid_rollout(params, cfg, HybridSchedule(2, 1), truth.fields[0], 3, scale_selective=True,
                             k_split=16)
        S = rec.trajectory.snapshots
        sur = rollout(params, rec.trajectory.fields[2], 1).snapshots[1]
        sol = solve_from(S[2], cfg, 1)[0]
        c = np.fft.rfft(S[3])
        np.testing.assert_allclose(c[:17], np.fft.rfft(sur)[:17], atol=1e-9)
        np.testing.assert_allclose(c[17:], np.fft.rfft(sol)[17:], atol=1e-9)

    def test_truth_length_checked(self, setup):
        params, cfg, truth = setup
        with pytest.raises(ValueError):
            hybrid_rollout(params, cfg, HybridSchedule(), truth.fields[0], len(truth) + 5, truth)

    def test_grid_mismatch(self, setup):
        params, _, truth = setup
        with pytest.raises(ValueError):
            hybrid_rollout(params, KsConfig(grid=type(truth.grid)(128, 64.0)), HybridSchedule(),
                           truth.fields[0], 3)

    def test_record_json(self, setup):
        params, cfg, truth = setup
        rec = hybrid_rollout(params, cfg, HybridSchedule(3, 1), truth.fields[0], 8, truth)
        out = rec.to_json(CostModel())
        assert out["n_steps"] == 8 and out["schedule"]["K"] == 3 and "modeled_cost" in out
        assert out["quench_holds"] in (True, False)


class TestSweep:
    def test_rows(self, setup):
        params, cfg, truth = setup
        header, rows = cost_sweep(params, cfg, [truth.fields[0]], [truth], 6, Ks=(2, 4), Ms=(1,),
                                  cost_ratios=(1e-3, 1e-1))
        assert header == ["K", "M", "cost_ratio", "modeled_speedup", "final_error"]
        assert len(rows) == 4
        assert rows[0][3] == pytest.approx(3 / (2e-3 + 1))
