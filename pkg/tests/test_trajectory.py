import dataclasses
import math

import numpy as np
import pytest

from damctl import model
from damctl.trajectory import (
    DamState,
    NeverSwitchPolicy,
    ScriptedSwitchPolicy,
    apply_jump,
    drift_step,
    simulate_controlled,
    simulate_paths,
)

from conftest import make_cfg
from oracles import deterministic_open_path_value

#: variant with no mandated outflow, so beta = 0 really means no spill
NO_FLOOR = {"min_outflow": 0.0}
#: storm-free rainfall: no feedback, negligible base rate
NO_STORMS = {"self_excitation": 0.0, "base_intensity": 1e-9}


class TestDriftStep:
    def test_no_outflow_leaves_level(self, default_cfg):
        s = drift_step(default_cfg, DamState(h=70.0, lam=2.0, regime=0), beta=0.0, dt=0.5)
        assert s.h == 70.0
        assert s.lam == pytest.approx(0.01 + 1.99 * math.exp(-0.3 * 0.5), rel=1e-12)
        assert s.t == 0.5

    def test_matches_forward_euler_at_small_dt(self, default_cfg):
        # agreement at first order; the curvature term is ~7e-4 at this step
        s = drift_step(default_cfg, DamState(h=50.0, lam=1.0, regime=0), beta=1.2, dt=0.01)
        euler = 50.0 - 0.01 * 37.951354126038765
        assert s.h == pytest.approx(euler, abs=1e-3)
        fine = dataclasses.replace(
            default_cfg, sim=dataclasses.replace(default_cfg.sim, dt_int=0.0025)
        )
        s_fine = drift_step(fine, DamState(h=50.0, lam=1.0, regime=0), beta=1.2, dt=0.01)
        assert s.h == pytest.approx(s_fine.h, abs=1e-9)

    def test_richardson_halved_substep(self, default_cfg):
        # fixed RK4: halving the substep should not move the answer materially
        fine = dataclasses.replace(
            default_cfg, sim=dataclasses.replace(default_cfg.sim, dt_int=0.0005)
        )
        s1 = drift_step(default_cfg, DamState(h=50.0, lam=1.0, regime=1), beta=1.2, dt=0.8)
        s2 = drift_step(fine, DamState(h=50.0, lam=1.0, regime=1), beta=1.2, dt=0.8)
        assert s1.h == pytest.approx(s2.h, abs=1e-8)

    def test_energy_balance_first_integral(self, default_cfg):
        # turbine only: (h - h0)^2 decreases at the constant rate
        # 2 E / (S g (1-chi)) = 0.6440739826314716
        state = DamState(h=60.0, lam=2.0, regime=1)
        T = 5.0
        out = drift_step(default_cfg, state, beta=0.0, dt=T)
        slope = ((out.h - default_cfg.h0) ** 2 - (state.h - default_cfg.h0) ** 2) / T
        assert slope == pytest.approx(-0.6440739826314716, abs=1e-6)

    def test_level_clamped_at_bottom(self):
        cfg = make_cfg(**NO_FLOOR)
        s = drift_step(cfg, DamState(h=0.5, lam=2.0, regime=0), beta=1.2, dt=5.0)
        assert s.h == cfg.h_min

    def test_never_increases(self, default_cfg):
        s = DamState(h=80.0, lam=1.0, regime=1)
        for beta in (0.0, 0.4, 1.2):
            assert drift_step(default_cfg, s, beta, 0.3).h <= s.h

    def test_rejects_nonpositive_dt(self, default_cfg):
        with pytest.raises(ValueError):
            drift_step(default_cfg, DamState(h=50, lam=1, regime=0), 0.0, 0.0)


class TestApplyJump:
    def test_overtopping_clamp(self, default_cfg):
        s = apply_jump(default_cfg, DamState(h=95.0, lam=1.0, regime=0), 10.0)
        assert s.failed and s.h == default_cfg.h_max

    def test_level_and_intensity_kick(self, default_cfg):
        s = apply_jump(default_cfg, DamState(h=50.0, lam=0.5, regime=1), 10.0)
        assert s.h == 60.0
        assert s.lam == pytest.approx(1.5, rel=1e-14)
        assert not s.failed

    def test_failed_state_absorbing(self, default_cfg):
        dead = DamState(h=default_cfg.h_max, lam=2.0, regime=0, failed=True)
        again = apply_jump(default_cfg, dead, 15.0)
        assert again.failed and again.h == default_cfg.h_max

    def test_rejects_nonpositive_mark(self, default_cfg):
        with pytest.raises(ValueError):
            apply_jump(default_cfg, DamState(h=50, lam=1, regime=0), 0.0)


class TestSimulateControlled:
    def test_idle_in_band_is_worthless(self):
        cfg = make_cfg(**NO_FLOOR, **NO_STORMS)
        acc = simulate_controlled(
            cfg, NeverSwitchPolicy(0.0), DamState(h=70.0, lam=1e-9), np.random.default_rng(0)
        )
        assert abs(acc.total) < 1e-3
        assert acc.n_events == 0

    def test_open_turbine_matches_quadrature_oracle(self):
        cfg = make_cfg(**NO_FLOOR, **NO_STORMS)
        acc = simulate_controlled(
            cfg,
            NeverSwitchPolicy(0.0),
            DamState(h=70.0, lam=1e-9, regime=1),
            np.random.default_rng(1),
        )
        oracle = deterministic_open_path_value(cfg, 70.0, cfg.sim.t_cut)
        assert acc.n_events == 0
        assert acc.total == pytest.approx(oracle, abs=1e-3)

    def test_immediate_failure_costs_the_penalty(self, default_cfg):
        dead = DamState(h=default_cfg.h_max, lam=1.0, regime=1, failed=True)
        acc = simulate_controlled(default_cfg, NeverSwitchPolicy(), dead, np.random.default_rng(2))
        assert acc.total == -default_cfg.failure_penalty == 0.0

        paid = make_cfg(failure_penalty=7.0)
        acc = simulate_controlled(paid, NeverSwitchPolicy(), dead, np.random.default_rng(2))
        assert acc.total == -7.0

    def test_switch_cost_separability(self):
        cfg = make_cfg(**NO_FLOOR, **NO_STORMS)
        x0 = DamState(h=70.0, lam=1e-9, regime=0)
        base = simulate_controlled(cfg, NeverSwitchPolicy(0.0), x0, np.random.default_rng(3))
        switched = simulate_controlled(
            cfg, ScriptedSwitchPolicy((1.0, 2.0)), x0, np.random.default_rng(3)
        )
        assert base.n_switches == 0 and switched.n_switches == 2
        expected = cfg.switch_cost * (math.exp(-0.2 * 1.0) + math.exp(-0.2 * 2.0))
        gap = switched.discounted_switch_costs - base.discounted_switch_costs
        assert gap == pytest.approx(expected, rel=1e-12)

    def test_level_monotone_between_storms(self):
        cfg = make_cfg(self_excitation=0.05, base_intensity=0.5)
        log: list = []
        simulate_controlled(
            cfg,
            NeverSwitchPolicy(0.6),
            DamState(h=60.0, lam=2.0, regime=1),
            np.random.default_rng(8),
            t_cut=30.0,
            log=log,
        )
        last_h = None
        for entry in log:
            if entry["kind"] == "storm":
                last_h = None  # level may rise across a storm
                continue
            if last_h is not None:
                assert entry["h"] <= last_h + 1e-12
            last_h = entry["h"]

    def test_floor_contract_coefficient_mode(self, default_cfg):
        log: list = []
        simulate_controlled(
            default_cfg,
            NeverSwitchPolicy(0.0),
            DamState(h=70.0, lam=0.5, regime=0),
            np.random.default_rng(4),
            t_cut=0.1,
            log=log,
        )
        floor = float(model.beta_floor(default_cfg, 0, 70.0, 0.5))
        assert log[0]["beta"] == pytest.approx(floor) == pytest.approx(0.4)

    def test_floor_contract_outflow_mode(self):
        cfg = make_cfg(beta_floor_mode="outflow")
        log: list = []
        simulate_controlled(
            cfg,
            NeverSwitchPolicy(0.0),
            DamState(h=70.0, lam=0.5, regime=0),
            np.random.default_rng(4),
            t_cut=0.1,
            log=log,
        )
        unit = math.sqrt(2 * cfg.gravity * (70.0 - cfg.h0))
        assert log[0]["beta"] * unit == pytest.approx(cfg.min_outflow, rel=1e-12)

    def test_empty_reservoir_flagged(self):
        cfg = make_cfg(**NO_FLOOR, **NO_STORMS)
        acc = simulate_controlled(
            cfg,
            NeverSwitchPolicy(cfg.beta_max),
            DamState(h=3.0, lam=1e-9, regime=0),
            np.random.default_rng(5),
            t_cut=10.0,
        )
        assert acc.hit_bottom

    def test_max_events_truncation(self):
        cfg = make_cfg(self_excitation=0.0, base_intensity=3.0)
        cfg = dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, max_events=5))
        acc = simulate_controlled(
            cfg,
            NeverSwitchPolicy(cfg.beta_max),
            DamState(h=10.0, lam=3.0, regime=0),
            np.random.default_rng(6),
        )
        assert acc.truncated and acc.n_events == 5


class TestBatchEngine:
    def _compare(self, cfg, policy, x0, n, seed, t_cut):
        batch = simulate_paths(cfg, policy, x0, n, seed, t_cut)
        children = np.random.SeedSequence(seed).spawn(n)
        for p in range(n):
            scalar = simulate_controlled(
                cfg,
                policy,
                dataclasses.replace(x0),
                np.random.default_rng(children[p]),
                t_cut,
            )
            b = batch[p]
            assert b.failed == scalar.failed
            assert b.truncated == scalar.truncated
            assert b.n_events == scalar.n_events
            assert b.n_switches == scalar.n_switches
            assert b.total == pytest.approx(scalar.total, rel=1e-9, abs=1e-9)
            assert b.discounted_production == pytest.approx(
                scalar.discounted_production, rel=1e-9, abs=1e-9
            )
            assert b.discounted_penalties == pytest.approx(
                scalar.discounted_penalties, rel=1e-9, abs=1e-9
            )

    def test_matches_scalar_with_storms(self):
        cfg = make_cfg(self_excitation=0.05, base_intensity=0.5)
        self._compare(
            cfg, NeverSwitchPolicy(0.7), DamState(h=60.0, lam=1.5, regime=0), 40, 1234, 25.0
        )

    def test_matches_scalar_violent_regime(self, default_cfg):
        # supercritical storms: most paths overtop quickly
        self._compare(
            default_cfg,
            NeverSwitchPolicy(1.2),
            DamState(h=75.0, lam=2.5, regime=1),
            40,
            987,
            50.0,
        )

    def test_batch_determinism(self, default_cfg):
        x0 = DamState(h=70.0, lam=1.0, regime=1)
        a = simulate_paths(default_cfg, NeverSwitchPolicy(0.2), x0, 64, 7, 20.0)
        b = simulate_paths(default_cfg, NeverSwitchPolicy(0.2), x0, 64, 7, 20.0)
        assert [x.total for x in a] == [x.total for x in b]

    def test_immediate_failure_batch(self, default_cfg):
        dead = DamState(h=default_cfg.h_max, lam=1.0, regime=0, failed=True)
        accs = simulate_paths(default_cfg, NeverSwitchPolicy(), dead, 5, 0)
        assert all(a.failed and a.total == 0.0 for a in accs)
