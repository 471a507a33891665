import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from damctl import model
from damctl.model import ConfigError, GridConfig, MarkDistribution, ModelConfig

from conftest import make_cfg


class TestPhysics:
    def test_turbine_flow_closed_form(self, default_cfg):
        # 3 / (9.806 * 0.95 * 51)
        assert model.phi(default_cfg, 50.0) == pytest.approx(0.006314450810112467, rel=1e-14)

    def test_turbine_flow_diverges_at_intake(self, default_cfg):
        assert model.phi(default_cfg, default_cfg.h0 + 1e-12) > 1e9

    def test_turbine_flow_monotone(self, default_cfg):
        assert model.phi(default_cfg, 50.0) > model.phi(default_cfg, 80.0)

    def test_turbine_flow_domain_error(self, default_cfg):
        with pytest.raises(ValueError):
            model.phi(default_cfg, default_cfg.h0)

    def test_spill_closed_form(self, default_cfg):
        # 1.2 * sqrt(2 * 9.806 * 51)
        assert model.spill_rate(default_cfg, 1.2, 50.0) == pytest.approx(
            37.951354126038765, rel=1e-14
        )

    def test_spill_zero_opening(self, default_cfg):
        assert model.spill_rate(default_cfg, 0.0, 73.2) == 0.0

    def test_spill_zero_head(self, default_cfg):
        assert model.spill_rate(default_cfg, 1.2, default_cfg.h0) == 0.0

    def test_spill_rejects_bad_opening(self, default_cfg):
        with pytest.raises(ValueError):
            model.spill_rate(default_cfg, -0.1, 50.0)
        with pytest.raises(ValueError):
            model.spill_rate(default_cfg, default_cfg.beta_max + 0.1, 50.0)

    def test_floor_closed_turbine(self, default_cfg):
        assert model.beta_floor(default_cfg, 0, 50.0, 0.5) == pytest.approx(0.4, abs=1e-15)

    def test_floor_open_turbine(self, default_cfg):
        # 0.4 - 3 / (9.806 * 0.95 * 51)
        assert model.beta_floor(default_cfg, 1, 50.0, 0.5) == pytest.approx(
            0.3936855491898876, rel=1e-14
        )

    def test_floor_off_above_threshold(self, default_cfg):
        assert model.beta_floor(default_cfg, 0, 50.0, 2.0) == 0.0
        assert model.beta_floor(default_cfg, 1, 10.0, 2.0) == 0.0

    def test_outflow_mode_floor(self):
        cfg = make_cfg(beta_floor_mode="outflow")
        got = model.beta_floor(cfg, 0, 50.0, 0.5)
        unit = np.sqrt(2 * cfg.gravity * 51.0)
        assert got == pytest.approx(0.4 / unit, rel=1e-14)
        assert got * unit == pytest.approx(cfg.min_outflow, rel=1e-14)

    def test_penalties_closed_form(self, default_cfg):
        assert model.penalty_high(default_cfg, 85.0) == pytest.approx(0.0125, rel=1e-14)
        assert model.penalty_low(default_cfg, 40.0) == pytest.approx(0.05, rel=1e-14)
        assert model.penalty_high(default_cfg, 70.0) == 0.0
        assert model.penalty_low(default_cfg, 70.0) == 0.0

    def test_running_reward_examples(self, default_cfg):
        assert model.running_reward(default_cfg, 1, 85.0) == pytest.approx(2.9875, rel=1e-14)
        assert model.running_reward(default_cfg, 0, 70.0) == 0.0
        assert model.running_reward(default_cfg, 0, 40.0) == pytest.approx(-0.05, rel=1e-14)


class TestInvariants:
    def test_flow_positive_and_decreasing_on_domain(self, default_cfg):
        hs = np.linspace(default_cfg.h_min, default_cfg.h_max, 1000)
        flows = model.phi(default_cfg, hs)
        assert (flows > 0).all()
        assert (np.diff(flows) < 0).all()

    def test_floor_vanishes_above_threshold_on_grid(self, default_cfg):
        hs = np.linspace(0.0, 100.0, 50)
        ells = np.linspace(default_cfg.ell_bar + 1e-9, 3.0, 50)
        HH, LL = np.meshgrid(hs, ells, indexing="ij")
        for i in (0, 1):
            assert np.all(model.beta_floor(default_cfg, i, HH, LL) == 0.0)

    def test_turbine_reduces_required_spill(self, default_cfg):
        hs = np.linspace(0.0, 100.0, 60)
        ells = np.linspace(0.01, 3.0, 60)
        HH, LL = np.meshgrid(hs, ells, indexing="ij")
        f1 = model.beta_floor(default_cfg, 1, HH, LL)
        f0 = model.beta_floor(default_cfg, 0, HH, LL)
        assert np.all(f1 <= f0)

    @given(h=st.floats(0.0, 100.0))
    def test_production_term_separability(self, h):
        cfg = make_cfg()
        gap = model.running_reward(cfg, 1, h) - model.running_reward(cfg, 0, h)
        assert gap == pytest.approx(cfg.energy, rel=1e-12)

    @given(h=st.floats(0.0, 100.0))
    def test_penalty_supports_disjoint(self, h):
        cfg = make_cfg()
        assert model.penalty_high(cfg, h) * model.penalty_low(cfg, h) == 0.0

    @given(
        i=st.integers(0, 1),
        h=st.floats(0.0, 100.0),
        ell=st.floats(0.01, 3.0),
    )
    @settings(max_examples=200)
    def test_floor_bounded_by_min_outflow(self, i, h, ell):
        cfg = make_cfg()
        f = float(model.beta_floor(cfg, i, h, ell))
        assert 0.0 <= f <= cfg.min_outflow + 1e-15


class TestConfigValidation:
    def test_mark_simplex_enforced(self):
        with pytest.raises(ConfigError, match="sum to 1.2"):
            MarkDistribution((10.0, 15.0, 20.0), (0.3, 0.4, 0.5))

    def test_marks_must_increase(self):
        with pytest.raises(ConfigError, match="increasing"):
            MarkDistribution((15.0, 10.0), (0.5, 0.5))

    def test_marks_positive(self):
        with pytest.raises(ConfigError):
            MarkDistribution((-1.0, 10.0), (0.5, 0.5))
        with pytest.raises(ConfigError):
            MarkDistribution((1.0, 10.0), (0.0, 1.0))

    def test_level_ordering_enforced(self, default_cfg):
        with pytest.raises(ConfigError, match="h_min < h_minus < h_plus < h_max"):
            dataclasses.replace(default_cfg, h_plus=120.0)
        with pytest.raises(ConfigError, match="h0 < 0"):
            dataclasses.replace(default_cfg, h0=0.5)

    def test_rate_signs_enforced(self, default_cfg):
        for bad in (
            {"reversion_speed": 0.0},
            {"base_intensity": -1.0},
            {"self_excitation": -0.1},
            {"discount_rate": 0.0},
            {"efficiency": 0.0},
            {"efficiency": 1.5},
            {"beta_max": 0.0},
            {"min_outflow": -0.1},
        ):
            with pytest.raises(ConfigError):
                dataclasses.replace(default_cfg, **bad)

    def test_grid_validation(self):
        with pytest.raises(ConfigError):
            GridConfig(nh=1, nl=10)
        with pytest.raises(ConfigError):
            GridConfig(ell_min=0.0)
        with pytest.raises(ConfigError):
            GridConfig(ell_min=2.0, ell_max=1.0)

    def test_supercritical_default_warns(self):
        import damctl

        with pytest.warns(model.SupercriticalWarning):
            damctl.default_config()

    def test_zero_switch_cost_warns(self, default_cfg):
        with pytest.warns(UserWarning, match="chatter"):
            dataclasses.replace(default_cfg, switch_cost=0.0, self_excitation=0.001)

    def test_mean_mark_of_default(self, default_cfg):
        assert default_cfg.marks.mean == pytest.approx(15.833333333333334, rel=1e-14)
        assert default_cfg.branching_ratio > 1

    def test_dict_round_trip(self, default_cfg):
        doc = default_cfg.to_dict()
        again = ModelConfig.from_dict(doc)
        assert again == default_cfg

    def test_unknown_section_rejected(self, default_cfg):
        doc = default_cfg.to_dict()
        doc["extra"] = {"x": 1}
        with pytest.raises(ConfigError, match="extra"):
            ModelConfig.from_dict(doc)

    def test_unknown_key_rejected(self, default_cfg):
        doc = default_cfg.to_dict()
        doc["dam"]["spillway_count"] = 3
        with pytest.raises(ConfigError, match="spillway_count"):
            ModelConfig.from_dict(doc)
