"""Dam physics and economics: outflow hydraulics, release constraints, penalties.

All quantities are normalized per unit of reservoir surface.  Water levels are
meters above the dam bottom, rainfall intensity is storms per unit time, and
rewards are expressed in units of electricity value (the electricity price is
held constant and used as numeraire).

Every function here is a pure function of ``(config, state)`` and accepts
either scalars or numpy arrays for the state arguments; shared read-only
configs are safe to use from any number of threads.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigError",
    "SupercriticalWarning",
    "Regime",
    "MarkDistribution",
    "GridConfig",
    "NumericsConfig",
    "SimConfig",
    "ModelConfig",
    "default_config",
    "phi",
    "spill_rate",
    "beta_floor",
    "penalty_high",
    "penalty_low",
    "running_reward",
]

#: tolerance on the mark-probability simplex at validation time
PROB_TOL = 1e-12


class ConfigError(ValueError):
    """A configuration value violates a model invariant."""


class SupercriticalWarning(UserWarning):
    """Mean rainfall feedback exceeds the intensity decay rate.

    With branching ratio ``excitation * E[mark] / reversion > 1`` the storm
    intensity is explosive; solver runs remain well posed (trajectories end at
    overtopping and the lattice caps the intensity), but stationary statistics
    of the uncontrolled rainfall process do not exist.
    """


class Regime(enum.IntEnum):
    """Turbine status: 0 closed, 1 operating."""

    CLOSED = 0
    OPEN = 1


@dataclass(frozen=True)
class MarkDistribution:
    """Discrete law of the water added to the reservoir by one storm.

    ``values`` are storm sizes in meters, strictly increasing (canonical
    ordering for reproducibility); ``probs`` must sum to 1 within 1e-12.
    """

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != len(self.probs) or not self.values:
            raise ConfigError("marks: values and probs must be non-empty and equal length")
        if any(z <= 0 for z in self.values):
            raise ConfigError("marks.values: storm sizes must be positive")
        if any(z2 <= z1 for z1, z2 in zip(self.values, self.values[1:])):
            raise ConfigError("marks.values: storm sizes must be strictly increasing")
        if any(p <= 0 for p in self.probs):
            raise ConfigError("marks.probs: probabilities must be positive")
        total = float(sum(self.probs))
        if abs(total - 1.0) > PROB_TOL:
            raise ConfigError(f"marks.probs: probabilities sum to {total:g}, expected 1")

    @property
    def mean(self) -> float:
        return float(sum(z * p for z, p in zip(self.values, self.probs)))

    def cumulative(self) -> np.ndarray:
        """Cumulative probabilities, used for inverse-CDF sampling."""
        return np.cumsum(self.probs)


@dataclass(frozen=True)
class GridConfig:
    """Lattice resolution for the solver: level x intensity."""

    nh: int = 100
    nl: int = 100
    ell_min: float = 0.01
    ell_max: float = 3.0

    def __post_init__(self) -> None:
        if self.nh < 2 or self.nl < 2:
            raise ConfigError("grid: nh and nl must be at least 2")
        if self.ell_min <= 0:
            raise ConfigError("grid.ell_min: must be positive")
        if self.ell_max <= self.ell_min:
            raise ConfigError("grid.ell_max: must exceed ell_min")


@dataclass(frozen=True)
class NumericsConfig:
    """Fixed-point iteration controls for the solver."""

    tol: float = 1e-8
    max_iter: int = 100_000

    def __post_init__(self) -> None:
        if self.tol <= 0:
            raise ConfigError("numerics.tol: must be positive")
        if self.max_iter < 1:
            raise ConfigError("numerics.max_iter: must be at least 1")


@dataclass(frozen=True)
class SimConfig:
    """Trajectory simulation controls."""

    dt_int: float = 0.01  # max RK4 substep for the level ODE
    dt_dec: float = 0.05  # spacing of policy decision epochs
    t_cut: float = 100.0  # horizon at which discounted tails are dropped
    max_events: int = 100_000

    def __post_init__(self) -> None:
        if self.dt_int <= 0 or self.dt_dec <= 0 or self.t_cut <= 0:
            raise ConfigError("simulation: dt_int, dt_dec and t_cut must be positive")
        if self.max_events < 1:
            raise ConfigError("simulation.max_events: must be at least 1")


@dataclass(frozen=True)
class ModelConfig:
    """All physical, economic, rainfall and discretization parameters.

    Validation happens at construction; an invalid field raises
    :class:`ConfigError` naming the offending key.  A supercritical rainfall
    parameterization or a zero switching cost triggers a warning, not an
    error.
    """

    # dam geometry and hydraulics
    h_max: float = 100.0  # crest level; reaching it is terminal failure
    h_min: float = 0.0  # bottom of the reservoir
    h0: float = -1.0  # turbine intake level, below the bottom
    h_plus: float = 80.0  # dangerous level, start of the high penalty
    h_minus: float = 50.0  # touristic level, start of the low penalty
    beta_max: float = 1.2  # spillway opening coefficient at full flow
    beta_min_base: float = 0.0  # static lower opening bound (unused by default)
    ell_bar: float = 1.0  # intensity threshold defining a low-flow period
    min_outflow: float = 0.4  # mandated outflow during low-flow periods
    gravity: float = 9.806
    beta_floor_mode: str = "coefficient"  # "coefficient" | "outflow"

    # economics
    energy: float = 3.0  # power per unit time while the turbine runs
    surface: float = 1.0  # normalized reservoir surface
    efficiency: float = 0.95  # turbine efficiency
    switch_cost: float = 3.0
    discount_rate: float = 0.2
    failure_penalty: float = 0.0  # lump cost at overtopping
    penalty_coeff: float = 0.5e-3  # quadratic coefficient of both level penalties

    # storm arrivals: intensity mean-reverts and jumps up with each storm
    reversion_speed: float = 0.3
    base_intensity: float = 0.01
    self_excitation: float = 0.1

    marks: MarkDistribution = field(
        default_factory=lambda: MarkDistribution((10.0, 15.0, 20.0), (0.25, 1 / 3, 5 / 12))
    )
    grid: GridConfig = field(default_factory=GridConfig)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self) -> None:
        if not self.h0 < 0 <= self.h_min:
            raise ConfigError("dam: require h0 < 0 <= h_min")
        if not self.h_min < self.h_minus < self.h_plus < self.h_max:
            raise ConfigError("dam: require h_min < h_minus < h_plus < h_max")
        if self.beta_max <= 0:
            raise ConfigError("dam.beta_max: must be positive")
        if self.beta_min_base < 0:
            raise ConfigError("dam.beta_min_base: must be nonnegative")
        if self.min_outflow < 0:
            raise ConfigError("dam.min_outflow: must be nonnegative")
        if self.gravity <= 0:
            raise ConfigError("dam.gravity: must be positive")
        if self.beta_floor_mode not in ("coefficient", "outflow"):
            raise ConfigError("dam.beta_floor_mode: must be 'coefficient' or 'outflow'")
        if not 0 < self.efficiency <= 1:
            raise ConfigError("economics.efficiency: must be in (0, 1]")
        if self.energy < 0 or self.surface <= 0:
            raise ConfigError("economics: energy must be >= 0 and surface > 0")
        if self.discount_rate <= 0:
            raise ConfigError("economics.discount_rate: must be positive")
        if self.switch_cost < 0:
            raise ConfigError("economics.switch_cost: must be nonnegative")
        if self.penalty_coeff < 0:
            raise ConfigError("economics.penalty_coeff: must be nonnegative")
        if self.reversion_speed <= 0 or self.base_intensity <= 0:
            raise ConfigError("hawkes: reversion_speed and base_intensity must be positive")
        if self.self_excitation < 0:
            raise ConfigError("hawkes.self_excitation: must be nonnegative")
        if self.switch_cost == 0:
            warnings.warn(
                "switch_cost is zero: the switching obstacle may chatter",
                UserWarning,
                stacklevel=2,
            )
        if self.branching_ratio > 1:
            warnings.warn(
                f"supercritical rainfall: branching ratio {self.branching_ratio:.3g} > 1",
                SupercriticalWarning,
                stacklevel=2,
            )

    @property
    def branching_ratio(self) -> float:
        """Mean intensity kicked up per storm, relative to the decay rate."""
        return self.self_excitation * self.marks.mean / self.reversion_speed

    def to_dict(self) -> dict:
        """Plain nested dict mirroring the config file sections."""
        return {
            "dam": {
                "h_max": self.h_max,
                "h_min": self.h_min,
                "h0": self.h0,
                "h_plus": self.h_plus,
                "h_minus": self.h_minus,
                "beta_max": self.beta_max,
                "beta_min_base": self.beta_min_base,
                "ell_bar": self.ell_bar,
                "min_outflow": self.min_outflow,
                "gravity": self.gravity,
                "beta_floor_mode": self.beta_floor_mode,
            },
            "economics": {
                "energy": self.energy,
                "surface": self.surface,
                "efficiency": self.efficiency,
                "switch_cost": self.switch_cost,
                "discount_rate": self.discount_rate,
                "failure_penalty": self.failure_penalty,
                "penalty_coeff": self.penalty_coeff,
            },
            "hawkes": {
                "reversion_speed": self.reversion_speed,
                "base_intensity": self.base_intensity,
                "self_excitation": self.self_excitation,
            },
            "marks": {"values": list(self.marks.values), "probs": list(self.marks.probs)},
            "grid": {
                "nh": self.grid.nh,
                "nl": self.grid.nl,
                "ell_min": self.grid.ell_min,
                "ell_max": self.grid.ell_max,
            },
            "numerics": {"tol": self.numerics.tol, "max_iter": self.numerics.max_iter},
            "simulation": {
                "dt_int": self.sim.dt_int,
                "dt_dec": self.sim.dt_dec,
                "t_cut": self.sim.t_cut,
                "max_events": self.sim.max_events,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        """Inverse of :meth:`to_dict`; unknown sections or keys are rejected."""
        known = {
            "dam",
            "economics",
            "hawkes",
            "marks",
            "grid",
            "numerics",
            "simulation",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

        def take(section: str, allowed: set[str]) -> dict:
            sub = doc.get(section, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{section}: expected a table of keys")
            bad = set(sub) - allowed
            if bad:
                raise ConfigError(f"{section}: unknown key(s): {', '.join(sorted(bad))}")
            return sub

        dam = take(
            "dam",
            {
                "h_max",
                "h_min",
                "h0",
                "h_plus",
                "h_minus",
                "beta_max",
                "beta_min_base",
                "ell_bar",
                "min_outflow",
                "gravity",
                "beta_floor_mode",
            },
        )
        eco = take(
            "economics",
            {
                "energy",
                "surface",
                "efficiency",
                "switch_cost",
                "discount_rate",
                "failure_penalty",
                "penalty_coeff",
            },
        )
        haw = take("hawkes", {"reversion_speed", "base_intensity", "self_excitation"})
        marks_doc = take("marks", {"values", "probs"})
        grid_doc = take("grid", {"nh", "nl", "ell_min", "ell_max"})
        num_doc = take("numerics", {"tol", "max_iter"})
        sim_doc = take("simulation", {"dt_int", "dt_dec", "t_cut", "max_events"})

        kwargs: dict = {}
        kwargs.update(dam)
        kwargs.update(eco)
        kwargs.update(haw)
        if marks_doc:
            if "values" not in marks_doc or "probs" not in marks_doc:
                raise ConfigError("marks: both 'values' and 'probs' are required")
            kwargs["marks"] = MarkDistribution(
                tuple(float(z) for z in marks_doc["values"]),
                tuple(float(p) for p in marks_doc["probs"]),
            )
        if grid_doc:
            kwargs["grid"] = GridConfig(**grid_doc)
        if num_doc:
            kwargs["numerics"] = NumericsConfig(**num_doc)
        if sim_doc:
            kwargs["sim"] = SimConfig(**sim_doc)
        try:
            return cls(**kwargs)
        except TypeError as exc:  # wrong type passed inside a section
            raise ConfigError(str(exc)) from exc


def default_config() -> ModelConfig:
    """Central parameterization used throughout the analysis runs.

    The shipped storm-size probabilities are the normalization of the raw
    weights (0.3, 0.4, 0.5) onto the probability simplex; see the packaged
    ``default.config`` for the full commented set.
    """
    return ModelConfig()


# --- closed-form physics ---------------------------------------------------


def phi(cfg: ModelConfig, h):
    """Turbine extraction rate at level ``h``.

    Constant-power operation at fixed grid frequency makes the withdrawn flow
    inversely proportional to the head above the intake:
    ``energy / (surface * gravity * efficiency * (h - h0))``.
    """
    if np.any(h <= cfg.h0):
        raise ValueError(f"phi: water level must exceed the turbine intake {cfg.h0}")
    return cfg.energy / (cfg.surface * cfg.gravity * cfg.efficiency * (h - cfg.h0))


def spill_rate(cfg: ModelConfig, beta, h):
    """Spillway outflow ``beta * sqrt(2 g (h - h0)^+)`` (Torricelli flow)."""
    if np.any(beta < 0) or np.any(beta > cfg.beta_max):
        raise ValueError(f"spill_rate: beta must lie in [0, {cfg.beta_max}]")
    head = np.maximum(h - cfg.h0, 0.0)
    return beta * np.sqrt(2.0 * cfg.gravity * head)


def beta_floor(cfg: ModelConfig, i, h, ell):
    """Lower bound on the spillway coefficient during low-flow periods.

    When the storm intensity drops to ``ell <= ell_bar`` a minimal outflow
    ``min_outflow`` is mandated.  In the default ``coefficient`` mode the
    bound applies to the opening coefficient itself:
    ``max(min_outflow - i * phi(h), 0)``.  In ``outflow`` mode the bound is
    rescaled by the Torricelli factor so that the total outflow (turbine plus
    spillway) meets ``min_outflow``.
    """
    low_flow = ell <= cfg.ell_bar
    shortfall = np.maximum(cfg.min_outflow - i * phi(cfg, h), 0.0)
    if cfg.beta_floor_mode == "outflow":
        unit = np.sqrt(2.0 * cfg.gravity * np.maximum(h - cfg.h0, 0.0))
        shortfall = np.minimum(shortfall / unit, cfg.beta_max)
    return shortfall * low_flow


def penalty_high(cfg: ModelConfig, h):
    """Running cost above the dangerous level, quadratic in the excess."""
    excess = np.maximum(h - cfg.h_plus, 0.0)
    return cfg.penalty_coeff * excess * excess


def penalty_low(cfg: ModelConfig, h):
    """Running cost below the touristic level, quadratic in the shortfall."""
    shortfall = np.maximum(cfg.h_minus - h, 0.0)
    return cfg.penalty_coeff * shortfall * shortfall


def running_reward(cfg: ModelConfig, i, h):
    """Instantaneous reward rate: production minus both level penalties."""
    return i * cfg.energy - penalty_high(cfg, h) - penalty_low(cfg, h)
