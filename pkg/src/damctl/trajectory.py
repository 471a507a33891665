"""Exact simulation of the controlled dam under a pluggable policy.

Between storms the water level follows the deterministic outflow ODE,
integrated with classical fixed-substep RK4 (no adaptive stepping, for
reproducibility), while the storm intensity relaxes in closed form.  Policies
are evaluated on a fixed grid of decision epochs plus the instant after each
storm; the chosen spillway coefficient is clamped into its admissible
interval at the decision state and held constant until the next decision.

Two entry points share the same semantics: :func:`simulate_controlled` runs
one path with plain scalar arithmetic, and :func:`simulate_paths` runs many
paths in lockstep on numpy arrays with one independent seeded generator per
path, so results do not depend on how paths are batched across workers.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, replace

import numpy as np

from . import hawkes, model
from .model import ModelConfig

__all__ = [
    "DamState",
    "Policy",
    "NeverSwitchPolicy",
    "ScriptedSwitchPolicy",
    "RewardAccumulator",
    "drift_step",
    "apply_jump",
    "simulate_controlled",
    "simulate_paths",
]

#: slack when comparing clock times that should coincide with an epoch
_TIME_EPS = 1e-9


@dataclass
class DamState:
    """Controlled state: level, storm intensity, turbine regime, clock."""

    h: float
    lam: float
    regime: int = 0
    t: float = 0.0
    failed: bool = False


@dataclass
class RewardAccumulator:
    """Discounted reward decomposition of one simulated path.

    ``total`` is production minus penalties, switch costs and the terminal
    failure penalty, all discounted to the path start.
    """

    discounted_production: float = 0.0
    discounted_penalties: float = 0.0
    discounted_switch_costs: float = 0.0
    terminal_penalty: float = 0.0
    n_switches: int = 0
    n_events: int = 0
    failed: bool = False
    failure_time: float = np.nan
    truncated: bool = False
    hit_bottom: bool = False

    @property
    def total(self) -> float:
        return (
            self.discounted_production
            - self.discounted_penalties
            - self.discounted_switch_costs
            - self.terminal_penalty
        )


class Policy(abc.ABC):
    """Decision rule: may toggle the turbine and picks a spillway coefficient.

    ``decide`` returns ``(switch, beta)``.  A policy is consulted once per
    decision instant, so it cannot switch twice at the same epoch; ``beta``
    is clamped by the simulator into the admissible interval of the
    post-switch regime.
    """

    @abc.abstractmethod
    def decide(self, state: DamState) -> tuple[bool, float]: ...

    def decide_batch(self, h, lam, regime, t):
        """Vectorized decisions; the default falls back to per-path calls."""
        n = len(h)
        switch = np.zeros(n, dtype=bool)
        beta = np.zeros(n)
        tt = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        for p in range(n):
            sw, bt = self.decide(DamState(float(h[p]), float(lam[p]), int(regime[p]), float(tt[p])))
            switch[p] = sw
            beta[p] = bt
        return switch, beta


class NeverSwitchPolicy(Policy):
    """Hold the current regime forever and request a fixed coefficient.

    With ``beta = 0`` the simulator's admissibility clamp turns this into the
    mandated-floor baseline.
    """

    def __init__(self, beta: float = 0.0):
        self.beta = beta

    def decide(self, state: DamState) -> tuple[bool, float]:
        return False, self.beta

    def decide_batch(self, h, lam, regime, t):
        n = len(h)
        return np.zeros(n, dtype=bool), np.full(n, self.beta)


class ScriptedSwitchPolicy(Policy):
    """Toggle at the first decision instant at or after each scripted time."""

    def __init__(self, switch_times: tuple[float, ...], beta: float = 0.0):
        self.switch_times = sorted(switch_times)
        self.beta = beta
        self._next = 0

    def reset(self) -> None:
        self._next = 0

    def decide(self, state: DamState) -> tuple[bool, float]:
        if self._next < len(self.switch_times) and state.t >= self.switch_times[self._next] - _TIME_EPS:
            self._next += 1
            return True, self.beta
        return False, self.beta


# --- deterministic flow between storms ---------------------------------------


def _outflow_rate(cfg: ModelConfig, regime, beta, h):
    """Total downward level rate; zero once the reservoir is empty."""
    demand = regime * model.phi(cfg, h) + model.spill_rate(cfg, beta, h)
    return np.where(h > cfg.h_min, demand, 0.0)


def _advance(cfg: ModelConfig, regime, beta, h, t_abs, dt):
    """RK4 integration of (level, discounted production, discounted penalties).

    All arguments beyond ``cfg`` are numpy arrays of equal length; ``dt`` may
    vary per lane.  Substeps never exceed ``cfg.sim.dt_int``.  Returns the new
    levels, the two reward integrals over the segment, and a flag for lanes
    that sat at the empty level while outflow was demanded.
    """
    rho = cfg.discount_rate
    energy = cfg.energy
    dt = np.asarray(dt, dtype=float)
    n_sub = np.maximum(1, np.ceil(dt / cfg.sim.dt_int - 1e-9).astype(np.int64))
    step = dt / n_sub
    prod = np.zeros_like(dt)
    pen = np.zeros_like(dt)
    h = h.astype(float).copy()

    def rates(hh, tt):
        dh = -_outflow_rate(cfg, regime, beta, hh)
        disc = np.exp(-rho * tt)
        dp = disc * regime * energy
        dq = disc * (model.penalty_high(cfg, hh) + model.penalty_low(cfg, hh))
        return dh, dp, dq

    max_sub = int(n_sub.max()) if len(n_sub) else 0
    for s in range(max_sub):
        live = (s < n_sub) & (dt > 0)
        if not live.any():
            break
        st = np.where(live, step, 0.0)
        t_s = t_abs + s * step
        k1h, k1p, k1q = rates(h, t_s)
        k2h, k2p, k2q = rates(h + 0.5 * st * k1h, t_s + 0.5 * st)
        k3h, k3p, k3q = rates(h + 0.5 * st * k2h, t_s + 0.5 * st)
        k4h, k4p, k4q = rates(h + st * k3h, t_s + st)
        h_new = h + (st / 6.0) * (k1h + 2 * k2h + 2 * k3h + k4h)
        h_new = np.maximum(h_new, cfg.h_min)
        h = np.where(live, h_new, h)
        prod = prod + np.where(live, (st / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p), 0.0)
        pen = pen + np.where(live, (st / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q), 0.0)

    demand = regime * model.phi(cfg, np.maximum(h, cfg.h_min)) + beta
    bottomed = (dt > 0) & (h <= cfg.h_min + 1e-12) & (demand > 0)
    return h, prod, pen, bottomed


def drift_step(cfg: ModelConfig, state: DamState, beta: float, dt: float) -> DamState:
    """Advance the state over a storm-free interval of length ``dt``.

    The level integrates the outflow ODE (never increasing, clamped at the
    empty level where outflow stops); the intensity relaxes exactly.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    h, _, _, _ = _advance(
        cfg,
        np.array([state.regime]),
        np.array([float(beta)]),
        np.array([state.h]),
        np.array([state.t]),
        np.array([float(dt)]),
    )
    lam = hawkes._decay(state.lam, dt, cfg.reversion_speed, cfg.base_intensity)
    return DamState(float(h[0]), float(lam), state.regime, state.t + dt, state.failed)


def apply_jump(cfg: ModelConfig, state: DamState, mark: float) -> DamState:
    """One storm: the level and intensity jump up; overtopping is absorbing."""
    if mark <= 0:
        raise ValueError("mark must be positive")
    if state.failed:
        return state
    h = state.h + mark
    lam = state.lam + cfg.self_excitation * mark
    failed = h >= cfg.h_max
    return DamState(min(h, cfg.h_max), lam, state.regime, state.t, failed)


# --- scalar event-driven reference loop ---------------------------------------


def simulate_controlled(
    cfg: ModelConfig,
    policy: Policy,
    x0: DamState,
    rng: np.random.Generator,
    t_cut: float | None = None,
    log: list | None = None,
) -> RewardAccumulator:
    """Run one controlled path and return its discounted reward decomposition.

    Storm times come from the exact inter-event sampler; the policy acts at
    epochs spaced ``cfg.sim.dt_dec`` apart and right after each storm.  The
    path ends at overtopping (terminal penalty), at ``t_cut``, or when the
    storm count hits ``cfg.sim.max_events`` (flagged as truncated).
    """
    t_cut = cfg.sim.t_cut if t_cut is None else t_cut
    if t_cut <= 0:
        raise ValueError("t_cut must be positive")
    a, b = cfg.reversion_speed, cfg.base_intensity
    rho = cfg.discount_rate
    acc = RewardAccumulator()
    state = replace(x0)

    if state.failed:
        acc.failed = True
        acc.failure_time = state.t
        acc.terminal_penalty = cfg.failure_penalty * float(np.exp(-rho * state.t))
        return acc

    t0 = state.t
    end = t0 + t_cut
    next_jump = state.t + hawkes.sample_next_jump_exact(
        hawkes.IntensityState(state.lam, state.t), rng, a, b
    )
    n_epochs = int(np.ceil(t_cut / cfg.sim.dt_dec - _TIME_EPS))

    def decide(tag: str) -> float:
        sw, beta = policy.decide(state)
        if sw:
            state.regime = 1 - state.regime
            acc.discounted_switch_costs += cfg.switch_cost * float(np.exp(-rho * state.t))
            acc.n_switches += 1
        floor = float(model.beta_floor(cfg, state.regime, state.h, state.lam))
        beta = float(np.clip(beta, floor, cfg.beta_max))
        if log is not None:
            log.append(
                {
                    "t": state.t,
                    "kind": tag,
                    "h": state.h,
                    "lam": state.lam,
                    "regime": state.regime,
                    "switch": bool(sw),
                    "beta": beta,
                }
            )
        return beta

    def advance(beta: float, target: float) -> None:
        dt = target - state.t
        if dt <= 0:
            return
        h, prod, pen, bottomed = _advance(
            cfg,
            np.array([state.regime]),
            np.array([beta]),
            np.array([state.h]),
            np.array([state.t]),
            np.array([dt]),
        )
        state.h = float(h[0])
        acc.discounted_production += float(prod[0])
        acc.discounted_penalties += float(pen[0])
        acc.hit_bottom |= bool(bottomed[0])
        state.lam = float(hawkes._decay(state.lam, dt, a, b))
        state.t = target

    for m in range(n_epochs):
        t_k1 = min(t0 + (m + 1) * cfg.sim.dt_dec, end)
        beta = decide("epoch")
        while True:
            if next_jump <= t_k1:
                advance(beta, next_jump)
                mark = hawkes.sample_mark(cfg, rng)
                jumped = apply_jump(cfg, state, mark)
                state.h, state.lam, state.failed = jumped.h, jumped.lam, jumped.failed
                acc.n_events += 1
                if log is not None:
                    log.append(
                        {"t": state.t, "kind": "storm", "mark": mark, "h": state.h, "lam": state.lam}
                    )
                if state.failed:
                    acc.failed = True
                    acc.failure_time = state.t
                    acc.terminal_penalty = cfg.failure_penalty * float(np.exp(-rho * state.t))
                    return acc
                if acc.n_events >= cfg.sim.max_events:
                    acc.truncated = True
                    return acc
                next_jump = state.t + hawkes.sample_next_jump_exact(
                    hawkes.IntensityState(state.lam, state.t), rng, a, b
                )
                beta = decide("post_storm")
            else:
                advance(beta, t_k1)
                break
    return acc


# --- lockstep batch engine -----------------------------------------------------


def simulate_paths(
    cfg: ModelConfig,
    policy: Policy,
    x0: DamState,
    n_paths: int,
    seed: int,
    t_cut: float | None = None,
) -> list[RewardAccumulator]:
    """Simulate ``n_paths`` independent paths from a common initial state.

    Path ``p`` draws exclusively from the generator seeded by the ``p``-th
    child of ``SeedSequence(seed)``, so each path's outcome depends only on
    ``(seed, p)`` and results are identical however paths are partitioned
    across workers.
    """
    children = np.random.SeedSequence(seed).spawn(int(n_paths))
    return _simulate_with_generators(cfg, policy, x0, children, t_cut)


def _simulate_with_generators(
    cfg: ModelConfig,
    policy: Policy,
    x0: DamState,
    seed_seqs: list,
    t_cut: float | None = None,
) -> list[RewardAccumulator]:
    t_cut = cfg.sim.t_cut if t_cut is None else t_cut
    if t_cut <= 0:
        raise ValueError("t_cut must be positive")
    a, b, c = cfg.reversion_speed, cfg.base_intensity, cfg.self_excitation
    rho = cfg.discount_rate
    n = len(seed_seqs)
    gens = [np.random.default_rng(s) for s in seed_seqs]

    h = np.full(n, float(x0.h))
    lam = np.full(n, float(x0.lam))
    reg = np.full(n, int(x0.regime), dtype=np.int64)
    t_now = np.full(n, float(x0.t))
    prod = np.zeros(n)
    pen = np.zeros(n)
    swc = np.zeros(n)
    term = np.zeros(n)
    nsw = np.zeros(n, dtype=np.int64)
    nev = np.zeros(n, dtype=np.int64)
    failed = np.zeros(n, dtype=bool)
    failure_t = np.full(n, np.nan)
    truncated = np.zeros(n, dtype=bool)
    bottom = np.zeros(n, dtype=bool)

    if x0.failed:
        failed[:] = True
        failure_t[:] = x0.t
        term[:] = cfg.failure_penalty * np.exp(-rho * x0.t)
        return _collect(prod, pen, swc, term, nsw, nev, failed, failure_t, truncated, bottom)

    e0 = np.array([g.standard_exponential() for g in gens])
    next_jump = t_now + hawkes._invert_integrated(lam, e0, a, b)

    t0 = float(x0.t)
    end = t0 + t_cut
    n_epochs = int(np.ceil(t_cut / cfg.sim.dt_dec - _TIME_EPS))
    beta = np.zeros(n)

    def apply_decisions(mask: np.ndarray, t_at: np.ndarray) -> None:
        if not mask.any():
            return
        idx = np.flatnonzero(mask)
        sw, bt = policy.decide_batch(h[idx], lam[idx], reg[idx], t_at[idx])
        sw = np.asarray(sw, dtype=bool)
        reg[idx] = np.where(sw, 1 - reg[idx], reg[idx])
        swc[idx] += np.where(sw, cfg.switch_cost * np.exp(-rho * t_at[idx]), 0.0)
        nsw[idx] += sw
        floor = model.beta_floor(cfg, reg[idx], h[idx], lam[idx])
        beta[idx] = np.clip(np.asarray(bt, dtype=float), floor, cfg.beta_max)

    def advance(mask: np.ndarray, target: np.ndarray) -> None:
        idx = np.flatnonzero(mask & (target > t_now))
        if idx.size == 0:
            return
        dt = target[idx] - t_now[idx]
        h_new, dprod, dpen, bott = _advance(cfg, reg[idx], beta[idx], h[idx], t_now[idx], dt)
        h[idx] = h_new
        prod[idx] += dprod
        pen[idx] += dpen
        bottom[idx] |= bott
        lam[idx] = hawkes._decay(lam[idx], dt, a, b)
        t_now[idx] = target[idx]

    for m in range(n_epochs):
        act = ~failed & ~truncated
        if not act.any():
            break
        t_k1 = min(t0 + (m + 1) * cfg.sim.dt_dec, end)
        apply_decisions(act, t_now)
        while True:
            jumping = act & (next_jump <= t_k1)
            target = np.where(jumping, next_jump, t_k1)
            advance(act, target)
            if not jumping.any():
                break
            jidx = np.flatnonzero(jumping)
            marks = np.array([hawkes.sample_mark(cfg, gens[p]) for p in jidx])
            h[jidx] += marks
            lam[jidx] += c * marks
            nev[jidx] += 1
            newly_failed = jumping & (h >= cfg.h_max)
            if newly_failed.any():
                fidx = np.flatnonzero(newly_failed)
                h[fidx] = cfg.h_max
                failed[fidx] = True
                failure_t[fidx] = t_now[fidx]
                term[fidx] = cfg.failure_penalty * np.exp(-rho * t_now[fidx])
            over_cap = jumping & (nev >= cfg.sim.max_events) & ~failed
            truncated |= over_cap
            act = act & ~failed & ~truncated
            jalive = jumping & act
            if jalive.any():
                aidx = np.flatnonzero(jalive)
                e = np.array([gens[p].standard_exponential() for p in aidx])
                next_jump[aidx] = t_now[aidx] + hawkes._invert_integrated(lam[aidx], e, a, b)
                apply_decisions(jalive, t_now)

    return _collect(prod, pen, swc, term, nsw, nev, failed, failure_t, truncated, bottom)


def _collect(prod, pen, swc, term, nsw, nev, failed, failure_t, truncated, bottom):
    out = []
    for p in range(len(prod)):
        out.append(
            RewardAccumulator(
                discounted_production=float(prod[p]),
                discounted_penalties=float(pen[p]),
                discounted_switch_costs=float(swc[p]),
                terminal_penalty=float(term[p]),
                n_switches=int(nsw[p]),
                n_events=int(nev[p]),
                failed=bool(failed[p]),
                failure_time=float(failure_t[p]),
                truncated=bool(truncated[p]),
                hit_bottom=bool(bottom[p]),
            )
        )
    return out
