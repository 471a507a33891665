"""Cross-validation of solver output and sensitivity in the excitation parameter.

The lattice policy is replayed on the exact simulator through a nearest-node
adapter, giving an independent Monte Carlo estimate of the value it actually
achieves; the gap to the lattice value is judged against sampling error plus
an empirically measured discretization allowance.  The sweep re-solves the
full problem for a list of self-excitation values and reports how the
full-release threshold moves.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model, solver, trajectory
from .model import ModelConfig
from .solver import Grid, PolicyField, SolveResult, SolverError, ValueField
from .trajectory import DamState, Policy, RewardAccumulator

__all__ = [
    "GridPolicyAdapter",
    "McResult",
    "SweepResult",
    "worker_count",
    "mc_value",
    "discretization_allowance",
    "sweep_c",
    "policy_report",
    "monotone_within_cell",
]


def worker_count() -> int:
    """Monte Carlo worker cap from the DAMCTL_THREADS environment variable."""
    raw = os.environ.get("DAMCTL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


class GridPolicyAdapter(Policy):
    """Replay a lattice policy at continuous states via nearest-node lookup.

    Switching is a discrete decision, so no interpolation: the node's switch
    flag applies as is, and the spillway coefficient of the post-switch
    regime is re-clamped into the admissible interval at the continuous
    state (node and state can straddle the low-flow threshold).
    """

    def __init__(self, cfg: ModelConfig, grid: Grid, values: ValueField, policy: PolicyField):
        self.cfg = cfg
        self.grid = grid
        self.values = values
        self.policy = policy

    @classmethod
    def from_result(cls, cfg: ModelConfig, grid: Grid, result: SolveResult) -> "GridPolicyAdapter":
        return cls(cfg, grid, result.values, result.policy)

    def decide(self, state: DamState) -> tuple[bool, float]:
        ih, il = self.grid.nearest(state.h, state.lam)
        sw = bool(self.policy.switch[state.regime, ih, il])
        after = 1 - state.regime if sw else state.regime
        beta = float(self.policy.beta_choice[after, ih, il])
        floor = float(model.beta_floor(self.cfg, after, state.h, state.lam))
        return sw, float(np.clip(beta, floor, self.cfg.beta_max))

    def decide_batch(self, h, lam, regime, t):
        grid = self.grid
        ih = np.clip(np.rint((h - grid.h_nodes[0]) / grid.j).astype(np.int64), 0, grid.nh - 1)
        il = np.clip(np.rint((lam - grid.ell_nodes[0]) / grid.k).astype(np.int64), 0, grid.nl - 1)
        reg = np.asarray(regime, dtype=np.int64)
        sw = self.policy.switch[reg, ih, il]
        after = np.where(sw, 1 - reg, reg)
        beta = self.policy.beta_choice[after, ih, il]
        floor = model.beta_floor(self.cfg, after, h, lam)
        return sw, np.clip(beta, floor, self.cfg.beta_max)

    def value_at(self, regime: int, h: float, ell: float) -> float:
        """Lattice value at the node nearest to a state."""
        ih, il = self.grid.nearest(h, ell)
        return float(self.values.regime(regime)[ih, il])


@dataclass(frozen=True)
class McResult:
    """Sample statistics of the discounted path reward."""

    estimate: float
    std_error: float
    n_paths: int
    n_failed: int
    n_truncated: int
    n_hit_bottom: int

    @property
    def truncation_fraction(self) -> float:
        return self.n_truncated / self.n_paths


def _simulate_chunk_range(args):
    cfg, policy, x0, seed, n_total, lo, hi, t_cut = args
    children = np.random.SeedSequence(seed).spawn(n_total)[lo:hi]
    return trajectory._simulate_with_generators(cfg, policy, x0, children, t_cut)


def _simulate_all(cfg, policy, x0, n_paths, seed, t_cut) -> list[RewardAccumulator]:
    workers = min(worker_count(), n_paths)
    if workers <= 1:
        return trajectory.simulate_paths(cfg, policy, x0, n_paths, seed, t_cut)
    # Each path draws only from its own seed-indexed generator, so slicing the
    # path range across processes cannot change any individual outcome.
    bounds = np.linspace(0, n_paths, workers + 1).astype(int)
    jobs = [
        (cfg, policy, x0, seed, n_paths, int(bounds[w]), int(bounds[w + 1]), t_cut)
        for w in range(workers)
    ]
    out: list[RewardAccumulator] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_simulate_chunk_range, jobs):
            out.extend(part)
    return out


def mc_value(
    cfg: ModelConfig,
    policy: Policy,
    x0: DamState,
    n_paths: int,
    rng_seed: int,
    t_cut: float | None = None,
) -> McResult:
    """Monte Carlo estimate of the discounted reward under ``policy``.

    Paths are independent with seed-indexed generators derived from
    ``rng_seed``; repeated calls with the same arguments reproduce the same
    estimate regardless of the worker count.
    """
    if n_paths < 100:
        raise ValueError("n_paths must be at least 100 for a usable standard error")
    accs = _simulate_all(cfg, policy, x0, n_paths, rng_seed, t_cut)
    totals = np.array([a.total for a in accs])
    est = float(totals.mean())
    se = float(totals.std(ddof=1) / np.sqrt(n_paths))
    return McResult(
        estimate=est,
        std_error=se,
        n_paths=n_paths,
        n_failed=sum(a.failed for a in accs),
        n_truncated=sum(a.truncated for a in accs),
        n_hit_bottom=sum(a.hit_bottom for a in accs),
    )


def discretization_allowance(
    cfg: ModelConfig,
    probes: list[tuple[int, float, float]],
    tol: float | None = None,
) -> tuple[float, dict]:
    """Empirical lattice-error allowance at probe states, by step halving.

    Solves at the configured resolution and at half the step in both
    directions (every coarse node is a fine node), then extrapolates the gap
    of a first-order scheme: allowance = 2 * max |v_coarse - v_fine| over the
    probes.  Returned with a detail dict for reporting.
    """
    coarse = solver.solve(cfg, tol=tol)
    fine_cfg = dataclasses.replace(
        cfg,
        grid=dataclasses.replace(cfg.grid, nh=2 * cfg.grid.nh - 1, nl=2 * cfg.grid.nl - 1),
    )
    fine = solver.solve(fine_cfg, tol=tol)
    g_coarse = Grid.from_config(cfg)
    g_fine = Grid.from_config(fine_cfg)
    gaps = []
    details = []
    for regime, h, ell in probes:
        vc = float(coarse.values.regime(regime)[g_coarse.nearest(h, ell)])
        vf = float(fine.values.regime(regime)[g_fine.nearest(h, ell)])
        gaps.append(abs(vc - vf))
        details.append({"regime": regime, "h": h, "ell": ell, "coarse": vc, "fine": vf})
    allowance = 2.0 * max(gaps)
    return allowance, {"probes": details, "max_gap": max(gaps), "allowance": allowance}


# --- sensitivity sweep ---------------------------------------------------------


@dataclass(frozen=True)
class SweepResult:
    """Thresholds and probe values across self-excitation settings.

    ``thresholds[ci, i, :]`` is the full-release threshold curve of regime
    ``i`` for ``c_values[ci]``; non-converged solves leave NaN columns and a
    False ``converged`` flag.  ``probe_values[ci, i, :]`` samples the value
    surface at the middle level node for each probe intensity.
    """

    c_values: tuple[float, ...]
    ell_nodes: np.ndarray
    thresholds: np.ndarray
    probe_ells: tuple[float, ...]
    probe_values: np.ndarray
    converged: tuple[bool, ...]
    monotone_in_c: np.ndarray  # per intensity node, regime 0

    def to_json(self) -> str:
        doc = {
            "c_values": list(self.c_values),
            "ell_nodes": self.ell_nodes.tolist(),
            "thresholds": self.thresholds.tolist(),
            "probe_ells": list(self.probe_ells),
            "probe_values": self.probe_values.tolist(),
            "converged": list(self.converged),
            "monotone_in_c": self.monotone_in_c.tolist(),
        }
        return json.dumps(doc, sort_keys=True)


def monotone_within_cell(values: np.ndarray, step: float, slack: float = 1e-9) -> bool:
    """True when a sequence never rises by more than one lattice cell."""
    v = np.asarray(values, dtype=float)
    prev, nxt = v[:-1], v[1:]
    ok = np.ones(len(v) - 1, dtype=bool)
    finite_pair = np.isfinite(prev)
    # an infinite predecessor bounds nothing; a finite one caps the successor
    ok[finite_pair] = nxt[finite_pair] <= prev[finite_pair] + step + slack
    return bool(ok.all())


def sweep_c(
    cfg: ModelConfig,
    c_list: list[float],
    probe_ells: list[float] | None = None,
    tol: float | None = None,
) -> SweepResult:
    """Re-solve the control problem for each self-excitation value.

    Everything else stays fixed.  Emits a per-intensity-node verdict on
    whether the regime-0 full-release threshold is nonincreasing in the
    excitation within one lattice cell.  Solver failures for an individual
    value are recorded, not raised.
    """
    if not c_list or any(c <= 0 for c in c_list):
        raise ValueError("c_list must be non-empty and positive")
    grid = Grid.from_config(cfg)
    probe_ells = list(probe_ells) if probe_ells else [float(grid.ell_nodes[grid.nl // 2])]
    mid_h = grid.nh // 2

    n_c = len(c_list)
    thresholds = np.full((n_c, 2, grid.nl), np.nan)
    probe_values = np.full((n_c, 2, len(probe_ells)), np.nan)
    converged = []
    for ci, c in enumerate(c_list):
        cfg_c = dataclasses.replace(cfg, self_excitation=float(c))
        try:
            res = solver.solve(cfg_c, grid, tol=tol)
        except SolverError:
            converged.append(False)
            continue
        converged.append(True)
        for i in (0, 1):
            thresholds[ci, i] = solver.extract_threshold(res.policy, grid, i)
            for pi, ell in enumerate(probe_ells):
                _, il = grid.nearest(grid.h_nodes[mid_h], ell)
                probe_values[ci, i, pi] = res.values.regime(i)[mid_h, il]

    order = np.argsort(c_list)
    mono = np.zeros(grid.nl, dtype=bool)
    for il in range(grid.nl):
        seq = thresholds[order, 0, il]
        mono[il] = bool(np.isfinite(seq).all()) and monotone_within_cell(seq, grid.j)
    return SweepResult(
        c_values=tuple(float(c) for c in c_list),
        ell_nodes=grid.ell_nodes.copy(),
        thresholds=thresholds,
        probe_ells=tuple(probe_ells),
        probe_values=probe_values,
        converged=tuple(converged),
        monotone_in_c=mono,
    )


def policy_report(cfg: ModelConfig, grid: Grid, result: SolveResult) -> dict:
    """Structured summary of a converged solve.

    Covers the switch regions of both regimes, verification that the chosen
    coefficients take only the two candidate values, the full-release
    threshold curves, and whether full release is ever chosen below the
    touristic level.  Value-surface shape diagnostics are descriptive only.
    """
    pol = result.policy
    HH, LL = grid.mesh()
    floors = np.stack([model.beta_floor(cfg, i, HH, LL) for i in (0, 1)])
    on_candidates = np.where(pol.maximal, pol.beta_choice == cfg.beta_max, pol.beta_choice == floors)

    thresholds = {i: solver.extract_threshold(pol, grid, i) for i in (0, 1)}
    below = grid.h_nodes[:, None] < cfg.h_minus
    v = result.values.stack()
    report = {
        "close_switch_nodes": int(pol.switch[1].sum()),
        "open_switch_nodes": int(pol.switch[0].sum()),
        "close_region_empty": bool(pol.switch[1].sum() == 0),
        "bang_bang": bool(on_candidates.all()),
        "threshold_regime0": thresholds[0].tolist(),
        "threshold_regime1": thresholds[1].tolist(),
        "spill_full_below_touristic": bool((pol.maximal[0] & below).any()),
        "value_diagnostics": {
            "min": float(v.min()),
            "max": float(v.max()),
            "increasing_in_h_fraction": float(np.mean(np.diff(v, axis=1) >= 0)),
            "increasing_in_ell_fraction": float(np.mean(np.diff(v, axis=2) >= 0)),
        },
    }
    return report
