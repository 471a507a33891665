"""Controlled-Markov-chain discretization of the switching control problem.

The continuous problem (two turbine regimes, a free spillway coefficient, and
storm-driven upward level jumps) is replaced by a controlled chain on a
uniform level x intensity lattice.  Local drift and jump rates are converted
into one-step transition probabilities with a state-dependent time step, and
the coupled fixed point

    v_i = max( max_beta [ sum_m p_m v_i(y_m) + G_i dt ] / (1 + rho dt),
               v_{1-i} - switch_cost )

is iterated Jacobi style from zero until the sup-norm change falls below the
tolerance.  The top level row (overtopping) is a frozen Dirichlet boundary at
minus the failure penalty; the other edges use zero-gradient ghost copies.
The spillway maximization is exhaustive over the two-element candidate set
{floor, beta_max}; ties break toward the floor (release less water).

Upward jump targets rarely land on lattice nodes; their values are read by
bilinear interpolation at the clamped target point, which keeps all stencil
weights nonnegative and the scheme monotone.

Sweeps read a frozen previous field and write a fresh one, so the fixed point
does not depend on node visiting order or on how a sweep is parallelized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .model import ModelConfig

__all__ = [
    "SolverError",
    "Grid",
    "ValueField",
    "TransitionStencil",
    "PolicyField",
    "SolveResult",
    "BellmanOperator",
    "drift_coefficients",
    "build_stencil",
    "bellman_update",
    "solve",
    "hjb_residual",
    "extract_threshold",
]

#: simplex defect tolerated in a freshly built stencil
SIMPLEX_TOL = 1e-12

#: relative dead band for declaring the two spillway candidates tied.  At a
#: clamped boundary the continuation value is exactly beta-independent and the
#: two candidates differ only by rounding noise; ties go to the floor.
BETA_TIE_RTOL = 1e-10


class SolverError(RuntimeError):
    """Fixed-point iteration failed to converge; carries the residual history."""

    def __init__(self, message: str, residual_history: np.ndarray):
        super().__init__(message)
        self.residual_history = np.asarray(residual_history)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice over [h_min, h_max] x [ell_min, ell_max].

    Node (h_max, ell) is present exactly once per intensity column; the
    enlarged lattice used by the sweep adds one ghost layer per side, filled
    by zero-gradient copies (see :meth:`pad`).
    """

    h_nodes: np.ndarray
    ell_nodes: np.ndarray

    @classmethod
    def from_config(cls, cfg: ModelConfig) -> "Grid":
        g = cfg.grid
        return cls(
            np.linspace(cfg.h_min, cfg.h_max, g.nh),
            np.linspace(g.ell_min, g.ell_max, g.nl),
        )

    @property
    def nh(self) -> int:
        return len(self.h_nodes)

    @property
    def nl(self) -> int:
        return len(self.ell_nodes)

    @property
    def j(self) -> float:
        """Level step."""
        return float(self.h_nodes[1] - self.h_nodes[0])

    @property
    def k(self) -> float:
        """Intensity step."""
        return float(self.ell_nodes[1] - self.ell_nodes[0])

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.h_nodes, self.ell_nodes, indexing="ij")

    def pad(self, v: np.ndarray) -> np.ndarray:
        """Enlarged array with one zero-gradient ghost layer per side."""
        out = np.empty((self.nh + 2, self.nl + 2), dtype=v.dtype)
        out[1:-1, 1:-1] = v
        out[0, 1:-1] = v[0]
        out[-1, 1:-1] = v[-1]
        out[:, 0] = out[:, 1]
        out[:, -1] = out[:, -2]
        return out

    def nearest(self, h: float, ell: float) -> tuple[int, int]:
        """Indices of the lattice node closest to a continuous state."""
        ih = int(np.clip(round((h - self.h_nodes[0]) / self.j), 0, self.nh - 1))
        il = int(np.clip(round((ell - self.ell_nodes[0]) / self.k), 0, self.nl - 1))
        return ih, il


@dataclass
class ValueField:
    """Paired value arrays, one per turbine regime, over the lattice."""

    v0: np.ndarray
    v1: np.ndarray

    @classmethod
    def zeros(cls, grid: Grid) -> "ValueField":
        return cls(np.zeros((grid.nh, grid.nl)), np.zeros((grid.nh, grid.nl)))

    @classmethod
    def full(cls, grid: Grid, value: float) -> "ValueField":
        shape = (grid.nh, grid.nl)
        return cls(np.full(shape, float(value)), np.full(shape, float(value)))

    def regime(self, i: int) -> np.ndarray:
        return self.v1 if i else self.v0

    def copy(self) -> "ValueField":
        return ValueField(self.v0.copy(), self.v1.copy())

    def stack(self) -> np.ndarray:
        return np.stack([self.v0, self.v1])


@dataclass
class PolicyField:
    """Per-node decisions extracted from one Bellman application.

    ``switch[i]`` marks nodes where the obstacle branch wins in regime ``i``
    (toggle the turbine); ``beta_choice[i]`` is the continuation spillway
    coefficient, always one of the two candidates; ``maximal[i]`` records
    which candidate won (True for beta_max) so downstream consumers do not
    rely on float equality.
    """

    switch: np.ndarray  # (2, nh, nl) bool
    beta_choice: np.ndarray  # (2, nh, nl) float
    maximal: np.ndarray  # (2, nh, nl) bool


@dataclass(frozen=True)
class SolveResult:
    values: ValueField
    policy: PolicyField
    iterations: int
    residual: float
    residual_history: np.ndarray


@dataclass(frozen=True)
class TransitionStencil:
    """One-step chain data at a single node for a fixed regime and beta.

    ``probs`` concatenates the four drift-neighbor probabilities with one
    probability per storm size (seven entries for the default three-point
    storm law); all are nonnegative and sum to one, and ``dt = j k / q``.
    Drift neighbors are clamped node indices (the zero-gradient ghost
    convention); jump entries carry the clamped target point together with
    its bilinear corner decomposition, four (index, weight) pairs each.
    """

    drift_neighbors: tuple[tuple[int, int], ...]
    jump_points: tuple[tuple[float, float], ...]
    jump_corners: tuple[tuple[tuple[tuple[int, int], float], ...], ...]
    probs: np.ndarray
    dt: float
    q: float


# --- local chain ingredients -------------------------------------------------


def drift_coefficients(cfg: ModelConfig, i: int, h, ell, beta):
    """Local drift of the controlled pair (level, intensity).

    The level drifts down by turbine extraction plus spillway flow (never
    up: storms are the only inflow); the intensity relaxes toward its base
    level at the mean-reversion speed.
    """
    mu_h = -(i * model.phi(cfg, h)) - model.spill_rate(cfg, beta, h)
    mu_ell = cfg.reversion_speed * (cfg.base_intensity - ell)
    return mu_h, mu_ell


def _bilinear_parts(grid: Grid, hpt, lpt):
    """Lower-left corner indices and fractional offsets of a target point."""
    x = (np.asarray(hpt) - grid.h_nodes[0]) / grid.j
    y = (np.asarray(lpt) - grid.ell_nodes[0]) / grid.k
    i0 = np.clip(np.floor(x).astype(np.int64), 0, grid.nh - 2)
    j0 = np.clip(np.floor(y).astype(np.int64), 0, grid.nl - 2)
    fx = np.clip(x - i0, 0.0, 1.0)
    fy = np.clip(y - j0, 0.0, 1.0)
    return i0, j0, fx, fy


def build_stencil(
    cfg: ModelConfig, grid: Grid, i: int, node: tuple[int, int], beta: float
) -> TransitionStencil:
    """Assemble the transition stencil at one node.

    Per-axis probabilities are upwind fractions of the total outflow rate
    ``q = |mu_h| k + |mu_ell| j + j k ell``; each storm size contributes
    ``j k ell pi_m / q`` toward its clamped jump target.
    """
    ih, il = node
    if not (0 <= ih < grid.nh and 0 <= il < grid.nl):
        raise ValueError(f"node {node} outside the lattice")
    h = float(grid.h_nodes[ih])
    ell = float(grid.ell_nodes[il])
    j, k = grid.j, grid.k

    mu_h, mu_ell = drift_coefficients(cfg, i, h, ell, beta)
    q = abs(mu_h) * k + abs(mu_ell) * j + j * k * ell
    if q == 0.0:
        raise ValueError("degenerate stencil: zero total rate (requires ell > 0)")
    dt = j * k / q

    clamp_h = lambda n: min(max(n, 0), grid.nh - 1)
    clamp_l = lambda n: min(max(n, 0), grid.nl - 1)
    drift_neighbors = (
        (clamp_h(ih + 1), il),
        (ih, clamp_l(il + 1)),
        (clamp_h(ih - 1), il),
        (ih, clamp_l(il - 1)),
    )
    p_drift = [
        k * max(mu_h, 0.0) / q,
        j * max(mu_ell, 0.0) / q,
        k * max(-mu_h, 0.0) / q,
        j * max(-mu_ell, 0.0) / q,
    ]

    jump_points = []
    jump_corners = []
    p_jump = []
    for z, pi in zip(cfg.marks.values, cfg.marks.probs):
        hpt = min(cfg.h_max, h + z)
        lpt = min(grid.ell_nodes[-1], ell + cfg.self_excitation * z)
        i0, j0, fx, fy = _bilinear_parts(grid, hpt, lpt)
        i0, j0, fx, fy = int(i0), int(j0), float(fx), float(fy)
        corners = (
            ((i0, j0), (1 - fx) * (1 - fy)),
            ((i0 + 1, j0), fx * (1 - fy)),
            ((i0, j0 + 1), (1 - fx) * fy),
            ((i0 + 1, j0 + 1), fx * fy),
        )
        jump_points.append((hpt, lpt))
        jump_corners.append(corners)
        p_jump.append(j * k * ell * pi / q)

    probs = np.array(p_drift + p_jump)
    if probs.min() < 0 or abs(probs.sum() - 1.0) > SIMPLEX_TOL:
        raise AssertionError("stencil probabilities left the simplex")
    return TransitionStencil(
        drift_neighbors=drift_neighbors,
        jump_points=tuple(jump_points),
        jump_corners=tuple(jump_corners),
        probs=probs,
        dt=dt,
        q=q,
    )


# --- vectorized Bellman operator ---------------------------------------------


class _CandidateTable:
    """Precomputed transition data for one (regime, beta candidate) pair."""

    def __init__(self, cfg: ModelConfig, grid: Grid, i: int, beta: np.ndarray):
        HH, LL = grid.mesh()
        j, k = grid.j, grid.k
        mu_h, mu_ell = drift_coefficients(cfg, i, HH, LL, beta)
        q = np.abs(mu_h) * k + np.abs(mu_ell) * j + j * k * LL
        dt = j * k / q
        self.beta = beta
        self.p_up = k * np.maximum(mu_h, 0.0) / q
        self.p_dn = k * np.maximum(-mu_h, 0.0) / q
        self.p_lp = j * np.maximum(mu_ell, 0.0) / q
        self.p_lm = j * np.maximum(-mu_ell, 0.0) / q
        self.p_jump_total = j * k * LL / q  # split across storm sizes by pi_m
        self.g_dt = model.running_reward(cfg, i, HH) * dt
        self.denom = 1.0 + cfg.discount_rate * dt
        self.dt = dt

    def continuation(self, padded: np.ndarray, jump_mix: np.ndarray) -> np.ndarray:
        up = padded[2:, 1:-1]
        dn = padded[:-2, 1:-1]
        lp = padded[1:-1, 2:]
        lm = padded[1:-1, :-2]
        num = (
            self.p_up * up
            + self.p_dn * dn
            + self.p_lp * lp
            + self.p_lm * lm
            + self.p_jump_total * jump_mix
            + self.g_dt
        )
        return num / self.denom


class BellmanOperator:
    """One Jacobi sweep of the discrete variational inequality.

    Transition tables for both regimes and both spillway candidates, plus the
    bilinear gather indices for the storm jump targets, are built once from
    ``(cfg, grid)`` and reused across sweeps.
    """

    def __init__(self, cfg: ModelConfig, grid: Grid):
        self.cfg = cfg
        self.grid = grid
        HH, LL = grid.mesh()
        self.floor = [np.asarray(model.beta_floor(cfg, i, HH, LL), dtype=float) for i in (0, 1)]
        full = np.full_like(HH, cfg.beta_max)
        self.tables = [
            (_CandidateTable(cfg, grid, i, self.floor[i]), _CandidateTable(cfg, grid, i, full))
            for i in (0, 1)
        ]

        # bilinear gather data per storm size (shared by regimes and candidates)
        self._jump_idx = []
        self._jump_w = []
        for z in cfg.marks.values:
            hpt = np.minimum(cfg.h_max, HH + z)
            lpt = np.minimum(grid.ell_nodes[-1], LL + cfg.self_excitation * z)
            i0, j0, fx, fy = _bilinear_parts(grid, hpt, lpt)
            base = i0 * grid.nl + j0
            self._jump_idx.append((base, base + grid.nl, base + 1, base + grid.nl + 1))
            self._jump_w.append(
                ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)
            )
        self._pi = np.asarray(cfg.marks.probs)

    def _jump_mix(self, v: np.ndarray) -> np.ndarray:
        """Probability-weighted bilinear reads of ``v`` at all jump targets."""
        flat = v.ravel()
        mix = 0.0
        for pi, idx, w in zip(self._pi, self._jump_idx, self._jump_w):
            val = w[0] * flat[idx[0]] + w[1] * flat[idx[1]] + w[2] * flat[idx[2]] + w[3] * flat[idx[3]]
            mix = mix + pi * val
        return mix

    def sweep(self, vf: ValueField) -> tuple[ValueField, PolicyField]:
        """Apply the operator once, reading only the previous field."""
        cfg, grid = self.cfg, self.grid
        new = [None, None]
        switch = np.zeros((2, grid.nh, grid.nl), dtype=bool)
        beta_choice = np.zeros((2, grid.nh, grid.nl))
        maximal = np.zeros((2, grid.nh, grid.nl), dtype=bool)

        for i in (0, 1):
            v_i = vf.regime(i)
            padded = grid.pad(v_i)
            jump_mix = self._jump_mix(v_i)
            tbl_floor, tbl_max = self.tables[i]
            cont_floor = tbl_floor.continuation(padded, jump_mix)
            cont_max = tbl_max.continuation(padded, jump_mix)
            cont = np.maximum(cont_max, cont_floor)
            # argmax with a dead band: rounding-level ties keep the floor
            use_max = cont_max > cont_floor + BETA_TIE_RTOL * (1.0 + np.abs(cont_floor))

            obstacle = vf.regime(1 - i) - cfg.switch_cost
            out = np.maximum(cont, obstacle)
            sw = obstacle > cont  # ties stay in regime

            # frozen overtopping boundary
            out[-1, :] = 0.0 - cfg.failure_penalty
            sw[-1, :] = False
            use_max[-1, :] = False

            new[i] = out
            switch[i] = sw
            maximal[i] = use_max
            beta_choice[i] = np.where(use_max, cfg.beta_max, self.floor[i])

        return ValueField(new[0], new[1]), PolicyField(switch, beta_choice, maximal)


def bellman_update(cfg: ModelConfig, grid: Grid, vf: ValueField) -> tuple[ValueField, PolicyField]:
    """One full-grid Jacobi update of both regime fields."""
    return BellmanOperator(cfg, grid).sweep(vf)


def solve(
    cfg: ModelConfig,
    grid: Grid | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
    v_init: float | ValueField | None = None,
) -> SolveResult:
    """Iterate the Bellman operator to its fixed point.

    Starts from zero (or ``v_init``), stops when the sup-norm change of both
    fields falls below ``tol``, and reports as residual the sup-norm change
    of one further update, which equals the max-abs fixed-point defect of the
    returned field.  Raises :class:`SolverError` with the residual history on
    non-convergence.
    """
    grid = grid or Grid.from_config(cfg)
    tol = cfg.numerics.tol if tol is None else tol
    max_iter = cfg.numerics.max_iter if max_iter is None else max_iter
    if tol <= 0:
        raise ValueError("tol must be positive")

    op = BellmanOperator(cfg, grid)
    if isinstance(v_init, ValueField):
        vf = v_init.copy()
    else:
        vf = ValueField.zeros(grid) if v_init is None else ValueField.full(grid, v_init)
    vf.v0[-1, :] = 0.0 - cfg.failure_penalty
    vf.v1[-1, :] = 0.0 - cfg.failure_penalty

    history = []
    for it in range(1, max_iter + 1):
        new, policy = op.sweep(vf)
        diff = max(
            float(np.max(np.abs(new.v0 - vf.v0))),
            float(np.max(np.abs(new.v1 - vf.v1))),
        )
        history.append(diff)
        vf = new
        if diff < tol:
            probe, policy = op.sweep(vf)
            residual = max(
                float(np.max(np.abs(probe.v0 - vf.v0))),
                float(np.max(np.abs(probe.v1 - vf.v1))),
            )
            return SolveResult(vf, policy, it, residual, np.asarray(history))
    raise SolverError(
        f"no convergence after {max_iter} sweeps (last change {history[-1]:.3e})",
        np.asarray(history),
    )


def hjb_residual(cfg: ModelConfig, grid: Grid, vf: ValueField) -> np.ndarray:
    """Fixed-point defect ``v - T(v)`` per regime and node, shape (2, nh, nl).

    Zero at the solution; the frozen overtopping row is zero by construction
    whenever the field satisfies the boundary condition.
    """
    updated, _ = bellman_update(cfg, grid, vf)
    return vf.stack() - updated.stack()


def extract_threshold(policy: PolicyField, grid: Grid, i: int) -> np.ndarray:
    """Lowest level per intensity column at which the spillway opens fully.

    Returns one level value per intensity node; ``inf`` where the maximal
    release is never chosen in that column.
    """
    maximal = policy.maximal[i]
    out = np.full(grid.nl, np.inf)
    for il in range(grid.nl):
        hits = np.flatnonzero(maximal[:, il])
        if hits.size:
            out[il] = grid.h_nodes[hits[0]]
    return out
