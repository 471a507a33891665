"""Independent reference implementations used to check the package.

Everything here recomputes results from first principles with its own
arithmetic and plain Python loops; nothing calls into the solver or the batch
simulator being tested.
"""

from __future__ import annotations

import math

from scipy.integrate import quad, solve_ivp


def brute_force_solve(cfg, h_nodes, ell_nodes, tol=1e-13, max_iter=2_000_000):
    """Dense scalar value iteration for the lattice switching problem.

    Rebuilds every transition quantity from the raw parameters with scalar
    math (different code path and loop order from the production solver) and
    iterates both regime tables until the sup change falls below ``tol``.
    Returns ``(v0, v1)`` as nested lists indexed ``[ih][il]``.
    """
    nh, nl = len(h_nodes), len(ell_nodes)
    j = h_nodes[1] - h_nodes[0]
    k = ell_nodes[1] - ell_nodes[0]
    g = cfg.gravity
    coef = cfg.energy / (cfg.surface * g * cfg.efficiency)

    def turbine_flow(h):
        return coef / (h - cfg.h0)

    def floor_beta(i, h, ell):
        if ell > cfg.ell_bar:
            return 0.0
        short = max(cfg.min_outflow - i * turbine_flow(h), 0.0)
        if cfg.beta_floor_mode == "outflow":
            short = min(short / math.sqrt(2 * g * (h - cfg.h0)), cfg.beta_max)
        return short

    def reward(i, h):
        f_hi = cfg.penalty_coeff * max(h - cfg.h_plus, 0.0) ** 2
        f_lo = cfg.penalty_coeff * max(cfg.h_minus - h, 0.0) ** 2
        return i * cfg.energy - f_hi - f_lo

    def corner_weights(hpt, lpt):
        x = (hpt - h_nodes[0]) / j
        y = (lpt - ell_nodes[0]) / k
        i0 = min(max(int(math.floor(x)), 0), nh - 2)
        j0 = min(max(int(math.floor(y)), 0), nl - 2)
        fx = min(max(x - i0, 0.0), 1.0)
        fy = min(max(y - j0, 0.0), 1.0)
        return [
            (i0, j0, (1 - fx) * (1 - fy)),
            (i0 + 1, j0, fx * (1 - fy)),
            (i0, j0 + 1, (1 - fx) * fy),
            (i0 + 1, j0 + 1, fx * fy),
        ]

    v = [[[0.0] * nl for _ in range(nh)] for _ in (0, 1)]
    for i in (0, 1):
        for il in range(nl):
            v[i][nh - 1][il] = 0.0 - cfg.failure_penalty

    def node_value(i, ih, il, beta, vi):
        h, ell = h_nodes[ih], ell_nodes[il]
        mu_h = -i * turbine_flow(h) - beta * math.sqrt(2 * g * (h - cfg.h0))
        mu_l = cfg.reversion_speed * (cfg.base_intensity - ell)
        q = abs(mu_h) * k + abs(mu_l) * j + j * k * ell
        dt = j * k / q
        total = 0.0
        total += (k * max(mu_h, 0.0) / q) * vi[min(ih + 1, nh - 1)][il]
        total += (k * max(-mu_h, 0.0) / q) * vi[max(ih - 1, 0)][il]
        total += (j * max(mu_l, 0.0) / q) * vi[ih][min(il + 1, nl - 1)]
        total += (j * max(-mu_l, 0.0) / q) * vi[ih][max(il - 1, 0)]
        for z, pi in zip(cfg.marks.values, cfg.marks.probs):
            hpt = min(cfg.h_max, h + z)
            lpt = min(ell_nodes[-1], ell + cfg.self_excitation * z)
            jump_val = sum(w * vi[a][b] for a, b, w in corner_weights(hpt, lpt))
            total += (j * k * ell * pi / q) * jump_val
        return (total + reward(i, h) * dt) / (1.0 + cfg.discount_rate * dt)

    for _ in range(max_iter):
        delta = 0.0
        new = [[[0.0] * nl for _ in range(nh)] for _ in (0, 1)]
        # loop order: intensity outer, level inner, regime innermost
        for il in range(nl):
            for ih in range(nh):
                for i in (0, 1):
                    if ih == nh - 1:
                        best = 0.0 - cfg.failure_penalty
                    else:
                        h, ell = h_nodes[ih], ell_nodes[il]
                        best = -math.inf
                        for beta in (floor_beta(i, h, ell), cfg.beta_max):
                            best = max(best, node_value(i, ih, il, beta, v[i]))
                        best = max(best, v[1 - i][ih][il] - cfg.switch_cost)
                    new[i][ih][il] = best
                    delta = max(delta, abs(best - v[i][ih][il]))
        v = new
        if delta < tol:
            return v[0], v[1]
    raise RuntimeError("brute-force iteration did not converge")


def expected_storm_count(a, b, c, mean_mark, lam0, horizon):
    """Mean storm count from the first-moment ODE of the intensity.

    d E[lam]/dt = a (b - E[lam]) + c * mean_mark * E[lam]; the count mean is
    the time integral of E[lam].  Integrated numerically, independent of any
    closed form used elsewhere.
    """

    def rhs(_t, y):
        lam_mean = y[0]
        return [a * (b - lam_mean) + c * mean_mark * lam_mean, lam_mean]

    sol = solve_ivp(rhs, (0.0, horizon), [lam0, 0.0], rtol=1e-10, atol=1e-12)
    return float(sol.y[1, -1])


def deterministic_open_path_value(cfg, h_start, t_cut):
    """Quadrature value of the no-storm path with the turbine on, spill shut.

    The level ODE dh/dt = -coef/(h - h0) has the first integral
    (h - h0)^2 = (h_start - h0)^2 - 2 coef t, which gives a closed-form path;
    the reward integral is then evaluated by adaptive quadrature.
    """
    coef = cfg.energy / (cfg.surface * cfg.gravity * cfg.efficiency)
    head0_sq = (h_start - cfg.h0) ** 2

    def level(t):
        return cfg.h0 + math.sqrt(head0_sq - 2.0 * coef * t)

    def integrand(t):
        h = level(t)
        pen = cfg.penalty_coeff * max(cfg.h_minus - h, 0.0) ** 2
        pen += cfg.penalty_coeff * max(h - cfg.h_plus, 0.0) ** 2
        return math.exp(-cfg.discount_rate * t) * (cfg.energy - pen)

    value, _err = quad(integrand, 0.0, t_cut, limit=400)
    return value
