"""Command-line surface: solve, simulate, sweep, validate, report.

Exit codes: 0 success, 1 validation failure (bad arguments or config),
2 solver non-convergence, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, io, solver, trajectory
from .model import ConfigError
from .solver import Grid, SolverError
from .trajectory import DamState

__all__ = ["main", "cli_main"]


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with code 1 (argparse defaults to 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="damctl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve the control problem and save the bundle")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", required=True)
    p_solve.add_argument("--tol", type=float, default=None)
    p_solve.add_argument("--max-iter", type=int, default=None)

    p_sim = sub.add_parser("simulate", help="Monte Carlo evaluation of a saved policy")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--policy", required=True, help="bundle directory from 'solve'")
    p_sim.add_argument("--h0", type=float, required=True, help="initial water level")
    p_sim.add_argument("--ell0", type=float, required=True, help="initial intensity")
    p_sim.add_argument("--regime", type=int, choices=(0, 1), default=0)
    p_sim.add_argument("--paths", type=int, required=True)
    p_sim.add_argument("--seed", type=int, required=True)
    p_sim.add_argument("--dump-paths", default=None, metavar="FILE", help="write per-path logs")

    p_sweep = sub.add_parser("sweep", help="re-solve across self-excitation values")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--c-list", type=float, nargs="+", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--tol", type=float, default=None)

    p_val = sub.add_parser("validate", help="compare solver values to Monte Carlo at probes")
    p_val.add_argument("--config", required=True)
    p_val.add_argument("--policy", required=True)
    p_val.add_argument("--probes", required=True, help="JSON list of {h, ell, regime}")
    p_val.add_argument("--paths", type=int, required=True)
    p_val.add_argument("--seed", type=int, required=True)
    p_val.add_argument("--refine", action="store_true", help="measure the lattice allowance too")

    p_rep = sub.add_parser("report", help="re-verify a bundle and summarize its policy")
    p_rep.add_argument("--policy", required=True)

    return parser


def cmd_solve(args) -> int:
    cfg = io.load_config(args.config)
    grid = Grid.from_config(cfg)
    tol = cfg.numerics.tol if args.tol is None else args.tol
    start = time.perf_counter()
    result = solver.solve(cfg, grid, tol=args.tol, max_iter=args.max_iter)
    wall = time.perf_counter() - start
    bundle = io.ResultBundle.from_solve(cfg, result, tol=tol, wall_time_s=wall)
    out = io.save_bundle(bundle, args.out)
    print(
        f"solved {grid.nh}x{grid.nl} lattice in {result.iterations} sweeps, "
        f"residual {result.residual:.3e}, {wall:.1f}s -> {out}"
    )
    return 0


def cmd_simulate(args) -> int:
    cfg = io.load_config(args.config)
    bundle = io.load_bundle(args.policy)
    adapter = analysis.GridPolicyAdapter(cfg, bundle.grid, bundle.values, bundle.policy)
    x0 = DamState(h=args.h0, lam=args.ell0, regime=args.regime)

    if args.dump_paths:
        logs = []
        children = np.random.SeedSequence(args.seed).spawn(args.paths)
        accs = []
        for p in range(args.paths):
            log: list = []
            acc = trajectory.simulate_controlled(
                cfg, adapter, DamState(args.h0, args.ell0, args.regime), np.random.default_rng(children[p]), log=log
            )
            accs.append(acc)
            logs.append({"path": p, "total": acc.total, "events": log})
        Path(args.dump_paths).write_text(json.dumps(logs, indent=1))
        totals = np.array([a.total for a in accs])
        est, se = float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(len(totals)))
        n_failed = sum(a.failed for a in accs)
    else:
        res = analysis.mc_value(cfg, adapter, x0, args.paths, args.seed)
        est, se, n_failed = res.estimate, res.std_error, res.n_failed
    print(
        f"estimate {est:.6f} +/- {se:.6f} (1 se) over {args.paths} paths, "
        f"{n_failed} overtopped"
    )
    return 0


def cmd_sweep(args) -> int:
    cfg = io.load_config(args.config)
    grid = Grid.from_config(cfg)
    start = time.perf_counter()
    result = analysis.sweep_c(cfg, args.c_list, tol=args.tol)
    wall = time.perf_counter() - start
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(result.to_json())
    meta = {"config_hash": io.config_hash(cfg), "c_list": args.c_list}
    (out / "metadata.json").write_text(json.dumps(meta, sort_keys=True))
    (out / "timing.json").write_text(json.dumps({"wall_time_s": wall}))

    thirds = np.array_split(np.arange(grid.nl), 3)
    for name, idx in zip(("low", "mid", "high"), thirds):
        ok = bool(result.monotone_in_c[idx].all())
        lo, hi = grid.ell_nodes[idx[0]], grid.ell_nodes[idx[-1]]
        print(
            f"threshold nonincreasing in excitation on intensity band "
            f"[{lo:.3g}, {hi:.3g}]: {ok}"
        )
    if not all(result.converged):
        bad = [c for c, okc in zip(result.c_values, result.converged) if not okc]
        print(f"warning: no convergence for c in {bad}", file=sys.stderr)
        return 2
    return 0


def cmd_validate(args) -> int:
    cfg = io.load_config(args.config)
    bundle = io.load_bundle(args.policy)
    adapter = analysis.GridPolicyAdapter(cfg, bundle.grid, bundle.values, bundle.policy)
    probes = json.loads(Path(args.probes).read_text())

    allowance = 0.0
    if args.refine:
        triples = [(int(p.get("regime", 0)), float(p["h"]), float(p["ell"])) for p in probes]
        allowance, _ = analysis.discretization_allowance(cfg, triples)
        print(f"lattice allowance (step halving): {allowance:.6f}")

    worst = -np.inf
    for p in probes:
        regime, h, ell = int(p.get("regime", 0)), float(p["h"]), float(p["ell"])
        x0 = DamState(h=h, lam=ell, regime=regime)
        mc = analysis.mc_value(cfg, adapter, x0, args.paths, args.seed)
        v = adapter.value_at(regime, h, ell)
        gap = abs(v - mc.estimate)
        bound = 3 * mc.std_error + allowance
        status = "ok" if gap <= bound else "GAP"
        worst = max(worst, gap - bound)
        print(
            f"probe i={regime} h={h:g} ell={ell:g}: solver {v:.5f} "
            f"mc {mc.estimate:.5f} +/- {mc.std_error:.5f}, |diff| {gap:.5f} "
            f"<= {bound:.5f}? {status}"
        )
    print(f"worst probe margin (gap - bound): {worst:.5f}")
    return 0


def cmd_report(args) -> int:
    bundle = io.load_bundle(args.policy)
    ok, recomputed = io.verify_bundle(bundle)
    print(f"stored residual {bundle.residual:.3e}, recomputed {recomputed:.3e}, match: {ok}")
    grid = bundle.grid
    result = solver.SolveResult(
        bundle.values, bundle.policy, bundle.iterations, bundle.residual, np.array([])
    )
    report = analysis.policy_report(bundle.cfg, grid, result)
    print(json.dumps(report, indent=1, sort_keys=True))
    return 0 if ok else 1


_COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "report": cmd_report,
}


def cli_main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"damctl: config error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"damctl: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"damctl: i/o error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    raise SystemExit(cli_main())
