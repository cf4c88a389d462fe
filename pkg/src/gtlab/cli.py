"""Command line entry point: ``gtlab {run,spectral,verify,tune,fixed-point}``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import analysis, harness
from .errors import GTLabError, TuningFailedError
from .topology import build_topology, certify_assumption1, combination_matrix, read_edge_list

S = argparse.SUPPRESS


def _run_flags(ap: argparse.ArgumentParser, stepsize: bool = True) -> None:
    ap.add_argument("--config", help="flat key = value file; explicit flags override it")
    ap.add_argument("--algo", choices=harness.ALGORITHMS, default=S)
    ap.add_argument("--graph", choices=harness.GRAPHS, default=S)
    ap.add_argument("--rule", default=S, help="uniform, metropolis, lazy-uniform or lazy-metropolis")
    ap.add_argument("--n", type=int, default=S)
    ap.add_argument("--problem", choices=harness.PROBLEMS, default=S)
    ap.add_argument("--d", type=int, default=S)
    ap.add_argument("--sigma-v2", dest="sigma_v2", type=float, default=S)
    ap.add_argument("--sigma-n2", dest="sigma_n2", type=float, default=S)
    ap.add_argument("--iters", type=int, default=S)
    ap.add_argument("--reps", type=int, default=S)
    ap.add_argument("--seed", type=int, default=S)
    ap.add_argument("--every", type=int, default=S, help="record every this many iterations")
    ap.add_argument("--batch", type=int, default=S, help="repetitions simulated together")
    ap.add_argument("--workers", type=int, default=S, help="threads over repetition groups")
    ap.add_argument("--deterministic", action="store_true", default=S, help="exact gradients")
    if stepsize:
        g = ap.add_mutually_exclusive_group()
        g.add_argument("--alpha", type=float, default=S)
        g.add_argument("--auto", dest="alpha", action="store_const", const="auto", default=S,
                       help="theory-selected stepsize")
        g.add_argument("--tune-to", dest="target", type=float, default=S,
                       help="tune the stepsize to this final relative error")


def _config(args, **extra) -> harness.RunConfig:
    values = harness.load_config(args.config) if getattr(args, "config", None) else {}
    skip = {"cmd", "config", "plot_out", "exhaustive", "func", "target_pos", "alpha_fp"}
    flags = {k: v for k, v in vars(args).items() if k not in skip}
    values.update(flags)
    values.update(extra)
    if args.cmd == "run" and "target" in values:
        # a target means tuning unless a stepsize is given at the same or a higher level
        if ("target" in flags and "alpha" not in flags) or "alpha" not in values:
            values["alpha"] = "tune"
    return harness.RunConfig(**values)


def cmd_run(args) -> int:
    cfg = _config(args)
    trace = harness.run(cfg)
    if cfg.out is None:
        sys.stdout.write(trace.csv_text())
    if args.plot_out:
        trace.write_plot_data(args.plot_out)
    if trace.tuning is not None:
        print(f"# tuned alpha={trace.alpha!r}", file=sys.stderr)
    return 0


def cmd_tune(args) -> int:
    cfg = _config(args)
    target = cfg.target if cfg.target is not None else args.target_pos
    if target is None:
        print("tune: a target relative error is required (--tune-to)", file=sys.stderr)
        return 2
    try:
        res = harness.tune_stepsize(cfg, target, exhaustive=args.exhaustive)
    except TuningFailedError as e:
        print(f"tuning failed: {e}", file=sys.stderr)
        for c in e.candidates:
            print(f"  alpha={c.alpha:.6g} final_error={c.final_error:.4g}", file=sys.stderr)
        return 1
    print(res.table())
    print(f"alpha={res.alpha!r} iterations_to_target={res.iterations_to_target}")
    return 0


def _weights(args):
    if args.edges:
        t = read_edge_list(args.edges, args.n)
    else:
        t = build_topology(args.graph, args.n)
    return combination_matrix(t, args.rule)


def cmd_spectral(args) -> int:
    W = _weights(args)
    print(f"graph={args.edges or args.graph} n={W.n} rule={W.rule}")
    print(f"lambda={W.lam!r}")
    print(f"gap={W.gap!r}")
    print("eigenvalues=" + " ".join(f"{v:.12g}" for v in W.eigvals))
    dec = analysis.decompose(W)
    print(f"gamma={dec.gamma!r} c1={dec.c1!r} c2={dec.c2!r}")
    rep = certify_assumption1(W, require_psd=args.require_psd)
    print(rep)
    return 0 if rep.ok else 1


def cmd_verify(args) -> int:
    W = None
    if args.weights:
        W = np.loadtxt(args.weights, delimiter=",")
    rep = harness.verify_all(args.scope, W=W, alpha=args.alpha)
    print(rep)
    print("OK" if rep.ok else f"FAILED ({len(rep.failures())} checks)")
    return 0 if rep.ok else 1


def cmd_fixed_point(args) -> int:
    cfg = _config(args, alpha=args.alpha_fp)
    p = harness.build_problem(cfg)
    W = harness.build_weights(cfg)
    fp = analysis.solve_fixed_point(p, W, cfg.alpha)
    coef = W.U_hat.T @ fp.z_star
    bound = cfg.alpha * W.lam**2 * np.linalg.norm(W.U_hat.T @ p.grad(fp.x_star)) / (1 - W.lam)
    print(f"alpha={cfg.alpha!r}")
    print("x_star=" + " ".join(f"{v:.12g}" for v in p.x_star))
    print(f"residual_primal={fp.residual_primal:.3e}")
    print(f"residual_dual={fp.residual_dual:.3e}")
    print(f"dual_norm={np.linalg.norm(coef):.6g} bound={bound:.6g}")
    return 0 if max(fp.residual_primal, fp.residual_dual) <= 1e-8 else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gtlab", description="Gradient-tracking experiment lab.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="simulate and write a CSV trace")
    _run_flags(p)
    p.add_argument("--out", default=S, help="CSV path (default: stdout)")
    p.add_argument("--plot-out", dest="plot_out", help="also write per-iteration mean/std columns")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tune", help="grid-search the stepsize to a target relative error")
    _run_flags(p, stepsize=False)
    p.add_argument("--tune-to", dest="target", type=float, default=S)
    p.add_argument("target_pos", nargs="?", type=float, default=None, metavar="TARGET")
    p.add_argument("--exhaustive", action="store_true", help="evaluate the whole grid")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("spectral", help="mixing diagnostics of a graph")
    p.add_argument("--graph", choices=harness.GRAPHS, default="ring")
    p.add_argument("--edges", help="edge-list file (one 'i j' pair per line) instead of --graph")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--rule", default="uniform")
    p.add_argument("--require-psd", action="store_true")
    p.set_defaults(func=cmd_spectral)

    p = sub.add_parser("verify", help="run the verification suite")
    p.add_argument("--scope", choices=harness.SCOPES, default="all")
    p.add_argument("--alpha", type=float, default=None, help="stepsize for the inequality scope")
    p.add_argument("--weights", help="CSV weight matrix to certify instead of the defaults")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fixed-point", help="solve the primal-dual fixed point")
    _run_flags(p, stepsize=False)
    p.add_argument("--alpha", dest="alpha_fp", type=float, default=0.01)
    p.set_defaults(func=cmd_fixed_point)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "spectral" and args.n is None and not args.edges:
        args.n = 30
    try:
        return args.func(args)
    except GTLabError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
