"""Command-line entry point: ``nlobs <subcommand> [options]``.

Exit status is 0 on success, 1 on usage or validation errors and 2 when an
integration diverges (the partial run is still written).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .constraints import penalty_threshold, pi_value, rowat_constraint, rowat_margins
from .excitation import RunContext, default_probe_grid, estimate_period, regressor_along_run, upe_check, wnpe_probe
from .gainbounds import GainBoundsProblem, solve, synth_verify
from .harness import (
    RunDiverged,
    compare_constraints,
    emit_outputs,
    fig1_compare,
    resolve_output_dir,
    run_closed_loop,
    simulate_plant,
    summary_text,
)
from .numkit import Trajectory, format_float
from .plant import OutOfChart, RowatParams, bifurcation_csv, bifurcation_scan, equilibria, state_to_canonical
from .scenario import ScenarioError, load_scenario, shipped_scenario


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _vec(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _range(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        n = int(n)
    except ValueError:
        raise argparse.ArgumentTypeError("expected lo:hi:count") from None
    if n < 2:
        raise argparse.ArgumentTypeError("count must be >= 2")
    return np.linspace(float(lo), float(hi), n)


def _scenario(args):
    sc = load_scenario(args.scenario) if args.scenario else shipped_scenario("rowat_s5")
    if getattr(args, "paper_literal_constraints", False):
        sc = sc.with_changes("constraints", u1_literal=True)
    return sc


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    p = sc.plant.params
    T = args.T if args.T is not None else sc.integration.T_final
    tr = simulate_plant(p, (sc.plant.V0, sc.plant.q0), sc.integration.h, T, sc.integration.record_every)
    x = np.array([state_to_canonical(p, r) for r in tr.data])
    out = Trajectory(tr.t0, tr.h, np.hstack([tr.data, x]), ("V", "q", "x1", "x2"))
    path = _write(resolve_output_dir(sc, args.out) / f"{sc.stem()}.plant.csv", out.to_csv())
    print(path)
    return 0


def cmd_observe(args) -> int:
    sc = _scenario(args)
    if args.T_final is not None:
        sc = sc.with_changes("integration", T_final=args.T_final)
    out_dir = resolve_output_dir(sc, args.out)
    if args.compare:
        r1, r2, rep = compare_constraints(sc)
        for res in (r1, r2):
            for p in emit_outputs(res, out_dir):
                print(p)
        cmp_path = _write(out_dir / f"{sc.stem()}.compare", summary_text(rep))
        print(cmp_path)
        sys.stdout.write(summary_text(r1.summary))
        return 0
    try:
        res = run_closed_loop(sc)
    except RunDiverged as exc:
        if exc.partial is not None:
            _write(out_dir / f"{sc.stem()}.partial.csv", exc.partial.to_csv())
        print(f"diverged: {exc}", file=sys.stderr)
        return 2
    for p in emit_outputs(res, out_dir):
        print(p)
    sys.stdout.write(summary_text(res.summary))
    return 0


def _params_from_args(args) -> RowatParams:
    if args.scenario:
        base = load_scenario(args.scenario).plant
        vals = dict(tau_m=base.tau_m, tau_s=base.tau_s, sigma_s=base.sigma_s, sigma_f=base.sigma_f, A_f=base.A_f)
    else:
        vals = dict(tau_m=0.1666, tau_s=5.0, sigma_s=0.8, sigma_f=2.0, A_f=1.0)
    for k in vals:
        v = getattr(args, k, None)
        if v is not None:
            vals[k] = v
    return RowatParams(**vals).require_valid()


def cmd_equilibria(args) -> int:
    p = _params_from_args(args)
    lines = ["V,q,kind,eig_1,eig_2"]
    for e in equilibria(p):
        eig = [format_float(complex(z).real) if complex(z).imag == 0 else str(complex(z)) for z in e.eigenvalues]
        lines.append(",".join([format_float(e.V), format_float(e.q), e.kind] + eig))
    text = "\n".join(lines) + "\n"
    if args.out:
        print(_write(Path(args.out) / "equilibria.csv", text))
    else:
        sys.stdout.write(text)
    return 0


def cmd_bifurcation(args) -> int:
    p = _params_from_args(args)
    rows = bifurcation_scan(args.sigma_grid, p.sigma_f, p.A_f, p.tau_m, p.tau_s)
    text = bifurcation_csv(rows)
    if args.out:
        print(_write(Path(args.out) / "bifurcation.csv", text))
    else:
        sys.stdout.write(text)
    return 0


def _context(sc, run_length: float) -> RunContext:
    truth = sc.truth()
    h = sc.integration.h
    N = int(round(run_length / h))
    return RunContext(truth=truth, x0=np.array([sc.plant.V0, sc.plant.q0]), B=np.array(sc.observer.B), h=h, N=N)


def cmd_check_pe(args) -> int:
    sc = _scenario(args)
    ctx = _context(sc, args.run_length)
    grid = args.lambda_grid if args.lambda_grid is not None else np.linspace(*sc.plant.lambda_bounds[0], 5)
    if args.T is None:
        y = simulate_plant(sc.plant.params, ctx.x0, ctx.h, args.run_length).column("V")
        T = estimate_period(y, ctx.dt)
    else:
        T = args.T
    rep = upe_check(lambda lam: regressor_along_run(ctx, lam), grid[:, None], T, ctx.dt, stride=args.stride, threshold=args.threshold)
    path = _write(resolve_output_dir(sc, args.out) / f"{sc.stem()}.upe.csv", rep.to_csv())
    print(path)
    print(rep.summary_line())
    return 0


def cmd_probe_wnpe(args) -> int:
    sc = _scenario(args)
    ctx = _context(sc, args.run_length)
    probes = default_probe_grid(ctx.truth)
    rep = wnpe_probe(ctx, probes, args.L, skip=args.skip)
    path = _write(resolve_output_dir(sc, args.out) / f"{sc.stem()}.wnpe.csv", rep.to_csv())
    print(path)
    print(rep.summary_line())
    return 0


def cmd_tune_gains(args) -> int:
    p = GainBoundsProblem(
        beta0=args.beta0,
        a=args.a,
        c=args.c,
        Delta=args.Delta,
        M=args.M,
        Delta_d=args.Delta_d,
        kappa=args.kappa,
        d=args.d,
        x0=args.x0,
        h0=args.h0,
    )
    r = solve(p)
    print(f"eps_min = {r.eps_min:.5f}")
    print(f"D_gamma_max = {r.dgamma_max:.5f}")
    print(f"tau_star = {r.tau_star:.5f}")
    if args.verify:
        D = args.D_gamma if args.D_gamma is not None else r.dgamma_max
        eps = args.eps if args.eps is not None else r.eps_min
        rep = synth_verify(p, D, eps, horizon=args.horizon, step=args.step)
        for line in rep.summary_lines():
            print(line)
        if args.out:
            print(_write(Path(args.out) / "crossings.csv", rep.crossing_csv()))
    return 0


def cmd_fig1_compare(args) -> int:
    r = fig1_compare(T=args.T, h=args.h)
    lines = [f"T = {format_float(r['T'])}", f"h = {format_float(r['h'])}"]
    for i, d in enumerate(r["ics"], 1):
        for k, v in d.items():
            lines.append(f"ic{i}.{k} = {format_float(v)}")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        _write(out / "fig1.summary", text)
        for i, (ta, tc) in enumerate(r["traj"], 1):
            data = np.column_stack([ta.data, tc.data])
            tr = Trajectory(ta.t0, ta.h, data, ("V_A", "q_A", "V_C", "q_C"))
            print(_write(out / f"fig1_ic{i}.csv", tr.to_csv()))
    return 0


def cmd_constraint_eval(args) -> int:
    if args.scenario:
        sc = _scenario(args)
        c = sc.truth_canonical()
        theta, lam = list(c.theta), c.lam
        eps_pi = sc.constraints.eps_pi
        literal = sc.constraints.u1_literal
    else:
        from .plant import to_canonical

        c = to_canonical(RowatParams(0.1666, 5.0, 0.8, 2.0, 1.0))
        theta, lam = list(c.theta), c.lam
        eps_pi = 0.0022
        literal = args.paper_literal_constraints
    if args.theta is not None:
        theta = args.theta
        if len(theta) != 4:
            raise ValueError("--theta needs four values")
    if args.lam is not None:
        lam = args.lam
    if args.eps_pi is not None:
        eps_pi = args.eps_pi
    spec = rowat_constraint(eps_pi=eps_pi, u1_literal=literal)
    print(f"theta = {', '.join(format_float(v) for v in theta)}")
    print(f"lambda = {format_float(lam)}")
    print(f"eps_pi = {format_float(eps_pi)}")
    print(f"u_star = {format_float(penalty_threshold(eps_pi))}")
    print(f"u1_literal = {'true' if literal else 'false'}")
    try:
        us = rowat_margins(theta, lam, literal)
    except OutOfChart as exc:
        print(f"out_of_chart = {exc}")
        print(f"pi = {format_float(pi_value(spec, theta, lam))}")
        return 0
    f = spec.penalties(theta, lam)
    for i, (u, fi) in enumerate(zip(us, f), 1):
        print(f"u{i} = {format_float(u)}")
        print(f"f{i} = {format_float(fi)}")
    pv = pi_value(spec, theta, lam)
    print(f"pi = {format_float(pv)}")
    if literal and pv > 0:
        print("note = literal first constraint is violated at these parameters")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nlobs", description="Adaptive observer experiments for the Rowat-Selverston model.")
    ap.add_argument("--version", action="version", version=f"nlobs {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    def common(p, scenario=True, out=True):
        if scenario:
            p.add_argument("--scenario", help="scenario file or shipped name (default rowat_s5)")
        if out:
            p.add_argument("--out", help="output directory (else $NLOBS_OUT, else the scenario's)")

    def phys(p, skip=()):
        for k in ("tau_m", "tau_s", "sigma_s", "sigma_f", "A_f"):
            if k in skip:
                continue
            p.add_argument(f"--{k.replace('_', '-')}", dest=k, type=float)

    p = sub.add_parser("simulate", help="plant only")
    common(p)
    p.add_argument("--T", type=float, help="horizon (default integration.T_final)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("observe", help="closed-loop estimation run")
    common(p)
    p.add_argument("--compare", action="store_true", help="also run without constraints and compare")
    p.add_argument("--T-final", dest="T_final", type=float)
    p.add_argument("--paper-literal-constraints", action="store_true")
    p.set_defaults(func=cmd_observe)

    p = sub.add_parser("equilibria", help="equilibria and their classification")
    common(p)
    phys(p)
    p.set_defaults(func=cmd_equilibria)

    p = sub.add_parser("bifurcation", help="equilibria over a sigma_s grid")
    common(p)
    phys(p, skip=("sigma_s",))
    p.add_argument("--sigma-s", dest="sigma_grid", type=_range, default=_range("0.8:1.2:81"), help="lo:hi:count")
    p.set_defaults(func=cmd_bifurcation)

    p = sub.add_parser("check-pe", help="lambda-uniform PE diagnostic")
    common(p)
    p.add_argument("--T", type=float, help="window length (default: measured oscillation period)")
    p.add_argument("--lambda-grid", type=_range, help="lo:hi:count")
    p.add_argument("--run-length", type=float, default=200.0)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.0)
    p.set_defaults(func=cmd_check_pe)

    p = sub.add_parser("probe-wnpe", help="weak nonlinear PE diagnostic")
    common(p)
    p.add_argument("--L", type=float, default=15.0)
    p.add_argument("--run-length", type=float, default=100.0)
    p.add_argument("--skip", type=float, default=20.0)
    p.set_defaults(func=cmd_probe_wnpe)

    p = sub.add_parser("tune-gains", help="dead-zone floor, gain ceiling and tau*")
    common(p, scenario=False)
    for name in ("beta0", "a", "c", "M", "Delta", "x0", "h0"):
        p.add_argument(f"--{name}", type=float, required=True)
    p.add_argument("--Delta-d", dest="Delta_d", type=float, default=0.0)
    p.add_argument("--kappa", type=float, default=2.0)
    p.add_argument("--d", type=float, default=0.5)
    p.add_argument("--verify", action="store_true", help="run the synthetic interconnection")
    p.add_argument("--D-gamma", dest="D_gamma", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--horizon", type=float, default=200.0)
    p.add_argument("--step", type=float, default=1e-2)
    p.set_defaults(func=cmd_tune_gains)

    p = sub.add_parser("fig1-compare", help="two parameter sets with nearly identical traces")
    common(p, scenario=False)
    p.add_argument("--T", type=float, default=30.0)
    p.add_argument("--h", type=float, default=1e-3)
    p.set_defaults(func=cmd_fig1_compare)

    p = sub.add_parser("constraint-eval", help="constraint margins and penalty")
    common(p, out=False)
    p.add_argument("--theta", type=_vec)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--eps-pi", dest="eps_pi", type=float)
    p.add_argument("--paper-literal-constraints", action="store_true")
    p.set_defaults(func=cmd_constraint_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if not getattr(args, "command", None):
            ap.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
