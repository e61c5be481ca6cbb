"""Command-line front end: ``radpulse {eigen,curve,signatures,fit,validate}``.

Every command writes CSV (UTF-8, LF) to ``--out`` or to stdout and prints a
one-line ``key=value`` summary (stdout when ``--out`` is given, else stderr).
Exit status: 0 on success, 1 when a validation runs but fails, 2 on bad
input.  ``--config FILE`` reads ``key=value`` lines that override the
built-in defaults (command-line flags still win).
"""

from __future__ import annotations

import argparse
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .eigensolver import DEFAULT_TOL, PE_MAX, PE_MIN, build_basis, check_peclet
from .errors import RadPulseError
from .kinetics import curve_moments, estimate_peclet, extract_rate_constant
from .oracles import FDGrid, MCConfig, Scheme, validate_fd, validate_mc, worker_count
from .series import (
    Curve,
    ModelParams,
    Truncation,
    concentration_curve,
    exit_flow_curve,
    holdup_curve,
    normalized_exit_flow_curve,
    time_grid,
)
from .signatures import PeakMethod, compute_signatures

SIGNATURE_COLUMNS = ["Pe", "kappa_d", "M0", "M1", "M2", "tau_max", "J_max",
                     "peak_number", "t_mean", "t_moments"]


class UsageError(Exception):
    pass


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _summary(command: str, status: str, **fields) -> str:
    parts = [f"command={command}", f"status={status}"]
    parts += [f"{k}={_fmt(v)}" for k, v in fields.items()]
    return " ".join(parts)


def _emit(text: str, out: str | None):
    if out and out != "-":
        Path(out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _print_summary(line: str, out: str | None):
    stream = sys.stdout if out and out != "-" else sys.stderr
    print(line, file=stream)


def _parse_grid(spec: str) -> np.ndarray:
    """``start:stop:count`` or a comma-separated list."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {spec!r} must look like start:stop:count")
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        if n < 1:
            raise UsageError("grid count must be >= 1")
        return np.linspace(lo, hi, n)
    return np.array([float(v) for v in spec.split(",") if v.strip()])


def read_config(path: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


# -- shared option groups ----------------------------------------------------

def _add_model_options(p: argparse.ArgumentParser, x0_default: float):
    g = p.add_argument_group("model (dimensionless groups, the default)")
    g.add_argument("--pe", type=float, default=None, help="Peclet number vL/D (default 0)")
    g.add_argument("--kappa-d", type=float, default=None, help="k t_d (default 0)")
    g.add_argument("--td", type=float, default=None, help="diffusion time L^2/D (default 1)")
    d = p.add_argument_group("model (dimensional; --D or --v switches to this mode)")
    d.add_argument("--D", type=float, default=None, dest="D", help="diffusivity (default 1)")
    d.add_argument("--v", type=float, default=None, dest="v", help="velocity (default 0)")
    d.add_argument("--L", type=float, default=None, dest="L", help="reactor length (default 1)")
    d.add_argument("--k", type=float, default=None, dest="k", help="rate constant, 1/time")
    d.add_argument("--a", type=float, default=1.0, help="pulse amount")
    d.add_argument("--x0", type=float, default=None,
                   help=f"injection point (default {x0_default:g} L)")
    p.set_defaults(x0_default=x0_default)


def _model(args) -> ModelParams:
    """Resolve the model flags.

    ``--k`` and ``--L`` combine with either framing; giving both ``--k`` and
    ``--kappa-d``, or mixing ``--pe``/``--td`` with ``--D``/``--v``, is an error.
    """
    if args.k is not None and args.kappa_d is not None:
        raise UsageError("give the rate as either --k or --kappa-d, not both")
    L = 1.0 if args.L is None else args.L
    x0 = args.x0_default * L if args.x0 is None else args.x0
    if args.D is not None or args.v is not None:
        if args.pe is not None or args.td is not None:
            raise UsageError("--pe/--td cannot be combined with the dimensional --D/--v flags")
        D = 1.0 if args.D is None else args.D
        v = 0.0 if args.v is None else args.v
        if args.k is not None:
            k = args.k
        else:
            k = (args.kappa_d or 0.0) * D / (L * L)
        return ModelParams(D=D, v=v, k=k, L=L, a=args.a, x0=x0)
    t_d = 1.0 if args.td is None else args.td
    if args.k is not None:
        kappa_d = args.k * t_d
    else:
        kappa_d = 0.0 if args.kappa_d is None else args.kappa_d
    pe = 0.0 if args.pe is None else args.pe
    return ModelParams.from_dimensionless(pe, kappa_d, t_d, L, args.a, x0)


# -- commands ----------------------------------------------------------------

def cmd_eigen(args) -> int:
    pe = check_peclet(args.pe)
    basis = build_basis(pe, args.n, args.tol)
    buf = io.StringIO()
    buf.write("n,mu_n,w_n\n")
    for i, (mu, w) in enumerate(zip(basis.mu, basis.norm_weight), 1):
        buf.write(f"{i},{mu:.17g},{w:.17g}\n")
    _emit(buf.getvalue(), args.out)
    _print_summary(_summary("eigen", "ok", pe=pe, n=args.n, mu_1=float(basis.mu[0])), args.out)
    return 0


def cmd_curve(args) -> int:
    params = _model(args)
    trunc = Truncation(max_terms=args.terms) if args.terms else Truncation()
    t = time_grid(params.t_d, args.npoints, args.tmin, args.tmax, args.grid)
    kind = args.kind
    if kind == "exit":
        curve = exit_flow_curve(params, t, trunc=trunc)
    elif kind == "normalized":
        curve = normalized_exit_flow_curve(params, t, trunc=trunc)
    elif kind == "holdup":
        curve = holdup_curve(params, t, trunc=trunc)
    else:
        x = params.L * 0.5 if args.x is None else args.x
        curve = concentration_curve(params, x, t, trunc=trunc)
    _emit(curve.to_csv(), args.out)
    i = int(np.argmax(curve.y))
    _print_summary(_summary("curve", "ok", kind=curve.kind.value, pe=params.pe,
                            kappa_d=params.kappa_d, points=len(curve),
                            t_peak=float(curve.t[i]), y_peak=float(curve.y[i])), args.out)
    return 0


def cmd_signatures(args) -> int:
    pes = _parse_grid(args.pe)
    kappas = _parse_grid(args.kappa_d)
    method = PeakMethod.TWO_TERM if args.method == "two-term" else PeakMethod.FULL_SERIES
    buf = io.StringIO()
    buf.write(",".join(SIGNATURE_COLUMNS) + "\n")
    rows = 0
    for pe in pes:
        for kd in kappas:
            params = ModelParams.from_dimensionless(float(pe), float(kd), args.td, 1.0, args.a, 0.0)
            sig = compute_signatures(params, m_max=2, method=method)
            values = [params.pe, params.kappa_d, *sig.moments, sig.peak.tau_max,
                      sig.peak.j_max, sig.peak.peak_number, sig.t_mean, sig.t_moments]
            buf.write(",".join(_fmt(float(v)) for v in values) + "\n")
            rows += 1
    _emit(buf.getvalue(), args.out)
    _print_summary(_summary("signatures", "ok", rows=rows, method=method.value), args.out)
    return 0


def cmd_fit(args) -> int:
    if not args.curve_0:
        raise UsageError("fit needs --curve-0 (the k = 0 standard transport curve)")
    base = Curve.from_csv(Path(args.curve_0))
    t_d = args.td if args.td is not None else (base.params.t_d if base.params else None)
    a = args.a if args.a is not None else (base.params.a if base.params else None)
    report: dict = {}
    if args.curve_k:
        reactive = Curve.from_csv(Path(args.curve_k))
        window = tuple(args.window) if args.window else None
        if window is None and t_d is not None:
            window = (0.05 * t_d, 2.0 * t_d)
        est = extract_rate_constant(reactive, base, window, weighted=not args.unweighted)
        report.update(est.report())
    if args.peclet:
        if t_d is None or a is None:
            raise UsageError("Peclet estimation needs t_d and a (from the curve header or --td/--a)")
        m0, m1 = curve_moments(base)
        pe_est = estimate_peclet(m0, m1, t_d, a)
        report.update({"M0": m0, "M1": m1, **pe_est.report()})
    if not report:
        raise UsageError("nothing to do: give --curve-k and/or --peclet")
    text = "".join(f"{k}={_fmt(v)}\n" for k, v in report.items())
    _emit(text, args.out)
    _print_summary(_summary("fit", "ok", **{k: v for k, v in report.items()
                                             if k in ("k_hat", "stderr", "pe_hat")}), args.out)
    return 0


def cmd_validate(args) -> int:
    params = _model(args)
    if args.oracle == "fd":
        if params.x0 != 0:
            raise UsageError("the finite-difference oracle injects at the inlet; use --x0 0")
        nx = args.nx or max(2000, math.ceil(2.0 / args.eps))
        grid = FDGrid(nx=nx, dt=args.dt, t_end=args.tend, epsilon=args.eps,
                      scheme=Scheme(args.scheme), sample_every=args.sample_every)
        report = validate_fd(params, grid, n_terms=args.terms, tol=args.tol,
                             estimate_error=not args.no_error_estimate)
    else:
        cfg = MCConfig(n_paths=args.paths, dt=args.mc_dt, seed=args.seed)
        report = validate_mc(params.with_rate(0.0), cfg, workers=worker_count())
    _emit(report.to_csv(), args.out)
    status = "pass" if report.passed else "fail"
    _print_summary(_summary("validate", status, oracle=args.oracle,
                            error=report.sup_norm_error, tolerance=report.tolerance), args.out)
    return 0 if report.passed else 1


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radpulse", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"radpulse {__version__}")
    parser.add_argument("--config", help="key=value file overriding defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eigen", help="eigenvalue table (n, mu_n, w_n)")
    p.add_argument("--pe", type=float, default=0.0)
    p.add_argument("--n", type=int, default=14)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("curve", help="exit-flow, concentration or holdup curve")
    _add_model_options(p, x0_default=0.01)
    p.add_argument("--kind", choices=["exit", "normalized", "concentration", "holdup"], default="exit")
    p.add_argument("--x", type=float, default=None, help="position for --kind concentration")
    p.add_argument("--terms", type=int, default=None, help="cap on series terms")
    p.add_argument("--npoints", type=int, default=400)
    p.add_argument("--tmin", type=float, default=1e-3, help="first sample, units of t_d")
    p.add_argument("--tmax", type=float, default=2.0, help="last sample, units of t_d")
    p.add_argument("--grid", choices=["uniform", "log"], default="uniform")
    p.add_argument("--out")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("signatures", help="moment / peak signature table over a (Pe, kappa_d) grid")
    p.add_argument("--pe", default="0:5:51", help="start:stop:count or comma list")
    p.add_argument("--kappa-d", default="0:5:51", help="start:stop:count or comma list")
    p.add_argument("--td", type=float, default=1.0)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--method", choices=["full", "two-term"], default="full")
    p.add_argument("--out")
    p.set_defaults(func=cmd_signatures)

    p = sub.add_parser("fit", help="rate constant from a curve ratio and/or Pe from moments")
    p.add_argument("--curve-k", help="exit-flow CSV with reaction")
    p.add_argument("--curve-0", help="standard transport curve CSV (k = 0)")
    p.add_argument("--window", type=float, nargs=2, metavar=("T_LO", "T_HI"))
    p.add_argument("--unweighted", action="store_true")
    p.add_argument("--peclet", action="store_true", help="estimate Pe from the moments of --curve-0")
    p.add_argument("--td", type=float, default=None)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("validate", help="compare the analytic engine with an FD or MC oracle")
    p.add_argument("--oracle", choices=["fd", "mc"], default="fd")
    _add_model_options(p, x0_default=0.0)
    p.add_argument("--eps", type=float, default=0.1, help="square-pulse width (units of L)")
    p.add_argument("--nx", type=int, default=None)
    p.add_argument("--dt", type=float, default=1e-4, help="FD time step, units of t_d")
    p.add_argument("--tend", type=float, default=2.0)
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.CRANK_NICOLSON.value)
    p.add_argument("--sample-every", type=int, default=10)
    p.add_argument("--terms", type=int, default=100)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--no-error-estimate", action="store_true")
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--mc-dt", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    for action in parser._subparsers._group_actions:  # noqa: SLF001 - argparse has no public hook
        for sub in action.choices.values():
            dests = {a.dest for a in sub._actions}
            sub.set_defaults(**{k: v for k, v in values.items() if k in dests})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    except (RadPulseError, UsageError, OSError) as exc:
        print(f"radpulse: error: {exc}", file=sys.stderr)
        print(_summary(argv[0] if argv else "none", "error",
                       error=type(exc).__name__), file=sys.stdout)
        return 2


if __name__ == "__main__":
    sys.exit(main())
