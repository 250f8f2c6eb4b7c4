"""Command-line front end: ``sccdma <command> [options]``.

Exit codes: 0 success, 1 usage or domain error, 2 I/O error,
3 a requested fixed-point solve did not converge.
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import io
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from .continuum import (
    CDMAPotential,
    ContinuumConfig,
    QuarticPotential,
    continuum_bp_threshold,
    run_to_stationary,
    snapshots_csv,
    stable_step,
)
from .coupling import CouplingSpec, db_to_sigma2, sum_rate
from .de_core import DEFAULT_MAX_ITER, DEFAULT_TOL, de_solve
from .scalar_channel import mse_qpsk
from .thresholds import (
    ThresholdError,
    ThresholdQuery,
    ThresholdRecord,
    UniqueRegimeError,
    bp_threshold,
    diffusion_coefficient,
    io_threshold_coupled,
    io_threshold_uncoupled,
    potential,
    potential_threshold,
)

log = logging.getLogger("sccdma")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NOCONV = 0, 1, 2, 3

UNIQUE = "unique regime"


class UsageError(Exception):
    pass


class NonConvergence(Exception):
    pass


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return "" if v is None else str(v)


def render(rows, columns, fmt):
    if fmt == "json":
        return json.dumps([{c: r.get(c) for c in columns} for r in rows], indent=1,
                          sort_keys=False) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def emit(text, out):
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    d = os.path.dirname(os.path.abspath(out))
    os.makedirs(d, exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write(text)


# --------------------------------------------------------------------------
# commands


def _positive_range(args):
    if args.z is not None:
        zs = list(args.z)
    else:
        if args.n < 1 or not (0 < args.z_min <= args.z_max):
            raise UsageError("need 0 < z-min <= z-max and n >= 1")
        zs = list(np.logspace(math.log10(args.z_min), math.log10(args.z_max), args.n))
    if not zs:
        raise UsageError("empty z range")
    if any(not z > 0 for z in zs):
        raise UsageError("noise levels must be positive")
    return zs


def cmd_xi(args):
    zs = _positive_range(args)
    xi = mse_qpsk(np.array(zs, dtype=float))
    rows = [{"z": float(z), "xi": float(x)} for z, x in zip(zs, xi)]
    emit(render(rows, ["z", "xi"], args.format), args.out)


def _spec(args, beta):
    return CouplingSpec(args.kind, args.L, args.W if args.kind == "circular" else 0,
                        beta, args.beta_init)


def cmd_de(args):
    if not args.beta:
        raise UsageError("at least one --beta is required")
    sigma2 = db_to_sigma2(args.snr_db)
    inits = ["worst", "genie"] if args.init == "both" else [args.init]
    failed = []
    outputs = []
    for beta in args.beta:
        system = _spec(args, beta).build(sigma2)
        for init in inits:
            sol = de_solve(system, init, tol=args.tol, max_iter=args.max_iter)
            if not sol.converged:
                failed.append((beta, init))
            outputs.append((beta, init, sol))
    if args.out and os.path.splitext(args.out)[1] == "":
        for beta, init, sol in outputs:
            stem = os.path.join(args.out, f"profile_beta{beta:.6f}_{init}")
            emit(sol.profile_csv(), stem + ".csv")
            meta = sol.to_dict()
            meta.update(beta=beta, snr_db=args.snr_db, kind=args.kind, L=args.L,
                        W=args.W, beta_init=args.beta_init)
            emit(json.dumps(meta, indent=1, sort_keys=True) + "\n", stem + ".json")
    else:
        rows = []
        for beta, init, sol in outputs:
            for l, (xi, sir) in enumerate(zip(sol.mse, sol.sir)):
                rows.append({"beta": float(beta), "init": init, "l": l, "xi_l": float(xi),
                             "sir_l": float(sir)})
        if args.format == "json":
            docs = []
            for beta, init, sol in outputs:
                d = sol.to_dict()
                d["beta"] = float(beta)
                docs.append(d)
            emit(json.dumps(docs, indent=1, sort_keys=True) + "\n", args.out)
        else:
            emit(render(rows, ["beta", "init", "l", "xi_l", "sir_l"], "csv"), args.out)
    if failed:
        raise NonConvergence(f"no convergence for (beta, init) in {failed}")


def _threshold_cell(kind, snr_db, family, L, W, beta_init, tol, bracket):
    """One threshold computation; returns a value or the string UNIQUE."""
    sigma2 = db_to_sigma2(snr_db)
    spec = CouplingSpec(family, L, W, 1.0, beta_init)
    try:
        if kind == "bp":
            return bp_threshold(ThresholdQuery(spec, sigma2, tuple(bracket), tol))
        if kind == "io":
            return io_threshold_uncoupled(sigma2, tuple(bracket), tol)
        if kind == "io-coupled":
            return io_threshold_coupled(spec, sigma2, tuple(bracket), tol)
        if kind == "potential":
            return potential_threshold(sigma2, tuple(bracket), tol)
    except UniqueRegimeError:
        return UNIQUE
    raise UsageError(f"unknown threshold kind {kind!r}")


def _run_cells(cells, workers):
    if workers <= 1 or len(cells) <= 1:
        return [_threshold_cell(*c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(_threshold_cell, *c) for c in cells]
        return [f.result() for f in futures]


def _record(kind, snr, family, L, W, beta_init, value, tol):
    return ThresholdRecord(float(snr), kind, family, int(L), int(W), float(beta_init),
                           value, float(tol))


def _record_rows(records):
    rows = []
    for r in records:
        d = r.to_dict()
        rows.append(d)
    return rows


def cmd_threshold(args):
    family = "uncoupled" if args.threshold in ("io", "potential") else args.kind
    W = args.W if family == "circular" else 0
    L = args.L if family == "circular" else 1
    cells = [(args.threshold, s, family, L, W, args.beta_init, args.tol, args.bracket)
             for s in args.snr_db]
    values = _run_cells(cells, args.workers)
    recs = [_record(args.threshold, s, family, L, W, args.beta_init, v, args.tol)
            for s, v in zip(args.snr_db, values)]
    if args.format == "json":
        emit(json.dumps([r.to_dict() for r in recs], indent=1) + "\n", args.out)
    else:
        emit(render(_record_rows(recs), list(ThresholdRecord.FIELDS), "csv"), args.out)


def cmd_tables(args):
    if not (args.snr_db and args.L and args.W):
        raise UsageError("snr, L and W lists must be non-empty")
    tol = args.tol
    bracket = args.bracket
    t1 = []
    if args.table in ("1", "both"):
        snr = args.snr_db[0] if args.table1_snr is None else args.table1_snr
        for L in args.L:
            for W in args.W:
                if W >= L:
                    raise UsageError(f"W={W} must be below L={L}")
                t1.append(("bp", snr, "circular", L, W, args.beta_init, tol, bracket))
    t2 = []
    if args.table in ("2", "both"):
        for snr in args.snr_db:
            t2 += [
                ("bp", snr, "uncoupled", 1, 0, 0.0, tol, bracket),
                ("bp", snr, "circular", args.t2_L, args.t2_W, args.beta_init, tol, bracket),
                ("potential", snr, "uncoupled", 1, 0, 0.0, tol, bracket),
                ("io", snr, "uncoupled", 1, 0, 0.0, tol, bracket),
                ("io-coupled", snr, "circular", args.t2_L, args.t2_W, args.beta_init, tol,
                 bracket),
            ]
    values = _run_cells(t1 + t2, args.workers)
    v1, v2 = values[:len(t1)], values[len(t1):]
    records = []
    for c, v in zip(t1, v1):
        records.append(_record("table1:bp", c[1], c[2], c[3], c[4], c[5], v, tol))
    labels = ["beta_bp", "beta_bp_sc_numeric", "beta_bp_sc_potential", "beta_io",
              "beta_io_sc_upper"]
    for i, (c, v) in enumerate(zip(t2, v2)):
        records.append(_record("table2:" + labels[i % 5], c[1], c[2], c[3], c[4], c[5],
                               v, tol))
    if args.format == "json":
        emit(json.dumps([r.to_dict() for r in records], indent=1) + "\n", args.out)
    else:
        emit(render(_record_rows(records), list(ThresholdRecord.FIELDS), "csv"), args.out)
    if args.pretty:
        sys.stderr.write(_pretty_tables(args, v1, v2))


def _pretty_tables(args, v1, v2):
    cell = lambda v: f"{v:.4f}" if isinstance(v, float) else str(v)
    lines = []
    if v1:
        lines.append("BP threshold, circular coupling (rows L, columns W)")
        lines.append("L\\W " + " ".join(f"{w:>14d}" for w in args.W))
        it = iter(v1)
        for L in args.L:
            lines.append(f"{L:<4d}" + " ".join(f"{cell(next(it)):>14s}" for _ in args.W))
    if v2:
        lines.append("Threshold comparison (bp, bp_sc numeric, bp_sc potential, io, io_sc bound)")
        for i, snr in enumerate(args.snr_db):
            row = v2[5 * i:5 * i + 5]
            lines.append(f"{snr:>5g} dB " + " ".join(f"{cell(v):>14s}" for v in row))
    return "\n".join(lines) + "\n"


def cmd_sumrate(args):
    if not args.beta:
        raise UsageError("at least one --beta is required")
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for beta in args.beta:
            rows.append({"beta": float(beta), "beta_init": float(args.beta_init),
                         "W": args.W, "L": args.L,
                         "rate": sum_rate(beta, args.beta_init, args.W, args.L)})
    emit(render(rows, ["beta", "beta_init", "W", "L", "rate"], args.format), args.out)


def cmd_potential(args):
    sigma2 = db_to_sigma2(args.snr_db)
    if args.n < 1:
        raise UsageError("need n >= 1")
    grid = np.linspace(args.y_max / args.n, args.y_max, args.n)
    if args.y_max >= 1.0:
        grid = grid[grid < 1.0]
    prof = potential(args.beta, sigma2, grid)
    mins = prof.minima
    equal = len(mins) >= 2 and abs(mins[0][1] - mins[-1][1]) < args.equal_tol
    if args.format == "json":
        doc = {
            "beta": args.beta, "snr_db": args.snr_db,
            "y": [float(v) for v in prof.y], "U": [float(v) for v in prof.U],
            "stationary": [{"y": y, "U": u, "kind": k} for y, u, k in prof.stationary],
            "equal_depth": bool(equal),
        }
        emit(json.dumps(doc, indent=1) + "\n", args.out)
        return
    rows = [{"y": float(y), "U": float(u), "kind": ""} for y, u in zip(prof.y, prof.U)]
    for y, u, k in prof.stationary:
        tag = k + ("*" if equal and k == "min" else "")
        rows.append({"y": float(y), "U": float(u), "kind": tag})
    rows.sort(key=lambda r: r["y"])
    emit(render(rows, ["y", "U", "kind"], "csv"), args.out)


def _continuum_potential(args):
    if args.potential == "quartic":
        return QuarticPotential(), "high"
    return CDMAPotential.from_db(args.snr_db), "low"


def cmd_continuum(args):
    pot, boundary = _continuum_potential(args)
    if args.D is None:
        d_of = lambda beta: diffusion_coefficient(beta, args.W, args.L)
    else:
        if not args.D > 0:
            raise UsageError("D must be positive")
        d_of = lambda beta: args.D
    if args.threshold:
        bracket = tuple(args.bracket) if args.bracket else None
        est = continuum_bp_threshold(pot, d_of, bracket=bracket, tol=args.tol, M=args.M,
                                     boundary=boundary)
        rows = [{"potential": args.potential, "M": args.M, "threshold": est}]
        emit(render(rows, ["potential", "M", "threshold"], args.format), args.out)
        return
    mins = pot.minima(args.beta)
    if len(mins) < 2:
        raise UsageError(f"potential has a single minimum at beta={args.beta}")
    good, bad = (mins[0], mins[-1]) if boundary == "low" else (mins[-1], mins[0])
    cfg = ContinuumConfig(pot, args.beta, d_of(args.beta), good, M=args.M,
                          max_iter=args.max_iter)
    if args.step is None:
        cfg = ContinuumConfig(pot, args.beta, cfg.D, good, M=args.M, max_iter=args.max_iter,
                              step=stable_step(cfg))
    else:
        cfg = ContinuumConfig(pot, args.beta, cfg.D, good, M=args.M, max_iter=args.max_iter,
                              step=args.step)
    res = run_to_stationary(cfg, np.full(args.M, bad), record_every=args.record_every)
    if not res.snapshots or res.snapshots[-1][0] != res.state.iteration:
        res.snapshots.append((res.state.iteration, res.state.y.copy()))
    emit(snapshots_csv(res, cfg.x), args.out)
    if not res.converged:
        raise NonConvergence("continuum iteration did not reach a stationary profile")


# --------------------------------------------------------------------------
# argument parsing


def _add_common(p):
    p.add_argument("--out", "-o", default=None, help="output file (default stdout)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")


def _add_system(p, snr=True):
    if snr:
        p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--kind", choices=["uncoupled", "circular"], default="circular")
    p.add_argument("--L", type=int, default=32)
    p.add_argument("--W", type=int, default=1)
    p.add_argument("--beta-init", type=float, default=0.0)


def build_parser():
    parser = argparse.ArgumentParser(prog="sccdma", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help="JSON file of option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("xi", help="tabulate the QPSK MSE function")
    _add_common(p)
    p.add_argument("--z", type=float, nargs="*", default=None)
    p.add_argument("--z-min", type=float, default=1e-3)
    p.add_argument("--z-max", type=float, default=1e3)
    p.add_argument("--n", type=int, default=61)
    p.set_defaults(func=cmd_xi)

    p = sub.add_parser("de", help="solve the coupled fixed-point equations")
    _add_common(p)
    _add_system(p)
    p.add_argument("--beta", type=float, nargs="+", default=[])
    p.add_argument("--init", choices=["worst", "genie", "both"], default="worst")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.set_defaults(func=cmd_de)

    p = sub.add_parser("threshold", help="compute one kind of threshold over SNRs")
    _add_common(p)
    _add_system(p, snr=False)
    p.add_argument("--threshold", choices=["bp", "io", "io-coupled", "potential"],
                   default="bp")
    p.add_argument("--snr-db", type=float, nargs="+", default=[10.0])
    p.add_argument("--tol", type=float, default=5e-5)
    p.add_argument("--bracket", type=float, nargs=2, default=[0.5, 4.0])
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("tables", help="threshold grids in the layout of the result tables")
    _add_common(p)
    p.add_argument("--table", choices=["1", "2", "both"], default="both")
    p.add_argument("--snr-db", type=float, nargs="+", default=[9.0, 10.0, 12.0, 14.0])
    p.add_argument("--table1-snr", type=float, default=10.0)
    p.add_argument("--L", type=int, nargs="+", default=[16, 32, 64])
    p.add_argument("--W", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--t2-L", type=int, default=32)
    p.add_argument("--t2-W", type=int, default=1)
    p.add_argument("--beta-init", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=5e-5)
    p.add_argument("--bracket", type=float, nargs=2, default=[0.5, 4.0])
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--pretty", action="store_true", help="also print tables to stderr")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("sumrate", help="sum rate of a circularly coupled system")
    _add_common(p)
    p.add_argument("--beta", type=float, nargs="+", default=[])
    p.add_argument("--beta-init", type=float, default=1.0)
    p.add_argument("--W", type=int, default=1)
    p.add_argument("--L", type=int, default=32)
    p.set_defaults(func=cmd_sumrate)

    p = sub.add_parser("potential", help="sample the effective potential")
    _add_common(p)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--beta", type=float, default=1.8121)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--y-max", type=float, default=0.6)
    p.add_argument("--equal-tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_potential)

    p = sub.add_parser("continuum", help="run the continuum model")
    _add_common(p)
    p.add_argument("--potential", choices=["quartic", "cdma"], default="quartic")
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--beta", type=float, default=-0.05)
    p.add_argument("--D", type=float, default=None,
                   help="diffusion coefficient (default: from --W/--L)")
    p.add_argument("--W", type=int, default=1)
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--M", type=int, default=257)
    p.add_argument("--step", type=float, default=None, help="default: a stable step")
    p.add_argument("--max-iter", type=int, default=1_000_000)
    p.add_argument("--record-every", type=int, default=0)
    p.add_argument("--threshold", action="store_true",
                   help="bisect for the continuum threshold instead of one run")
    p.add_argument("--bracket", type=float, nargs=2, default=None)
    p.add_argument("--tol", type=float, default=1e-3)
    p.set_defaults(func=cmd_continuum)
    return parser, sub


def _load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in doc.items()}


def parse_args(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cfg = _load_config(known.config)
        command = cfg.pop("command", None)
        if command and not any(a in sub.choices for a in argv):
            argv.append(command)
        for p in sub.choices.values():
            p.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None):
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"sccdma: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"sccdma: {exc}", file=sys.stderr)
        return EXIT_IO
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ThresholdError, ValueError) as exc:
        print(f"sccdma: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"sccdma: {exc}", file=sys.stderr)
        return EXIT_IO
    except NonConvergence as exc:
        print(f"sccdma: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
