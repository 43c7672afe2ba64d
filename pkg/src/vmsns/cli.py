"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 configuration error,
3 solver nonconvergence/divergence, 4 invariant or ledger-audit failure.
The VMSNS_THREADS environment variable caps the worker pool used by the
multi-level commands (study, spectra); the default is 1.
"""

import argparse
import math
import os
import sys
from dataclasses import replace

from . import io as io_mod
from .config import parse_config_file
from .errors import (ConfigurationError, InvariantViolation,
                     SolverDivergence, SolverNonconvergence, UsageError)

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; remap to the CLI's
    usage-error channel instead."""

    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="vmsns",
                     description="subgrid-stabilized incompressible flow "
                                 "solver and spectral diagnostics")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{run,study,spectra,check,init}")

    def add(name, help_text, needs_config=True, levels=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=needs_config,
                       help="path to a run configuration file")
        p.add_argument("--out", default=None,
                       help="output directory (overrides output.dir)")
        if levels:
            p.add_argument("--levels", type=int, default=3,
                           help="number of refinement levels (default 3)")
        return p

    add("run", "run one configured scenario and write its energy ledger")
    add("study", "run a refinement family and report rates and totals",
        levels=True)
    add("spectra", "evaluate the stability-lemma suite on a mesh family",
        levels=True)
    add("check", "audit a previously written energy ledger")
    add("init", "run the initialization projection only and emit the state")
    return parser


def _workers():
    raw = os.environ.get("VMSNS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(
            f"VMSNS_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"VMSNS_THREADS must be >= 1, got {n}")
    return n


def _load_config(args):
    cfg = parse_config_file(args.config)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _write_run_outputs(result, out_dir):
    io_mod.ensure_dir(out_dir)
    ledger_path = os.path.join(out_dir, io_mod.LEDGER_NAME)
    io_mod.write_energy_ledger(result.records, ledger_path)
    if "vtk" in result.config.formats:
        for k, state in enumerate(result.states):
            io_mod.write_fields_vtk(
                state, os.path.join(out_dir, f"fields_{k:04d}.vtk"))
    return ledger_path


def _cmd_run(args):
    from . import solver

    cfg = _load_config(args)
    result = solver.run(cfg)
    ledger_path = _write_run_outputs(result, cfg.out_dir)
    worst = max((abs(r.imbalance) / r.relative_scale(cfg.dt)
                 for r in result.records), default=0.0)
    print(f"ran {len(result.records)} steps to t={result.states[-1].t!r} "
          f"on a {cfg.dim}-D mesh (n={cfg.n}); "
          f"worst relative energy imbalance {worst:.3e}")
    print(f"ledger: {ledger_path}")
    return 0


def _run_level(cfg, n, out_dir):
    from . import scenarios, solver
    from .diagnostics import a_priori_bound, energy_totals, error_norms

    level_cfg = replace(cfg, n=n, out_dir=out_dir)
    result = solver.run(level_cfg)
    _write_run_outputs(result, out_dir)
    fields = scenarios.fields_for(level_cfg)
    row = {
        "n": n,
        "h": result.disc.mesh.h_max,
        "totals": energy_totals(result),
        "bound": a_priori_bound(result),
    }
    if fields.exact_velocity is not None:
        row.update(error_norms(result.states[-1], fields))
    return row


def _cmd_study(args):
    cfg = _load_config(args)
    if args.levels < 1:
        raise UsageError("--levels must be >= 1")
    ns = [cfg.n * 2 ** k for k in range(args.levels)]
    out_root = io_mod.ensure_dir(cfg.out_dir)
    dirs = [os.path.join(out_root, f"level_{k}") for k in range(len(ns))]
    workers = _workers()
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda a: _run_level(cfg, *a), zip(ns, dirs)))
    else:
        rows = [_run_level(cfg, n, d) for n, d in zip(ns, dirs)]

    totals_rows = [(k, r["n"], r["h"], r["totals"], r["bound"])
                   for k, r in enumerate(rows)]
    io_mod.write_table_csv(("level", "n", "h", "energy_total", "data_bound"),
                           totals_rows, os.path.join(out_root, "totals.csv"))
    print("level   n        h      energy_total        data_bound")
    for k, r in enumerate(rows):
        print(f"{k:5d} {r['n']:3d} {r['h']:.6f} {r['totals']:.12e} {r['bound']:.12e}")

    if "err_vel_l2" in rows[0]:
        keys = ("err_vel_l2", "err_vel_h1", "err_p_l2")
        table = []
        for k, r in enumerate(rows):
            rates = []
            for key in keys:
                if k == 0:
                    rates.append(None)
                else:
                    rates.append(math.log2(rows[k - 1][key] / r[key]))
            table.append((k, r["n"], r["h"]) + tuple(r[key] for key in keys)
                         + tuple(rates))
        header = (("level", "n", "h") + keys
                  + tuple(f"rate_{key}" for key in keys))
        io_mod.write_table_csv(header, table,
                               os.path.join(out_root, "rates.csv"))
        print("level   n   err_vel_l2    err_vel_h1    err_p_l2      "
              "rate_l2 rate_h1 rate_p")
        for row in table:
            k, n, _, e1, e2, e3, r1, r2, r3 = row
            fmt_rate = lambda v: "  --  " if v is None else f"{v:6.3f}"
            print(f"{k:5d} {n:3d} {e1:.6e} {e2:.6e} {e3:.6e} "
                  f"{fmt_rate(r1)} {fmt_rate(r2)} {fmt_rate(r3)}")
    return 0


def _cmd_spectra(args):
    from .spectral_lab import run_equivalence_suite

    cfg = _load_config(args)
    if args.levels < 1:
        raise UsageError("--levels must be >= 1")
    ns = tuple(cfg.n * 2 ** k for k in range(args.levels))
    report = run_equivalence_suite(levels=ns, dim=cfg.dim, workers=_workers())
    out_root = io_mod.ensure_dir(cfg.out_dir)
    path = os.path.join(out_root, "equivalence.csv")
    io_mod.write_equivalence_csv(report, path)
    lemmas = []
    for row in report.rows:
        if row.lemma not in lemmas:
            lemmas.append(row.lemma)
    print("lemma                  rows   value range")
    for lemma in lemmas:
        rows = report.by_lemma(lemma)
        vals = [r.value for r in rows]
        print(f"{lemma:22s} {len(rows):4d}   [{min(vals):.6g}, {max(vals):.6g}]")
    print(f"report: {path}")
    return 0


def _cmd_check(args):
    cfg = _load_config(args)
    path = os.path.join(cfg.out_dir, io_mod.LEDGER_NAME)
    records = io_mod.read_energy_ledger(path)
    io_mod.check_energy_ledger(records)
    print(f"{path}: {len(records)} rows, energy identity holds at every step")
    return 0


def _cmd_init(args):
    from . import scenarios
    from .mesh import build_structured
    from .solver import build_discretization, initialize

    cfg = _load_config(args)
    mesh = build_structured(cfg.dim, cfg.n, cfg.box)
    disc = build_discretization(mesh, degree=cfg.degree)
    fields = scenarios.fields_for(cfg)
    state = initialize(fields.initial, disc)
    out_root = io_mod.ensure_dir(cfg.out_dir)
    path = os.path.join(out_root, "init_state.vtk")
    io_mod.write_fields_vtk(state, path)
    ke = 0.5 * float(state.u @ (disc.M_d @ state.u))
    print(f"projected initial state: kinetic energy {ke!r}, "
          f"subscale magnitude {state.tilde.norm_l2()!r}, "
          f"continuity residual {state.continuity_residual:.3e}")
    print(f"state: {path}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "study": _cmd_study,
    "spectra": _cmd_spectra,
    "check": _cmd_check,
    "init": _cmd_init,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SolverNonconvergence, SolverDivergence) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
