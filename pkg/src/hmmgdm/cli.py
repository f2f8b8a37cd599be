"""Command line front-end: ``hmmgdm {mesh,run,study,quality}``.

Exit status is 0 on success, 1 on runtime failure and 2 on usage or
configuration errors.  ``--config FILE`` reads ``key = value`` lines (list
values comma separated); explicit flags take precedence.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import HmmGdmError, InvalidLambda, InvalidTimeGrid, StepFailed
from .gdm import HMMDiscretisation
from .mesh import FamilyTag, generate, read_mesh, write_mesh
from .metrics import DEFAULT_DTS, ConvergenceReport, convergence_study, final_errors, quality_report
from .models import make_gbf, make_heat
from .solver import SolverConfig, StepBoundWarning, check_step_bound, run

log = logging.getLogger("hmmgdm")

FAMILIES = [f.value for f in FamilyTag]

# hard defaults, applied after the config file
DEFAULTS = {
    "family": None, "level": None, "mesh": None, "model": "gbf", "p": 2.0,
    "dt": None, "T": 1.0, "out": None, "format": None,
    "dump_local_matrices": None, "seed": 0, "solver": "reuse",
    "error_mode": "sampled", "lam": 1.0,
}


class UsageError(Exception):
    pass


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags win")
    common.add_argument("--family", choices=FAMILIES)
    common.add_argument("--level", help="mesh level (comma list for study/quality)")
    common.add_argument("--mesh", help="mesh file instead of --family/--level")
    common.add_argument("--model", choices=["gbf", "heat"])
    common.add_argument("--p", type=float, help="GBF exponent")
    common.add_argument("--lam", type=float, help="diffusion coefficient (heat model)")
    common.add_argument("--dt", help="time step (comma list for study)")
    common.add_argument("--T", type=float, help="final time")
    common.add_argument("--out", help="output file or directory; '-' for stdout")
    common.add_argument("--format", help="study formats, e.g. csv,md")
    common.add_argument("--dump-local-matrices", dest="dump_local_matrices",
                        help="write every local matrix A_K to this file")
    common.add_argument("--seed", type=int, help="seed for the numpy generator")
    common.add_argument("--solver", choices=["reuse", "direct", "gmres"])
    common.add_argument("--error-mode", dest="error_mode", choices=["sampled", "quadrature"])
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hmmgdm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="generate and write a mesh")
    sub.add_parser("run", parents=[common], help="run one simulation")
    sub.add_parser("study", parents=[common], help="convergence study over levels")
    sub.add_parser("quality", parents=[common], help="C_D, S_D and W_D of meshes")
    return parser


def read_config(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve(args) -> argparse.Namespace:
    """Merge flags over the config file over the defaults."""
    cfg = read_config(args.config) if args.config else {}
    for key, default in DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, cfg.get(key, default))
    for key in ("p", "T", "lam"):
        try:
            setattr(args, key, float(getattr(args, key)))
        except ValueError:
            raise UsageError(f"--{key} must be a number") from None
    args.seed = int(args.seed)
    if args.family is not None and args.family not in FAMILIES:
        raise UsageError(f"unknown family {args.family!r}; choose from {', '.join(FAMILIES)}")
    return args


# -- helpers --------------------------------------------------------------------

def _open_out(target):
    if target in (None, "-"):
        return sys.stdout, False
    return open(target, "w"), True


def _meshes(args, many=False):
    """Yield (label, mesh) pairs from --mesh or --family/--level."""
    if args.mesh is not None:
        yield args.mesh, read_mesh(args.mesh)
        return
    if args.family is None:
        raise UsageError("either --mesh or --family is required")
    levels = _int_list(args.level if args.level is not None else "1")
    if not levels or (len(levels) > 1 and not many):
        raise UsageError("a single --level is required")
    for level in levels:
        yield f"{args.family}:{level}", generate(args.family, level)


def _model(args):
    if args.model == "gbf":
        return make_gbf(args.p)
    if args.model == "heat":
        def zero(x, y, t):
            return np.zeros(np.broadcast(x, y).shape)

        def zero_grad(x, y, t):
            return np.zeros(np.broadcast(x, y).shape + (2,))
        return make_heat(args.lam, exact=zero, exact_gradient=zero_grad)
    raise UsageError(f"unknown model {args.model!r}")


# -- subcommands ------------------------------------------------------------------

def cmd_mesh(args) -> int:
    (_, mesh), = _meshes(args)
    sink, close = _open_out(args.out)
    try:
        write_mesh(mesh, sink)
    finally:
        if close:
            sink.close()
    info = sys.stderr if sink is sys.stdout else sys.stdout
    print(f"h={mesh.h:.10g} cells={mesh.n_cells} faces={mesh.n_faces} "
          f"vertices={mesh.n_vertices}", file=info)
    return 0


def cmd_run(args) -> int:
    (label, mesh), = _meshes(args)
    if args.dt is None:
        raise UsageError("--dt is required")
    dts = _float_list(args.dt)
    if len(dts) != 1:
        raise UsageError("run takes a single --dt")
    model = _model(args)
    cfg = SolverConfig(dt=dts[0], T=args.T, linear_solver=args.solver)
    cfg.n_steps()
    disc = HMMDiscretisation(mesh)
    if args.dump_local_matrices:
        with open(args.dump_local_matrices, "w") as fh:
            disc.dump_local_matrices(fh, model.lam)
    traj = run(disc, model, cfg)
    sink, close = _open_out(args.out)
    try:
        traj.to_csv(sink)
    finally:
        if close:
            sink.close()
    info = sys.stderr if sink is sys.stdout else sys.stdout
    if model.has_exact:
        ec, eg = final_errors(disc, model, traj.final, args.T, args.error_mode)
        print(f"errors: mesh={label} h={mesh.h:.10g} T={args.T:g} "
              f"rel_err_c={ec:.10g} rel_err_grad={eg:.10g} "
              f"max_picard={max(traj.picard_iterations)}", file=info)
    return 0


def cmd_study(args) -> int:
    if args.family is None:
        raise UsageError("study requires --family")
    levels = _int_list(args.level if args.level is not None else "1,2,3,4")
    dts = _float_list(args.dt) if args.dt is not None else list(DEFAULT_DTS[:len(levels)])
    if len(dts) != len(levels):
        raise UsageError(f"{len(levels)} levels need {len(levels)} time steps, got {len(dts)}")
    if any(d <= 0 for d in dts):
        raise UsageError("time steps must be positive")
    for d in dts:
        SolverConfig(dt=d, T=args.T).n_steps()
    formats = _formats(args.format)
    model = _model(args)
    outdir = None
    if args.out not in (None, "-"):
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
    stem = f"{model.name}_p{args.p:g}_{args.family}" if model.name == "gbf" else \
        f"{model.name}_{args.family}"

    def flush(report):
        if outdir is None:
            return
        if "csv" in formats:
            (outdir / f"{stem}.csv").write_text(report.to_csv())
        if "md" in formats:
            (outdir / f"{stem}.md").write_text(report.to_markdown())

    report = ConvergenceReport(model=model.name, family=args.family, dts=dts)
    try:
        for level, dt in zip(levels, dts):
            r = convergence_study(model, args.family, [level], [dt], T=args.T,
                                  mode=args.error_mode, linear_solver=args.solver)
            row = r.rows[0]
            report.add(row.h, row.err_c, row.err_grad)
            report.max_picard.extend(r.max_picard)
            log.info("level %d: h=%.6g err_c=%.4e err_grad=%.4e", level, row.h,
                     row.err_c, row.err_grad)
            flush(report)
    except HmmGdmError as exc:
        flush(report)
        print(f"error: level {level}: {exc}", file=sys.stderr)
        print(report.to_markdown(), end="")
        return 1
    print(report.to_markdown(), end="")
    if outdir is None and args.out == "-" and "csv" in formats:
        print(report.to_csv(), end="")
    return 0


def _formats(text):
    formats = {f.strip() for f in (text or "csv,md").split(",") if f.strip()}
    bad = formats - {"csv", "md"}
    if bad:
        raise UsageError(f"unknown format(s): {', '.join(sorted(bad))}")
    return formats


def cmd_quality(args) -> int:
    dt = None
    if args.dt is not None:
        dts = _float_list(args.dt)
        if len(dts) != 1:
            raise UsageError("quality takes a single --dt")
        dt = dts[0]
    header = False
    for label, mesh in _meshes(args, many=True):
        rep = quality_report(HMMDiscretisation(mesh))
        if not header:
            print("mesh," + rep.csv_header())
            header = True
        print(f"{label}," + rep.csv_row())
        if dt is not None:
            cfg = SolverConfig(dt=dt, T=dt, coercivity=rep.C_D)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", StepBoundWarning)
                check_step_bound(_model(args), cfg)
            for w in caught:
                print(f"warning: {label}: {w.message}", file=sys.stderr)
    return 0


COMMANDS = {"mesh": cmd_mesh, "run": cmd_run, "study": cmd_study, "quality": cmd_quality}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = resolve(args)
    except (UsageError, OSError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    np.random.seed(args.seed)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, InvalidTimeGrid, InvalidLambda) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except StepFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (HmmGdmError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
