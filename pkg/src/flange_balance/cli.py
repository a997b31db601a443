"""
Batch front-end.

    flange-balance check    --model joint.json
    flange-balance solve    --model joint.json --out results/
    flange-balance optimize --model joint.json --out results/
    flange-balance condense --model joint.json --out results/

Exit codes: 0 success, 2 invalid input, 3 non-convergence, 4 IO/parse error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from contextlib import ExitStack, nullcontext
from pathlib import Path

from filelock import FileLock, Timeout

from . import __version__, build_joint
from .jointmodel import (
    LoadCase,
    load_document,
    loadcase_from_dict,
    validate,
    validate_loadcase,
)
from .optimizer import OptimizationError, OptimizerConfig, optimize_loadcase
from .report import dump_bolts, dump_field, emit_plots, write_json, write_result
from .solver import SolverError, analyse
from .structure import StructureError, assemble_ring_model, default_masters, import_condensed
from .superelement import CondensationError, condense

log = logging.getLogger("flange_balance")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGED = 3
EXIT_IO = 4

THREADS_ENV = "FLANGE_BALANCE_THREADS"


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="joint JSON document (may embed a load_case)")
    common.add_argument("--gasket", help="gasket curve CSV (closure_m,stress_Pa); overrides the model's curve")
    common.add_argument("--loads", help="load case JSON; overrides the model's load_case")
    common.add_argument("--config", help="optimizer config JSON")
    common.add_argument("--out", help="output directory")
    common.add_argument("--tolerance", type=float)
    common.add_argument("--max-iters", type=int, dest="max_iters")
    common.add_argument("--fm", type=float, help="rigidity factor for the compensation rule")
    common.add_argument("--overload", type=float, help="initial overload factor")
    common.add_argument("--sectors", type=int, help="override the number of circumferential stations")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="flange-balance", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("check", parents=[common], help="validate inputs only")
    sub.add_parser("solve", parents=[common], help="pretension + external loads, dump the stress field")
    sub.add_parser("optimize", parents=[common], help="compute the compensating preload distribution")
    c = sub.add_parser("condense", parents=[common], help="assemble or import, condense, export the reduced matrix")
    c.add_argument("--matrix", help="MatrixMarket file of an external stiffness matrix")
    c.add_argument("--dofmap", help="JSON DOF map matching --matrix")
    return p


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_inputs(args):
    if bool(getattr(args, "matrix", None)) != bool(getattr(args, "dofmap", None)):
        raise CliError(EXIT_INVALID, "--matrix and --dofmap must be given together")
    try:
        model, loads = load_document(args.model, args.gasket)
        if args.loads:
            with open(args.loads) as fh:
                loads = loadcase_from_dict(json.load(fh), model.geometry.n_bolts)
        config = {}
        if args.config:
            with open(args.config) as fh:
                config = json.load(fh)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_IO, f"cannot read inputs: {exc}") from exc
    if args.sectors:
        model = model.with_sectors(args.sectors)
    overrides = {
        "tolerance": args.tolerance,
        "max_iterations": args.max_iters,
        "rigidity_factor": args.fm,
        "initial_overload_factor": args.overload,
    }
    config.update({k: v for k, v in overrides.items() if v is not None})
    return model, loads, config


def _make_config(config: dict) -> tuple[OptimizerConfig, int]:
    config = dict(config)
    n_radial = int(config.pop("n_radial", 5))
    try:
        return OptimizerConfig(**config), n_radial
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_INVALID, f"invalid optimizer config: {exc}") from exc


def _validate(model, loads: LoadCase | None, need_loads: bool):
    problems = validate(model)
    if loads is not None:
        problems += validate_loadcase(model, loads)
    elif need_loads:
        problems.append("load_case: no load case given (embed one in the model or pass --loads)")
    if problems:
        raise CliError(EXIT_INVALID, "validation failed:\n  " + "\n  ".join(problems))


def _manifest(args, config, out_dir) -> dict:
    inputs = {}
    for key in ("model", "gasket", "loads", "config", "matrix", "dofmap"):
        path = getattr(args, key, None)
        if path:
            inputs[key] = {"path": str(path), "sha256": _sha256(path)}
    return {
        "tool": "flange-balance",
        "version": __version__,
        "command": args.command,
        "inputs": inputs,
        "overrides": {k: v for k, v in sorted(config.items())},
        "sectors": args.sectors,
        "output_dir": str(out_dir),
    }


def _limit_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def _cmd_check(args, model, loads, config):
    _validate(model, loads, need_loads=False)
    _make_config(config)
    print(f"ok: {model.name}")
    return EXIT_OK


def _cmd_solve(args, model, loads, config, out):
    _validate(model, loads, need_loads=True)
    _, n_radial = _make_config(config)
    se, layout = build_joint(model, n_radial)
    state = analyse(
        se, layout, loads.preload_forces(model.bolts),
        loads.axial_load, loads.bending_moment, loads.moment_plane_angle,
    )
    dump_field(out / "stress_field.csv", layout, state.field)
    dump_bolts(out / "bolts.csv", layout, state, model.bolts)
    print(f"solved: {state.field.lost_contact_count} of {layout.n_stations} stations out of contact")
    return EXIT_OK


def _cmd_optimize(args, model, loads, config, out):
    _validate(model, loads, need_loads=True)
    cfg, n_radial = _make_config(config)
    se, layout = build_joint(model, n_radial)
    P = loads.preload_forces(model.bolts)
    loaded = analyse(se, layout, P, loads.axial_load, loads.bending_moment, loads.moment_plane_angle)
    result = optimize_loadcase(se, layout, model, loads, cfg)
    write_result(out, result, layout, model.bolts)
    emit_plots(out, result, layout, loaded_uniform=loaded.field)
    status = "converged" if result.converged else "NOT converged"
    print(f"{status} after {result.iterations} analyses; target {result.target_stress / 1e6:.3f} MPa")
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def _cmd_condense(args, model, loads, config, out):
    if args.matrix:
        try:
            system = import_condensed(args.matrix, args.dofmap)
        except OSError as exc:
            raise CliError(EXIT_IO, str(exc)) from exc
        except StructureError as exc:
            raise CliError(EXIT_INVALID, str(exc)) from exc
    else:
        _validate(model, None, need_loads=False)
        system = assemble_ring_model(model)
    se = condense(system, default_masters(system.dofmap))
    se.export(out / "reduced.mtx")
    se.master_dofmap.write(out / "reduced_dofmap.json")
    print(f"condensed {system.n} -> {se.n_masters} DOFs")
    return EXIT_OK


COMMANDS = {"solve": _cmd_solve, "optimize": _cmd_optimize, "condense": _cmd_condense}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out) if args.out else None
    with ExitStack() as stack:
        try:
            model, loads, config = _read_inputs(args)
            if args.command == "check":
                return _cmd_check(args, model, loads, config)
            if out is None:
                raise CliError(EXIT_INVALID, f"{args.command} needs --out")
            try:
                out.mkdir(parents=True, exist_ok=True)
                stack.enter_context(FileLock(str(out / ".flange_balance.lock"), timeout=0))
            except Timeout as exc:
                raise CliError(EXIT_IO, f"output directory {out} is locked by another run") from exc
            except OSError as exc:
                raise CliError(EXIT_IO, f"cannot prepare output directory: {exc}") from exc
            write_json(out / "manifest.json", _manifest(args, config, out))
            stack.enter_context(_limit_threads())
            return COMMANDS[args.command](args, model, loads, config, out)
        except CliError as exc:
            return _fail(out, exc.code, type(exc).__name__, str(exc))
        except OptimizationError as exc:
            return _fail(out, EXIT_NONCONVERGED, type(exc).__name__, str(exc))
        except CondensationError as exc:
            return _fail(out, EXIT_INVALID, type(exc).__name__, str(exc))
        except SolverError as exc:
            return _fail(out, EXIT_NONCONVERGED, type(exc).__name__, str(exc))
        except OSError as exc:
            return _fail(out, EXIT_IO, type(exc).__name__, str(exc))


def _fail(out, code, kind, message) -> int:
    print(f"error: {message}", file=sys.stderr)
    if out is not None and out.is_dir():
        try:
            write_json(out / "error.json", {"exit_code": code, "error": kind, "message": message})
        except OSError:
            pass
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
