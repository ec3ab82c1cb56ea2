"""``pbrigidity`` command line: bracket, cover, area-check, estimate, flex, probe.

Exit status: 0 success, 1 a check failed (outputs are still complete),
2 bad input (flags, expressions, field files), 3 a computation raised.
Every completed run writes ``manifest.json`` last.
"""
from __future__ import annotations

import argparse
import sys
import time
import warnings
from pathlib import Path

from . import __version__, flexibility, phi_analysis, rigidity_probe
from .expression import (EvaluationError, ExpressionError, margin_truncation,
                         parse_expression, sample_expression)
from .field_core import (FieldError, c0_norm, lp_norm, parse_grid_spec, poisson_bracket,
                         read_field, write_field)
from .serialize import sha256_file, write_csv, write_json

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2, 3
DEFAULT_GRID = "0,1,0,1,129,129,plane"


class InputError(Exception):
    pass


# -- inputs ------------------------------------------------------------------------

def load_field(source: str, grid, margin: int, inputs: dict):
    """An existing path is read as a field file; anything else is an expression."""
    path = Path(source)
    if path.is_file():
        try:
            H = read_field(path)
        except (OSError, FieldError, ValueError) as exc:
            raise InputError(f"{source}: {exc}") from None
        inputs[str(path)] = sha256_file(path)
        return H, 0.0
    try:
        e = parse_expression(source)
        return sample_expression(e, grid, margin), margin_truncation(e, grid, margin)
    except ExpressionError as exc:
        raise InputError(f"expression {source!r}: {exc}") from None
    except EvaluationError as exc:
        raise InputError(f"expression {source!r}: {exc}") from None


def load_pair(args, inputs: dict):
    try:
        grid = parse_grid_spec(args.grid)
    except FieldError as exc:
        raise InputError(str(exc)) from None
    F, tf = load_field(args.f, grid, args.margin, inputs)
    G, tg = load_field(args.g, grid, args.margin, inputs)
    if F.grid != G.grid:
        raise InputError("F and G live on different grids")
    return F, G, {"f": tf, "g": tg}


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _estimate_params(text: str) -> rigidity_probe.EstimateParams:
    parts = [t.strip() for t in text.split(",")]
    if len(parts) not in (2, 3, 4):
        raise argparse.ArgumentTypeError("--estimate takes n,k[,eps[,tau]]")
    try:
        n, k = int(parts[0]), int(parts[1])
        opt = [None if t in ("", "auto") else float(t) for t in parts[2:]]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --estimate value {text!r}")
    opt += [None] * (2 - len(opt))
    return rigidity_probe.EstimateParams(n, k, opt[0], opt[1])


# -- subcommands ----------------------------------------------------------------------

def cmd_bracket(args, out: Path, inputs: dict) -> tuple[int, list[Path]]:
    F, G, trunc = load_pair(args, inputs)
    b = poisson_bracket(F, G)
    files = [out / "F.pbf", out / "G.pbf", out / "bracket.pbf", out / "norms.json"]
    write_field(files[0], F)
    write_field(files[1], G)
    write_field(files[2], b)
    norms = {"L1": lp_norm(b, 1), "L2": lp_norm(b, 2), "L4": lp_norm(b, 4), "C0": c0_norm(b),
             "support_margin": b.support_margin,
             "margin_truncation": trunc,
             "truncated": any(v > 0 for v in trunc.values())}
    write_json(files[3], norms)
    return EXIT_OK, files


def cmd_cover(args, out: Path, inputs: dict):
    F, G, _ = load_pair(args, inputs)
    dec = phi_analysis.decompose(F, G, args.n, args.k, args.tau)
    files = [out / "cover.csv", out / "components.csv", out / "oscillation.json"]
    write_csv(files[0], ["square_i", "square_j", "level"],
              [(s.i, s.j, s.level) for s in dec.cover.squares])
    phi_analysis.write_components_csv(files[1], dec.components)
    max_osc, per = phi_analysis.oscillation_stats(F, G, args.p, dec.valid_components, dec.bracket)
    write_json(files[2], {
        "n": args.n, "k": args.k, "p": args.p, "tau": dec.cover.tau,
        "cover_squares": len(dec.cover), "components": len(dec.components),
        "valid_components": len(dec.valid_components),
        "max_osc": max_osc, "per_component": per,
    })
    return EXIT_OK, files


def cmd_area_check(args, out: Path, inputs: dict):
    F, G, _ = load_pair(args, inputs)
    rep = phi_analysis.area_formula_check(F, G, value_grid=args.value_grid)
    path = out / "area_formula.json"
    write_json(path, rep)
    return (EXIT_CHECK if rep.rel_err > 0.05 else EXIT_OK), [path]


def cmd_estimate(args, out: Path, inputs: dict):
    F, G, _ = load_pair(args, inputs)
    rep = phi_analysis.main_estimate(F, G, args.p, args.n, args.k, args.delta,
                                     args.epsilon, args.tau)
    path = out / "main_estimate.json"
    write_json(path, rep)
    return EXIT_OK, [path]


def cmd_flex(args, out: Path, inputs: dict):
    F, G, _ = load_pair(args, inputs)
    layers = flexibility.WIDE_LAYERS if args.layers == "wide" else flexibility.MINIMAL_LAYERS
    Ft, Gt, cert = flexibility.commuting_pair(F, G, args.eps, args.q, args.mesh,
                                              layers=layers, volume_rule=args.volume_rule)
    files = [out / "F_tilde.pbf", out / "G_tilde.pbf", out / "certificate.json"]
    write_field(files[0], Ft)
    write_field(files[1], Gt)
    write_json(files[2], cert)
    return (EXIT_OK if cert.passes else EXIT_CHECK), files


def cmd_probe(args, out: Path, inputs: dict):
    F, G, _ = load_pair(args, inputs)
    rep = rigidity_probe.rigidity_sweep(
        F, G, args.p, args.deltas, args.trials, args.families,
        estimate_params=args.estimate or None, seed=args.seed, budget=args.budget)
    files = [out / "sweep.json", out / "sweep.csv"]
    write_json(files[0], rep.to_dict())
    rep.write_csv(files[1])
    return (EXIT_CHECK if rep.violations else EXIT_OK), files


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbrigidity",
                                 description="Poisson-bracket rigidity experiments on 2D grids.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--f", required=True, help="expression in x, y or a pbfield file")
        sp.add_argument("--g", required=True, help="expression in x, y or a pbfield file")
        sp.add_argument("--grid", default=DEFAULT_GRID,
                        help="xmin,xmax,ymin,ymax,nx,ny,topology (default %(default)s)")
        sp.add_argument("--margin", type=int, default=0,
                        help="outer node layers forced to zero on the plane (default 0)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.set_defaults(func=func)
        return sp

    common("bracket", cmd_bracket, "sample F, G and their bracket; report norms")

    sp = common("cover", cmd_cover, "regular-value cover, sheets and oscillation")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--k", type=int, default=1)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--p", type=float, default=1.0)

    sp = common("area-check", cmd_area_check, "compare both sides of the area formula")
    sp.add_argument("--value-grid", type=int, default=512)

    sp = common("estimate", cmd_estimate, "lower bound for C0-close pairs")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--p", type=float, default=1.0)
    sp.add_argument("--tau", type=float, default=None)

    sp = common("flex", cmd_flex, "exactly commuting approximation")
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--q", type=float, default=1.0)
    sp.add_argument("--mesh", type=float, default=None, help="mesh cell diameter")
    sp.add_argument("--layers", choices=("minimal", "wide"), default="minimal")
    sp.add_argument("--volume-rule", choices=("global", "tile"), default="global")

    sp = common("probe", cmd_probe, "perturbation sweep over delta balls")
    sp.add_argument("--p", type=float, default=1.0)
    sp.add_argument("--deltas", type=_float_list, required=True)
    sp.add_argument("--trials", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--budget", type=int, default=40, help="adversarial descent iterations")
    sp.add_argument("--families", type=lambda t: t.split(","),
                    default=[f.value for f in rigidity_probe.ALL_FAMILIES])
    sp.add_argument("--estimate", type=_estimate_params, action="append",
                    help="n,k[,eps[,tau]]; eps 'auto' = measured oscillation; repeatable")
    return ap


def _manifest(args, out: Path, inputs: dict, outputs: list[Path], wall: float, status: int):
    params = {k: v for k, v in vars(args).items() if k != "func"}
    return {
        "subcommand": args.command,
        "parameters": params,
        "inputs": inputs,
        "outputs": [{"path": p.name, "sha256": sha256_file(p)} for p in outputs],
        "exit_status": status,
        "wall_time_s": wall,
        "version": __version__,
    }


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"pbrigidity: warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    out = Path(args.out)
    inputs: dict = {}
    t0 = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            warnings.showwarning = _show_warning
            status, files = args.func(args, out, inputs)
    except InputError as exc:
        print(f"pbrigidity: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, FieldError, RuntimeError, OSError, AssertionError) as exc:
        print(f"pbrigidity: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    wall = time.perf_counter() - t0
    write_json(out / "manifest.json", _manifest(args, out, inputs, files, wall, status))
    return status


if __name__ == "__main__":
    sys.exit(main())
