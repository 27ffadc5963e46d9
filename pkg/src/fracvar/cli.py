"""``fracvar`` command line: operators, solves, IBP checks, self-verification, refinement studies.

Exit codes: 0 success, 2 usage or config error, 3 solver did not converge
(or a verification case failed), 1 unexpected internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .expr import Bindings, ExprError, parse
from .fracops import (
    FracParams,
    Grid,
    OperatorKind,
    SampledFunction,
    build_operator_matrix,
    ibp_residual_combined,
)
from .oracle import run_verification
from .variational import solve, variation_certificate

log = logging.getLogger("fracvar")

OUTPUT_ENV = "FRACVAR_OUTPUT_DIR"

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _write_csv(stream, header, rows):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _order(text: str, name: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise UsageError(f"{name}: order must lie in (0,1), got {v:g}")
    return v


def _weight(v: float) -> float:
    if not 0.0 <= v <= 1.0:
        raise UsageError(f"gamma: weight must lie in [0,1], got {v:g}")
    return v


def _grid_list(text: str) -> list:
    try:
        sizes = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"--grids expects comma-separated integers, got {text!r}") from None
    if not sizes or min(sizes) < 3:
        raise UsageError("--grids needs node counts of at least 3")
    return sizes


def _output_dir(flag: Optional[str]) -> Path:
    out = Path(flag or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _x_samples(text: str, grid: Grid, what: str) -> np.ndarray:
    try:
        ast = parse(text, 1)
        if ast.depends_on("y1") or ast.depends_on("v1"):
            raise UsageError(f"{what}: expression must depend on x only")
        vals = ast.eval(Bindings(grid.nodes, [np.zeros(1)], [np.zeros(1)]))
    except ExprError as exc:
        raise UsageError(f"{what}: {exc}") from None
    return np.broadcast_to(np.asarray(vals, dtype=float), (grid.n,)).copy()


def _grid(a: float, b: float, n: int) -> Grid:
    try:
        return Grid(a, b, n)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _params(args) -> FracParams:
    alpha = _order(args.alpha, "alpha")
    beta = alpha if args.beta is None else _order(args.beta, "beta")
    return FracParams(alpha, beta, _weight(args.gamma))


# -- subcommands -------------------------------------------------------------


def cmd_deriv(args) -> int:
    kind = OperatorKind(args.op)
    grid = _grid(args.a, args.b, args.n)
    f = _x_samples(args.f, grid, "--f")
    orders = _params(args) if kind.needs_params else _order(args.alpha, "alpha")
    op = build_operator_matrix(kind, grid, orders)
    out = op.apply(SampledFunction(grid, f)).values
    rows = zip(grid.nodes, f, out)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            _write_csv(fh, ["x", "f", args.op], rows)
    else:
        _write_csv(sys.stdout, ["x", "f", args.op], rows)
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    prob = cfg.problem()
    rep = solve(prob)
    out = _output_dir(args.out)
    V = np.array([build_operator_matrix(OperatorKind.COMBINED_CAPUTO, prob.grid, prob.params).matrix @ row
                  for row in rep.trajectory.values])
    N = prob.dims
    header = ["x"] + [f"y{i + 1}" for i in range(N)] + [f"v{i + 1}" for i in range(N)]
    with open(out / "trajectory.csv", "w", newline="") as fh:
        _write_csv(fh, header, zip(prob.grid.nodes, *rep.trajectory.values, *V))
    report = rep.to_dict()
    report["n"] = prob.grid.n
    report["dims"] = N
    report["orders"] = {"alpha": prob.params.alpha, "beta": prob.params.beta, "gamma": prob.params.gamma}
    report["variation_max"] = None
    if not rep.abnormal:
        report["variation_max"] = variation_certificate(prob, rep, seed=cfg.seed)
    ref = cfg.reference(prob.grid)
    if ref is not None:
        report["error_vs_reference"] = float(np.max(np.abs(rep.trajectory.values - ref.values)))
    with open(out / "report.json", "w") as fh:
        json.dump(_jsonable(report), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    status = "converged" if rep.converged else "NOT converged"
    print(f"{status}: cost={rep.cost:.10g} el_residual_max={rep.el_residual_max:.3g} ({rep.message})")
    print(f"wrote {out / 'trajectory.csv'} and {out / 'report.json'}")
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_check_ibp(args) -> int:
    p = _params(args)
    rows = []
    for n in _grid_list(args.grids):
        grid = _grid(args.a, args.b, n)
        f = SampledFunction(grid, _x_samples(args.f, grid, "--f"))
        g = SampledFunction(grid, _x_samples(args.g, grid, "--g"))
        rows.append((n, ibp_residual_combined(f, g, p)))
    _write_csv(sys.stdout, ["n", "residual"], rows)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_verification(seed=args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} cases passed")
    return EXIT_OK if failed == 0 else EXIT_NOT_CONVERGED


def cmd_converge(args) -> int:
    cfg = load_config(args.config)
    if not cfg.has_reference:
        raise UsageError("converge needs a config with a \"reference\" section")
    sizes = _grid_list(args.grids)
    rows = []
    all_converged = True
    prev = None
    for n in sizes:
        prob = cfg.problem(n)
        rep = solve(prob)
        all_converged &= rep.converged
        ref = cfg.reference(prob.grid)
        err = float(np.max(np.abs(rep.trajectory.values - ref.values)))
        order = None
        if prev is not None and err > 0.0 and prev[1] > 0.0:
            order = math.log(prev[1] / err) / math.log(prev[0] / prob.grid.h)
        rows.append((n, rep.cost, rep.el_residual_max, err, order))
        prev = (prob.grid.h, err)
    header = ["n", "cost", "el_residual_max", "error_vs_oracle", "order"]
    _write_csv(sys.stdout, header, rows)
    with open(_output_dir(args.out) / "study.csv", "w", newline="") as fh:
        _write_csv(fh, header, rows)
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


# -- parser ------------------------------------------------------------------


def _add_orders(p, gamma_default=1.0):
    p.add_argument("--alpha", required=True, help="left order in (0,1)")
    p.add_argument("--beta", default=None, help="right order in (0,1) (default: alpha)")
    p.add_argument("--gamma", type=float, default=gamma_default, help="weight of the left operator")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracvar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("deriv", help="apply a fractional operator to f(x), CSV on stdout")
    p.add_argument("--op", required=True, choices=[k.value for k in OperatorKind])
    _add_orders(p)
    p.add_argument("--f", required=True, help="expression in x")
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--n", type=int, default=101)
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_deriv)

    p = sub.add_parser("solve", help="solve the problem in a JSON config")
    p.add_argument("config")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or .)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check-ibp", help="integration-by-parts residual across grids")
    p.add_argument("--f", required=True)
    p.add_argument("--g", required=True)
    _add_orders(p)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--b", type=float, default=1.0)
    p.add_argument("--grids", default="251,501,1001,2001")
    p.set_defaults(func=cmd_check_ibp)

    p = sub.add_parser("verify", help="run the built-in oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("converge", help="refinement study against the config's reference")
    p.add_argument("config")
    p.add_argument("--grids", default="101,201,401,801")
    p.add_argument("--out", help=f"directory for study.csv (default: ${OUTPUT_ENV} or .)")
    p.set_defaults(func=cmd_converge)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"fracvar {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, ExprError) as exc:
        print(f"fracvar {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # never a traceback on the terminal
        log.debug("internal error", exc_info=True)
        print(f"fracvar {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
