"""Command-line driver.

Exit codes: 0 on success, 1 when a run completes with flagged rows (or a
privacy check fails), 2 on configuration or input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from geopriv import __version__
from geopriv.distinguishability import DRestricted, Linear, Tabulated
from geopriv.errors import (ConfigError, DomainError, EmptyPriorError, GeoprivError, IngestionError,
                             UnsupportedError)
from geopriv.experiment import (REMAP_COLUMNS, SWEEP_COLUMNS, ExperimentConfig, read_rows, report,
                                run_remap_comparison, run_sweep_comparison, write_report, write_rows)
from geopriv.grid import load_grid
from geopriv.laplace import PlanarLaplace, RngState
from geopriv.lp import build_lp, check_mechanism_privacy, solve_lp, write_lp_file
from geopriv.mechanism import DiscreteMechanism
from geopriv.priors import Prior, build_prior, parse_checkins
from geopriv.radial import LinearLoss, Radial, StepLoss, check_radial_privacy, expected_loss

EXIT_OK, EXIT_FLAGGED, EXIT_CONFIG = 0, 1, 2


def parse_ell(spec: str):
    """``linear:EPS``, ``drestricted:EPS,D`` or ``tabulated:PATH``."""
    kind, _, arg = spec.partition(":")
    try:
        if kind == "linear":
            return Linear(float(arg))
        if kind == "drestricted":
            eps, dist = (float(v) for v in arg.split(","))
            return DRestricted(eps, dist)
        if kind == "tabulated":
            return Tabulated.from_csv(arg)
    except ValueError as exc:
        raise ConfigError(f"bad distinguishability spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown distinguishability kind {kind!r}")


def parse_loss(spec: str):
    """``linear`` or ``step:THRESHOLD``."""
    if spec == "linear":
        return LinearLoss()
    kind, _, arg = spec.partition(":")
    if kind == "step":
        try:
            return StepLoss(float(arg))
        except ValueError:
            raise ConfigError(f"bad step threshold in {spec!r}") from None
    raise ConfigError(f"unknown loss {spec!r}")


def _radial_from_args(args) -> Radial:
    if args.radial_csv:
        return Radial.from_csv(args.radial_csv, tail="fit")
    if args.laplace is None:
        raise ConfigError("give --laplace EPS or --radial-csv PATH")
    return PlanarLaplace(args.laplace).radial()


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------- commands

def cmd_sample(args) -> int:
    mech = PlanarLaplace(args.epsilon)
    rng = RngState(args.seed)
    loc = np.array([args.x, args.y], dtype=float)
    noise = mech.sample(rng, size=args.count)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["x_km", "y_km", "magnitude_km", "angle_rad"])
        for m, a, dx, dy in zip(noise.magnitude, noise.angle, noise.dx, noise.dy):
            w.writerow([repr(float(loc[0] + dx)), repr(float(loc[1] + dy)), repr(float(m)), repr(float(a))])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_eval_loss(args) -> int:
    radial = _radial_from_args(args)
    _emit({"expected_loss": expected_loss(radial, parse_loss(args.loss)), "loss": args.loss})
    return EXIT_OK


def cmd_check_privacy(args) -> int:
    ell = parse_ell(args.ell)
    if args.mechanism:
        if not args.grid:
            raise ConfigError("--mechanism needs --grid")
        res = check_mechanism_privacy(DiscreteMechanism.from_csv(args.mechanism), load_grid(args.grid), ell,
                                      tol=args.tol)
        _emit({"holds": res.holds, "worst_excess": res.worst_excess,
               "worst_triple": list(res.worst_triple) if res.worst_triple else None})
    else:
        rep = check_radial_privacy(_radial_from_args(args), ell)
        _emit({"holds": rep.holds, "worst_margin": rep.worst_margin,
               "worst_pair": list(rep.worst_pair), "infinite_ratio": rep.infinite_ratio})
        res = rep
    return EXIT_OK if res.holds else EXIT_FLAGGED


def _instance(args):
    grid = load_grid(args.grid)
    prior = Prior.from_csv(args.prior, grid) if args.prior else Prior.uniform(grid)
    return grid, build_lp(grid, prior, parse_ell(args.ell), parse_loss(args.loss))


def cmd_build_lp(args) -> int:
    _, inst = _instance(args)
    if args.out:
        write_lp_file(inst, args.out)
    _emit({"variables": inst.n_variables, "inequalities": inst.n_inequalities,
           "equalities": inst.n_equalities, "lp_file": args.out})
    return EXIT_OK


def cmd_solve_lp(args) -> int:
    _, inst = _instance(args)
    sol = solve_lp(inst, tol=args.tol, method=args.method)
    if args.out:
        sol.mechanism.to_csv(args.out)
    _emit({"objective": sol.objective, "lower_bound": sol.lower_bound, "gap": sol.gap,
           "certified": sol.certified, "method": sol.method, "mechanism": args.out})
    return EXIT_OK


def cmd_prior(args) -> int:
    grid = load_grid(args.grid)
    checkins, parse_report = parse_checkins(args.checkins)
    prior, stats = build_prior(checkins, grid, args.user)
    prior.to_csv(args.out)
    if args.stats:
        stats.to_json(args.stats)
    _emit({"total": stats.total, "in_region": stats.in_region, "dropped": stats.dropped,
           "malformed_rows": len(parse_report.malformed), "prior": args.out})
    return EXIT_OK


def _config(args) -> ExperimentConfig:
    base = ExperimentConfig.full() if args.full else ExperimentConfig()
    cfg = ExperimentConfig.from_json(args.config) if args.config else base
    if args.full and args.config:
        cfg.grid = base.grid
    if args.grid:
        cfg.grid = _grid_override(args.grid, cfg.grid)
    if args.users:
        cfg.prior = {**cfg.prior, "users": [int(u) for u in args.users.split(",")]}
    if args.epsilon_start is not None:
        cfg.eps_start = args.epsilon_start
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir:
        cfg.output_dir = args.out_dir
    cfg.validate()
    return cfg


def _grid_override(spec: str, current: dict) -> dict:
    """``COLSxROWS`` keeps the region; anything else is a grid JSON path."""
    if "x" in spec and not Path(spec).exists():
        try:
            cols, rows = (int(v) for v in spec.lower().split("x"))
        except ValueError:
            raise ConfigError(f"bad grid spec {spec!r}") from None
        return {**current, "cols": cols, "rows": rows}
    return json.loads(Path(spec).read_text())


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows = run_sweep_comparison(cfg)
    out = Path(cfg.output_dir) / "sweep.csv"
    write_rows(out, rows, SWEEP_COLUMNS)
    flagged = sum(r["flagged"] == "1" for r in rows)
    print(f"wrote {len(rows)} rows to {out} ({flagged} flagged)")
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_remap_eval(args) -> int:
    cfg = _config(args)
    rows = run_remap_comparison(cfg)
    out = Path(cfg.output_dir) / "remap.csv"
    write_rows(out, rows, REMAP_COLUMNS)
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = read_rows(args.input)
    summary, plot = report(rows)
    js, pc = write_report(summary, plot, args.out_dir)
    print(f"wrote {js} and {pc}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geopriv", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="draw planar Laplace noise around a point")
    s.add_argument("--epsilon", type=float, required=True, help="km^-1")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--x", type=float, default=0.0, help="planar x of the true location (km)")
    s.add_argument("--y", type=float, default=0.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sample)

    def radial_args(q):
        q.add_argument("--laplace", type=float, metavar="EPS", help="use the planar Laplace radial")
        q.add_argument("--radial-csv", help="tabulated radial (r_km, density)")

    s = sub.add_parser("eval-loss", help="expected loss of a radial")
    radial_args(s)
    s.add_argument("--loss", default="linear", help="linear | step:KM")
    s.set_defaults(func=cmd_eval_loss)

    s = sub.add_parser("check-privacy", help="check a radial or a mechanism against ell")
    radial_args(s)
    s.add_argument("--ell", required=True, help="linear:EPS | drestricted:EPS,D | tabulated:PATH")
    s.add_argument("--mechanism", help="mechanism CSV (checked instead of a radial)")
    s.add_argument("--grid", help="grid JSON for --mechanism")
    s.add_argument("--tol", type=float, default=1e-8)
    s.set_defaults(func=cmd_check_privacy)

    for name, fn, helptext in (("build-lp", cmd_build_lp, "build the optimal-mechanism LP"),
                               ("solve-lp", cmd_solve_lp, "solve the optimal-mechanism LP")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--grid", required=True, help="grid JSON")
        s.add_argument("--prior", help="prior CSV (cell_index, weight); uniform if omitted")
        s.add_argument("--ell", required=True)
        s.add_argument("--loss", default="linear")
        s.add_argument("--out", help="LP file (build-lp) or mechanism CSV (solve-lp)")
        if name == "solve-lp":
            s.add_argument("--tol", type=float, default=1e-9)
            s.add_argument("--method", choices=["auto", "simplex", "highs"], default="auto")
        s.set_defaults(func=fn)

    s = sub.add_parser("prior", help="build a user prior from check-ins")
    s.add_argument("--checkins", required=True)
    s.add_argument("--grid", required=True)
    s.add_argument("--user", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stats", help="write ingestion stats JSON here")
    s.set_defaults(func=cmd_prior)

    for name, fn, helptext in (("sweep", cmd_sweep, "Laplace vs LP epsilon sweep"),
                               ("remap-eval", cmd_remap_eval, "Bayesian vs nearest remapping sweep")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="experiment JSON")
        s.add_argument("--full", action="store_true", help="full-size 8x6 LA grid")
        s.add_argument("--grid", help="COLSxROWS or grid JSON path")
        s.add_argument("--users", help="comma-separated user ids")
        s.add_argument("--epsilon-start", type=float)
        s.add_argument("--seed", type=int)
        s.add_argument("--out-dir")
        s.set_defaults(func=fn)

    s = sub.add_parser("report", help="summarize a sweep or remap CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, IngestionError, EmptyPriorError, UnsupportedError,
            OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeoprivError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAGGED


if __name__ == "__main__":
    sys.exit(main())
