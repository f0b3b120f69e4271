"""Epsilon sweeps comparing planar Laplace with LP-optimal mechanisms.

Sweep CSV columns (one row per epsilon and user, sorted by epsilon then user):

    epsilon          privacy parameter (km^-1)
    user             prior label
    laplace_loss_km  2 / epsilon, the closed-form Laplace expected loss
    laplace_mc_km    Monte Carlo mean noise magnitude (same seed for all users)
    lp_objective_km  optimum of the LP, loss measured between cell centers
    lp_loss_km       the LP mechanism's loss for a user anywhere in the cell
    lp_gap           optimality gap certificate of the LP solution
    flagged          1 when the LP failed for this row

``lp_loss_km`` averages the distance from a uniform point in the true cell to
the reported center, so it levels off at the mean distance to the center of
a cell (about 1.913 km for 5 km cells) once the LP stops adding noise.

Remap CSV columns: ``epsilon, user, bayes_loss_km, nearest_loss_km``.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import json
import math
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from geopriv.distinguishability import Linear
from geopriv.errors import ConfigError, EmptyPriorError, IngestionError, SolverError
from geopriv.grid import GeoGrid, LOS_ANGELES, Region, build_grid, cell_average_distance_matrix, cell_distance_matrix
from geopriv.laplace import PlanarLaplace, RngState
from geopriv.lp import build_lp, laplace_on_grid, solve_lp
from geopriv.priors import Prior, build_prior, expected_loss_discrete, gaussian_mixture_prior, parse_checkins
from geopriv.radial import LinearLoss, LossFn, StepLoss
from geopriv.remap import Bayesian, Nearest, remapped_mechanism

BUNDLED_CHECKINS = "bundled"

# South-west 20 x 15 km corner of the LA region: a 4 x 3 grid of ~5 km cells.
DEMO_REGION = Region(33.9301, 34.0650, -118.5354, -118.3185)

SWEEP_COLUMNS = ["epsilon", "user", "laplace_loss_km", "laplace_mc_km",
                 "lp_objective_km", "lp_loss_km", "lp_gap", "flagged"]
REMAP_COLUMNS = ["epsilon", "user", "bayes_loss_km", "nearest_loss_km"]


def bundled_checkins_path() -> Path:
    return Path(str(resources.files("geopriv") / "data" / "gowalla_la_sample.txt"))


@dataclasses.dataclass
class ExperimentConfig:
    """Everything a sweep needs; loaded from JSON plus flag overrides.

    Attributes:
        grid: grid config (see :meth:`GeoGrid.from_config`).
        eps_start, eps_stop, eps_step: epsilon sweep in km^-1.
        prior: ``{"checkins": path|"bundled", "users": [...], "n_users": k}``
            or ``{"synthetic": [{"user", "centers_km", "sigmas_km", "weights"}]}``.
        loss: ``"linear"`` or ``{"step": threshold_km}``.
        fine_factor: fine-grid subdivision per coarse cell for remapping.
        lp_tol: optimality tolerance handed to :func:`solve_lp`; 1e-4 km
            (10 cm) is far below plot resolution and lets the first solver
            attempt stand.
    """

    grid: dict = dataclasses.field(default_factory=lambda: {
        **dataclasses.asdict(DEMO_REGION), "cols": 4, "rows": 3})
    eps_start: float = 0.2
    eps_stop: float = 3.0
    eps_step: float = 0.1
    prior: dict = dataclasses.field(default_factory=lambda: {
        "checkins": BUNDLED_CHECKINS, "users": None, "n_users": 4})
    loss: object = "linear"
    seed: int = 7
    mc_samples: int = 20_000
    fine_factor: int = 10
    lp_method: str = "auto"
    lp_tol: float = 1e-4
    jobs: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (self.eps_step > 0):
            raise ConfigError("epsilon step must be positive")
        if not (0 < self.eps_start <= self.eps_stop):
            raise ConfigError("need 0 < epsilon start <= epsilon stop")
        if self.mc_samples < 1 or self.fine_factor < 1 or self.jobs < 1:
            raise ConfigError("mc_samples, fine_factor and jobs must be positive")

    @classmethod
    def full(cls) -> "ExperimentConfig":
        """Full-size setup: the 8 x 6 LA grid with 80 x 60 remap grid."""
        return cls(grid={**dataclasses.asdict(LOS_ANGELES), "cols": 8, "rows": 6})

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw, **overrides)

    @classmethod
    def from_dict(cls, raw: dict, **overrides) -> "ExperimentConfig":
        raw = dict(raw)
        eps = raw.pop("epsilon", None)
        if eps is not None:
            raw.setdefault("eps_start", eps.get("start", 0.2))
            raw.setdefault("eps_stop", eps.get("stop", 3.0))
            raw.setdefault("eps_step", eps.get("step", 0.1))
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - fields
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def epsilons(self) -> np.ndarray:
        count = int(math.floor((self.eps_stop - self.eps_start) / self.eps_step + 1e-9)) + 1
        return np.round(self.eps_start + self.eps_step * np.arange(count), 10)

    def build_grid(self) -> GeoGrid:
        return GeoGrid.from_config(self.grid)

    def loss_fn(self) -> LossFn:
        if self.loss == "linear":
            return LinearLoss()
        if isinstance(self.loss, dict) and "step" in self.loss:
            return StepLoss(float(self.loss["step"]))
        raise ConfigError(f"unsupported loss spec {self.loss!r}")


def load_priors(config: ExperimentConfig, grid: GeoGrid) -> List[Tuple[str, Prior]]:
    """Per-user priors from check-ins or a synthetic mixture spec."""
    spec = config.prior
    if "synthetic" in spec:
        out = []
        for entry in spec["synthetic"]:
            prior = gaussian_mixture_prior(grid, entry["centers_km"], entry["sigmas_km"], entry.get("weights"))
            out.append((str(entry["user"]), prior))
        if not out:
            raise ConfigError("synthetic prior spec lists no users")
        return out
    if "checkins" not in spec:
        raise ConfigError("prior config needs 'checkins' or 'synthetic'")
    path = bundled_checkins_path() if spec["checkins"] == BUNDLED_CHECKINS else Path(spec["checkins"])
    try:
        checkins, _ = parse_checkins(path)
    except (OSError, IngestionError) as exc:
        raise ConfigError(f"cannot load check-ins: {exc}") from None
    users = spec.get("users")
    if not users:
        users = _busiest_users(checkins, grid, int(spec.get("n_users", 4)))
    out = []
    for u in users:
        try:
            prior, _ = build_prior(checkins, grid, int(u))
        except EmptyPriorError as exc:
            raise ConfigError(str(exc)) from None
        out.append((str(u), prior))
    return out


def _busiest_users(checkins, grid: GeoGrid, n: int) -> List[int]:
    """Users with the most in-region check-ins; ties go to the lower id."""
    counts: Dict[int, int] = {}
    for c in checkins:
        if grid.region.contains(c.lat, c.lon):
            counts[c.user_id] = counts.get(c.user_id, 0) + 1
    ranked = sorted(counts, key=lambda u: (-counts[u], u))
    if not ranked:
        raise ConfigError("no check-in falls inside the grid region")
    return ranked[:n]


def _fmt(v: float) -> str:
    return repr(float(v))


def _laplace_mc(eps: float, rng: RngState, samples: int) -> float:
    return float(np.mean(PlanarLaplace(eps).sample(rng, size=samples).magnitude))


def _lp_row(args):
    eps, grid, weights, loss, method, tol = args
    prior = Prior(weights, grid)
    inst = build_lp(grid, prior, Linear(eps), loss)
    sol = solve_lp(inst, tol=tol, method=method)
    return sol.objective, expected_loss_discrete(sol.mechanism, prior, cell_average_distance_matrix(grid)), sol.gap


def run_sweep_comparison(config: ExperimentConfig) -> List[dict]:
    """Laplace versus LP expected loss for every epsilon and user.

    LP failures do not stop the sweep: the row is kept with ``flagged = 1``
    and ``nan`` LP columns.
    """
    grid = config.build_grid()
    priors = load_priors(config, grid)
    loss = config.loss_fn()
    eps_values = config.epsilons()
    streams = RngState(config.seed).split(len(eps_values))
    mc = [_laplace_mc(e, s, config.mc_samples) for e, s in zip(eps_values, streams)]

    tasks = [(float(e), grid, prior.weights, loss, config.lp_method, config.lp_tol)
             for e in eps_values for _, prior in priors]
    results = _run_tasks(_lp_row, tasks, config.jobs)

    rows = []
    it = iter(results)
    for e, m in zip(eps_values, mc):
        for user, _ in priors:
            res = next(it)
            flagged = isinstance(res, Exception)
            obj, lp_loss, gap = (math.nan,) * 3 if flagged else res
            rows.append({
                "epsilon": _fmt(e), "user": user,
                "laplace_loss_km": _fmt(2.0 / e), "laplace_mc_km": _fmt(m),
                "lp_objective_km": _fmt(obj), "lp_loss_km": _fmt(lp_loss),
                "lp_gap": _fmt(gap), "flagged": str(int(flagged)),
            })
    return rows


def _run_tasks(fn, tasks: Sequence, jobs: int) -> list:
    """Run tasks, in order, catching solver failures per task."""
    def safe(t):
        try:
            return fn(t)
        except SolverError as exc:
            return exc
    if jobs <= 1:
        return [safe(t) for t in tasks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, t) for t in tasks]
        out = []
        for f in futures:
            try:
                out.append(f.result())
            except SolverError as exc:
                out.append(exc)
        return out


def run_remap_comparison(config: ExperimentConfig) -> List[dict]:
    """Expected loss of Laplace remapped onto the grid, Bayesian vs nearest.

    The Laplace mechanism is discretized from the coarse cell centers onto a
    grid ``fine_factor`` times finer, then each fine cell is remapped to a
    coarse cell.  Losses are measured between coarse centers.
    """
    coarse = config.build_grid()
    fine = GeoGrid(coarse.width, coarse.height, coarse.cols * config.fine_factor,
                   coarse.rows * config.fine_factor, coarse.region)
    priors = load_priors(config, coarse)
    L = config.loss_fn()(cell_distance_matrix(coarse))
    rows = []
    for e in config.epsilons():
        base = laplace_on_grid(PlanarLaplace(float(e)), fine, inputs=coarse.centers)
        nearest = remapped_mechanism(base, Nearest(), coarse, fine.centers)
        for user, prior in priors:
            bayes = remapped_mechanism(base, Bayesian(prior, L), coarse, fine.centers)
            rows.append({
                "epsilon": _fmt(e), "user": user,
                "bayes_loss_km": _fmt(expected_loss_discrete(bayes, prior, L)),
                "nearest_loss_km": _fmt(expected_loss_discrete(nearest, prior, L)),
            })
    return rows


def write_rows(path, rows: List[dict], columns: Sequence[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(Path(path), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_rows(path) -> List[dict]:
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------- reporting

def report(rows: List[dict]) -> Tuple[dict, List[dict]]:
    """Summarize sweep (or remap) rows.

    Returns a JSON-ready summary and plot rows.  For sweeps the summary holds
    per-user min/max LP loss, a saturation estimate (median of the last three
    usable points), the predicted crossover ``2 / saturation`` and the
    observed crossover: the first epsilon where Laplace loss drops below the
    LP loss.  Crossover fields need at least two usable points.
    """
    if not rows:
        raise ConfigError("report needs at least one row")
    if "bayes_loss_km" in rows[0]:
        return _remap_report(rows)
    users = sorted({r["user"] for r in rows})
    summary = {"kind": "sweep", "users": {}}
    for u in users:
        mine = sorted((r for r in rows if r["user"] == u), key=lambda r: float(r["epsilon"]))
        usable = [r for r in mine if r["flagged"] == "0" and math.isfinite(float(r["lp_loss_km"]))]
        entry = {"points": len(mine), "usable_points": len(usable)}
        if usable:
            lp = np.array([float(r["lp_loss_km"]) for r in usable])
            entry.update(lp_loss_min_km=float(lp.min()), lp_loss_max_km=float(lp.max()),
                         saturation_km=float(np.median(lp[-3:])))
        if len(usable) >= 2:
            entry["predicted_crossover_epsilon"] = 2.0 / entry["saturation_km"]
            cross = [float(r["epsilon"]) for r in usable
                     if float(r["laplace_loss_km"]) < float(r["lp_loss_km"])]
            entry["crossover_epsilon"] = cross[0] if cross else None
        summary["users"][u] = entry
    summary["usable_points"] = sum(e["usable_points"] for e in summary["users"].values())

    plot = []
    for eps in sorted({r["epsilon"] for r in rows}, key=float):
        line = {"epsilon": eps}
        for r in rows:
            if r["epsilon"] == eps:
                line["laplace_loss_km"] = r["laplace_loss_km"]
                line[f"lp_loss_km_{r['user']}"] = r["lp_loss_km"] if r["flagged"] == "0" else "nan"
        plot.append(line)
    return summary, plot


def _remap_report(rows):
    summary = {"kind": "remap", "users": {}}
    for u in sorted({r["user"] for r in rows}):
        mine = [r for r in rows if r["user"] == u]
        b = np.array([float(r["bayes_loss_km"]) for r in mine])
        n = np.array([float(r["nearest_loss_km"]) for r in mine])
        summary["users"][u] = {
            "points": len(mine),
            "bayes_mean_km": float(b.mean()),
            "nearest_mean_km": float(n.mean()),
            "bayes_never_worse": bool(np.all(b <= n + 1e-9)),
            "strictly_better_points": int(np.sum(b < n - 1e-9)),
        }
    plot = []
    for eps in sorted({r["epsilon"] for r in rows}, key=float):
        line = {"epsilon": eps}
        for r in rows:
            if r["epsilon"] == eps:
                line[f"bayes_loss_km_{r['user']}"] = r["bayes_loss_km"]
                line[f"nearest_loss_km_{r['user']}"] = r["nearest_loss_km"]
        plot.append(line)
    return summary, plot


def write_report(summary: dict, plot: List[dict], out_dir) -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    js = out / "summary.json"
    js.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    pc = out / "plot.csv"
    write_rows(pc, plot, list(plot[0].keys()))
    return js, pc
