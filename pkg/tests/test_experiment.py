import json
import math

import numpy as np
import pytest

from geopriv import experiment
from geopriv.errors import ConfigError, SolverError
from geopriv.experiment import (SWEEP_COLUMNS, ExperimentConfig, load_priors, read_rows, report,
                                run_remap_comparison, run_sweep_comparison, write_report, write_rows)
from geopriv.grid import LOS_ANGELES

SYMMETRIC = {"width_km": 15.0, "height_km": 15.0, "cols": 3, "rows": 3}


def small(**kw):
    base = dict(eps_start=1.0, eps_stop=3.0, eps_step=1.0, mc_samples=2000)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_default_epsilons(self):
        eps = ExperimentConfig().epsilons()
        assert eps.size == 29 and eps[0] == 0.2 and eps[-1] == 3.0

    def test_epsilon_block(self):
        cfg = ExperimentConfig.from_dict({"epsilon": {"start": 0.5, "stop": 1.0, "step": 0.25}})
        np.testing.assert_allclose(cfg.epsilons(), [0.5, 0.75, 1.0])

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"epsilonn": 1})

    def test_bad_range(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(eps_start=2.0, eps_stop=1.0)

    def test_full_is_la_8x6(self):
        g = ExperimentConfig.full().build_grid()
        assert (g.cols, g.rows, g.region) == (8, 6, LOS_ANGELES)

    def test_from_json(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"seed": 3, "loss": {"step": 2.0}}))
        cfg = ExperimentConfig.from_json(tmp_path / "c.json")
        assert cfg.seed == 3 and cfg.loss_fn().threshold == 2.0

    def test_missing_json(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(tmp_path / "nope.json")


class TestPriors:
    def test_bundled_busiest_users(self):
        cfg = ExperimentConfig()
        priors = load_priors(cfg, cfg.build_grid())
        assert len(priors) == 4
        for _, p in priors:
            assert p.weights.sum() == pytest.approx(1.0)

    def test_synthetic(self):
        cfg = ExperimentConfig(grid=SYMMETRIC, prior={"synthetic": [
            {"user": "a", "centers_km": [[2.5, 2.5]], "sigmas_km": [3.0]}]})
        [(user, prior)] = load_priors(cfg, cfg.build_grid())
        assert user == "a" and prior.weights.argmax() == 0

    def test_unknown_user(self):
        cfg = ExperimentConfig(prior={"checkins": "bundled", "users": [999999]})
        with pytest.raises(ConfigError):
            load_priors(cfg, cfg.build_grid())


class TestSweep:
    def test_rows_and_laplace_values(self):
        rows = run_sweep_comparison(small())
        assert len(rows) == 3 * 4
        assert list(rows[0]) == SWEEP_COLUMNS
        by_eps = {r["epsilon"]: r for r in rows}
        assert float(by_eps["1.0"]["laplace_loss_km"]) == 2.0
        assert round(float(by_eps["3.0"]["laplace_loss_km"]), 4) == 0.6667
        assert all(r["flagged"] == "0" for r in rows)
        for r in rows:
            assert abs(float(r["laplace_mc_km"]) - float(r["laplace_loss_km"])) < 5 * 1.42 / float(r["epsilon"]) / math.sqrt(2000)

    def test_laplace_bit_equal_and_lp_monotone(self):
        rows = run_sweep_comparison(small(eps_start=0.5, eps_step=0.5))
        for e in {r["epsilon"] for r in rows}:
            same = {(r["laplace_loss_km"], r["laplace_mc_km"]) for r in rows if r["epsilon"] == e}
            assert len(same) == 1
        for u in {r["user"] for r in rows}:
            lp = [float(r["lp_loss_km"]) for r in rows if r["user"] == u]
            assert np.all(np.diff(lp) <= 1e-6)

    def test_solver_failure_flags_and_continues(self, monkeypatch):
        calls = []

        def failing(*a, **k):
            calls.append(1)
            raise SolverError("boom")

        monkeypatch.setattr(experiment, "solve_lp", failing)
        rows = run_sweep_comparison(small())
        assert len(calls) == len(rows) == 12
        assert all(r["flagged"] == "1" and r["lp_loss_km"] == "nan" for r in rows)

    def test_deterministic(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            write_rows(tmp_path / name, run_sweep_comparison(small()), SWEEP_COLUMNS)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestRemap:
    def test_uniform_symmetric_near_tie(self):
        cfg = small(grid=SYMMETRIC, fine_factor=4, prior={"synthetic": [
            {"user": "u", "centers_km": [[7.5, 7.5]], "sigmas_km": [1e6]}]})
        for r in run_remap_comparison(cfg):
            b, n = float(r["bayes_loss_km"]), float(r["nearest_loss_km"])
            assert b <= n + 1e-9
            assert n - b < 0.05 * n

    def test_point_mass_prior(self):
        cfg = small(grid=SYMMETRIC, fine_factor=4, prior={"synthetic": [
            {"user": "p", "centers_km": [[7.5, 7.5]], "sigmas_km": [0.01]}]})
        for r in run_remap_comparison(cfg):
            assert float(r["bayes_loss_km"]) == pytest.approx(0.0, abs=1e-12)

    def test_two_cluster_strict(self):
        cfg = small(eps_start=0.5, eps_stop=0.5, grid={**SYMMETRIC, "width_km": 20.0, "cols": 4},
                    fine_factor=5, prior={"synthetic": [
                        {"user": "c", "centers_km": [[2.5, 2.5], [17.5, 12.5]], "sigmas_km": [2.0, 2.0]}]})
        [r] = run_remap_comparison(cfg)
        assert float(r["bayes_loss_km"]) < float(r["nearest_loss_km"])


def sweep_row(eps, lp, user="u", flagged=False):
    return {"epsilon": repr(eps), "user": user, "laplace_loss_km": repr(2 / eps), "laplace_mc_km": repr(2 / eps),
            "lp_objective_km": repr(lp), "lp_loss_km": "nan" if flagged else repr(lp), "lp_gap": "0.0",
            "flagged": "1" if flagged else "0"}


class TestReport:
    def test_crossover_near_two_over_saturation(self):
        s = 1.9
        eps = np.round(np.arange(0.2, 3.01, 0.1), 10)
        rows = [sweep_row(float(e), min(s, 2 / e) if e < 1 else s * (1 - math.exp(-5 * e))) for e in eps]
        summary, plot = report(rows)
        u = summary["users"]["u"]
        assert u["saturation_km"] == pytest.approx(s, rel=1e-6)
        assert u["predicted_crossover_epsilon"] == pytest.approx(2 / s)
        assert abs(u["crossover_epsilon"] - 2 / s) <= 0.1
        assert len(plot) == eps.size

    def test_single_row(self):
        summary, _ = report([sweep_row(1.0, 1.5)])
        assert "crossover_epsilon" not in summary["users"]["u"]

    def test_all_flagged(self):
        summary, _ = report([sweep_row(1.0, 0, flagged=True), sweep_row(2.0, 0, flagged=True)])
        assert summary["usable_points"] == 0

    def test_empty(self):
        with pytest.raises(ConfigError):
            report([])

    def test_write(self, tmp_path):
        summary, plot = report([sweep_row(1.0, 1.5), sweep_row(2.0, 1.8)])
        js, pc = write_report(summary, plot, tmp_path)
        assert json.loads(js.read_text())["kind"] == "sweep"
        assert read_rows(pc)[0]["epsilon"] == "1.0"
