import math
import re

import numpy as np
import pytest
from scipy import integrate

from geopriv.distinguishability import DRestricted, Linear
from geopriv.errors import ConfigError
from geopriv.grid import GeoGrid, cell_distance_matrix
from geopriv.laplace import PlanarLaplace, RngState
from geopriv.lp import build_lp, check_mechanism_privacy, laplace_on_grid, solve_lp, write_lp_file
from geopriv.mechanism import DiscreteMechanism
from geopriv.priors import Prior, gaussian_mixture_prior
from geopriv.radial import StepLoss

TWO = GeoGrid(10.0, 5.0, 2, 1)   # centers 5 km apart


class TestBuild:
    def test_two_cells(self):
        inst = build_lp(TWO, Prior.uniform(TWO), Linear(0.3))
        assert (inst.n_variables, inst.n_inequalities, inst.n_equalities) == (4, 4, 2)

    def test_48_cells(self):
        g = GeoGrid(40.0, 30.0, 8, 6)
        inst = build_lp(g, Prior.uniform(g), Linear(1.0))
        assert inst.n_inequalities == 108_288 == 47 * 48 ** 2
        assert inst.n_equalities == 48

    def test_drestricted_vacuous(self):
        g = GeoGrid(15.0, 5.0, 3, 1)
        assert build_lp(g, Prior.uniform(g), DRestricted(1.0, 4.0)).n_inequalities == 0

    def test_drestricted_partial(self):
        g = GeoGrid(15.0, 5.0, 3, 1)
        # only the two 5 km neighbour pairs (both orders) are constrained
        assert build_lp(g, Prior.uniform(g), DRestricted(1.0, 6.0)).n_inequalities == 4 * 3

    def test_prior_mismatch(self):
        with pytest.raises(ConfigError):
            build_lp(TWO, np.ones(3) / 3, Linear(1.0))

    def test_explicit_distance_matrix(self):
        d = np.array([[0.0, 5.0], [5.0, 0.0]])
        a = build_lp(d, [0.5, 0.5], Linear(0.3))
        b = build_lp(TWO, Prior.uniform(TWO), Linear(0.3))
        np.testing.assert_allclose(a.A_ub.toarray(), b.A_ub.toarray())
        np.testing.assert_allclose(a.c, b.c)


class TestSolve:
    @pytest.mark.parametrize("method", ["simplex", "highs", "auto"])
    def test_two_cell_closed_form(self, method):
        eps, d = 0.3, 5.0
        sol = solve_lp(build_lp(TWO, Prior.uniform(TWO), Linear(eps)), method=method)
        assert sol.objective == pytest.approx(d / (1 + math.exp(eps * d)), abs=1e-9)
        diag = math.exp(eps * d) / (1 + math.exp(eps * d))
        np.testing.assert_allclose(np.diag(sol.mechanism.matrix), [diag, diag], atol=1e-9)
        assert sol.certified

    def test_eps_zero_single_output(self):
        g = GeoGrid(15.0, 10.0, 3, 2)
        prior = gaussian_mixture_prior(g, [[2.0, 2.0]], [3.0])
        sol = solve_lp(build_lp(g, prior, Linear(0.0)))
        k = sol.mechanism.matrix
        np.testing.assert_allclose(k, np.broadcast_to(k[0], k.shape), atol=1e-9)
        L = cell_distance_matrix(g)
        best = min(prior.weights @ L[:, z] for z in range(g.n_cells))
        assert sol.objective == pytest.approx(best, abs=1e-9)

    def test_large_eps_identity(self):
        g = GeoGrid(15.0, 10.0, 3, 2)
        sol = solve_lp(build_lp(g, Prior.uniform(g), Linear(10.0)))   # eps d = 50
        assert sol.objective == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(sol.mechanism.matrix, np.eye(6), atol=1e-9)

    def test_drestricted_vacuous_is_identity(self):
        g = GeoGrid(15.0, 5.0, 3, 1)
        sol = solve_lp(build_lp(g, Prior.uniform(g), DRestricted(1.0, 4.0)))
        assert sol.objective == pytest.approx(0.0, abs=1e-12)

    def test_step_loss(self):
        g = GeoGrid(10.0, 5.0, 2, 1)
        sol = solve_lp(build_lp(g, Prior.uniform(g), Linear(0.3), StepLoss(1.0)))
        assert sol.objective == pytest.approx(1 / (1 + math.exp(1.5)), abs=1e-9)

    def test_solvers_agree_on_random_instance(self):
        g = GeoGrid(15.0, 10.0, 3, 2)
        prior = Prior(np.random.default_rng(4).dirichlet(np.ones(6)), g)
        inst = build_lp(g, prior, Linear(0.4))
        a, b = solve_lp(inst, method="simplex"), solve_lp(inst, method="highs")
        assert a.objective == pytest.approx(b.objective, abs=1e-8)
        assert a.certified and b.certified

    def test_lower_bound_brackets_objective(self):
        g = GeoGrid(20.0, 15.0, 4, 3)
        prior = Prior(np.random.default_rng(8).dirichlet(np.ones(12)), g)
        sol = solve_lp(build_lp(g, prior, Linear(1.5)), tol=1e-6)
        assert sol.lower_bound <= sol.objective
        assert sol.gap <= 1e-6 * (1 + sol.objective)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            solve_lp(build_lp(TWO, Prior.uniform(TWO), Linear(1.0)), method="magic")


class TestPrivacyCheck:
    def test_solver_output_private(self):
        g = GeoGrid(20.0, 15.0, 4, 3)
        prior = Prior(np.random.default_rng(2).dirichlet(np.ones(12)), g)
        for eps in (0.2, 1.0, 3.0):
            sol = solve_lp(build_lp(g, prior, Linear(eps)), tol=1e-6)
            assert check_mechanism_privacy(sol.mechanism, g, Linear(eps))

    def test_identity_fails(self):
        res = check_mechanism_privacy(DiscreteMechanism.identity(2), TWO, Linear(1.0))
        assert not res
        assert res.worst_excess == math.inf

    def test_uniform_passes(self):
        g = GeoGrid(15.0, 10.0, 3, 2)
        assert check_mechanism_privacy(DiscreteMechanism.uniform(6), g, Linear(0.0))
        assert check_mechanism_privacy(DiscreteMechanism.uniform(6), g, DRestricted(0.0, 1.0))

    def test_excess_value(self):
        k = np.array([[0.9, 0.1], [0.2, 0.8]])
        res = check_mechanism_privacy(k, TWO, Linear(0.1))
        # worst log-ratio is log(0.8 / 0.1) against a budget of 0.5
        assert res.worst_excess == pytest.approx(math.log(8) - 0.5)
        assert res.worst_triple == (1, 0, 1)


def rect_mass_dblquad(eps, p, x0, x1, y0, y1):
    dens = lambda y, x: eps ** 2 / (2 * math.pi) * math.exp(-eps * math.hypot(x - p[0], y - p[1]))
    return integrate.dblquad(dens, x0, x1, y0, y1, epsabs=1e-13, epsrel=1e-11)[0]


class TestLaplaceOnGrid:
    def test_single_cell(self):
        k = laplace_on_grid(PlanarLaplace(1.0), GeoGrid(5.0, 5.0, 1, 1)).matrix
        np.testing.assert_array_equal(k, [[1.0]])

    def test_large_eps_near_identity(self):
        g = GeoGrid(15.0, 10.0, 3, 2)
        k = laplace_on_grid(PlanarLaplace(20.0), g).matrix
        np.testing.assert_allclose(k, np.eye(6), atol=1e-20)

    def test_interior_cell_matches_dblquad(self):
        g = GeoGrid(15.0, 15.0, 3, 3)
        eps = 0.4
        k = laplace_on_grid(PlanarLaplace(eps), g).matrix
        # input cell 0 (center 2.5, 2.5) into the interior cell 4 = [5, 10]^2
        assert k[0, 4] == pytest.approx(rect_mass_dblquad(eps, (2.5, 2.5), 5, 10, 5, 10), rel=1e-9)
        assert k[4, 4] == pytest.approx(rect_mass_dblquad(eps, (7.5, 7.5), 5, 10, 5, 10), rel=1e-9)

    def test_quadrature_vs_monte_carlo(self):
        n = 200_000
        q = laplace_on_grid(PlanarLaplace(0.3), TWO).matrix
        mc = laplace_on_grid(PlanarLaplace(0.3), TWO, method="monte_carlo", samples=n, rng=RngState(5)).matrix
        se = np.sqrt(q * (1 - q) / n)
        assert np.all(np.abs(mc - q) <= 3 * se)

    def test_private(self):
        g = GeoGrid(40.0, 30.0, 8, 6)
        for eps in (0.2, 1.0, 3.0):
            k = laplace_on_grid(PlanarLaplace(eps), g)
            assert check_mechanism_privacy(k, g, Linear(eps))

    def test_coarse_inputs_on_fine_grid_aggregate(self):
        coarse = GeoGrid(20.0, 15.0, 4, 3)
        fine = GeoGrid(20.0, 15.0, 40, 30)
        kf = laplace_on_grid(PlanarLaplace(0.7), fine, inputs=coarse.centers).matrix
        kc = laplace_on_grid(PlanarLaplace(0.7), coarse).matrix
        owner = (np.arange(fine.n_cells) // fine.cols // 10) * coarse.cols + (np.arange(fine.n_cells) % fine.cols) // 10
        agg = np.zeros_like(kc)
        np.add.at(agg.T, owner, kf.T)
        np.testing.assert_allclose(agg, kc, atol=1e-13)

    def test_monte_carlo_needs_rng(self):
        with pytest.raises(ConfigError):
            laplace_on_grid(PlanarLaplace(1.0), TWO, method="monte_carlo")


class TestExport:
    def test_lp_file_structure(self, tmp_path):
        g = GeoGrid(15.0, 5.0, 3, 1)
        inst = build_lp(g, Prior.uniform(g), Linear(0.5))
        write_lp_file(inst, tmp_path / "m.lp")
        text = (tmp_path / "m.lp").read_text()
        assert text.count("\n p") == inst.n_inequalities
        assert len(re.findall(r"^ row\d+:", text, flags=re.M)) == 3
        assert text.rstrip().endswith("End")

    def test_lp_file_solves_with_highspy(self, tmp_path):
        highspy = pytest.importorskip("highspy")
        g = GeoGrid(10.0, 5.0, 2, 1)
        inst = build_lp(g, Prior.uniform(g), Linear(0.3))
        write_lp_file(inst, tmp_path / "m.lp")
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.readModel(str(tmp_path / "m.lp"))
        h.run()
        assert h.getInfo().objective_function_value == pytest.approx(5 / (1 + math.exp(1.5)), abs=1e-9)


def test_privacy_check_non_square():
    coarse = GeoGrid(10.0, 5.0, 2, 1)
    k = np.array([[0.5, 0.3, 0.2], [0.1, 0.3, 0.6]])
    res = check_mechanism_privacy(k, coarse, Linear(0.1))
    # worst ratio is 0.5 / 0.1 in column 0; 0.6 / 0.2 in column 2 is smaller
    assert res.worst_triple == (0, 1, 0)
    assert res.worst_excess == pytest.approx(math.log(5) - 0.5)


def test_objective_non_increasing_in_eps():
    g = GeoGrid(15.0, 15.0, 3, 3)
    prior = Prior(np.random.default_rng(12).dirichlet(np.ones(9)), g)
    objs = [solve_lp(build_lp(g, prior, Linear(e))).objective for e in np.round(np.arange(0.1, 3.01, 0.1), 10)]
    assert np.all(np.diff(objs) <= 1e-8)
