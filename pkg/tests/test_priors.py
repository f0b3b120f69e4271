import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geopriv.errors import ConfigError, EmptyPriorError, IngestionError
from geopriv.experiment import DEMO_REGION, bundled_checkins_path
from geopriv.grid import GeoGrid, build_grid
from geopriv.mechanism import DiscreteMechanism
from geopriv.priors import (CheckIn, Prior, build_prior, expected_loss_discrete,
                            gaussian_mixture_prior, parse_checkins)

GRID = build_grid(DEMO_REGION, 4, 3)


def checkins_in_cells(user, cells, grid=GRID):
    out = []
    for c in cells:
        lat, lon = grid.region.to_latlon(grid.centers[c])
        out.append(CheckIn(user, "2010-01-01T00:00:00Z", float(lat), float(lon), c))
    return out


class TestParse:
    def test_gowalla_row(self):
        rows, rep = parse_checkins(io.StringIO("196514\t2010-07-24T13:45:06Z\t53.36\t-2.27\t145064\n"))
        assert rows == [CheckIn(196514, "2010-07-24T13:45:06Z", 53.36, -2.27, 145064)]
        assert rep.parsed == 1 and rep.malformed == []

    def test_malformed_reported(self):
        text = ("1\t2010-07-24T13:45:06Z\t34.0\t-118.4\t10\n"
                "2\t2010-07-24T13:45:06Z\tabc\t-118.4\t11\n"
                "3\t2010-07-24T13:45:06Z\t34.0\n")
        rows, rep = parse_checkins(io.StringIO(text))
        assert [r.user_id for r in rows] == [1]
        assert [line for line, _ in rep.malformed] == [2, 3]

    def test_comma_separated(self):
        rows, _ = parse_checkins(io.StringIO("7,2010-01-01T00:00:00Z,34.0,-118.4,3\n"))
        assert rows[0].user_id == 7

    def test_empty(self):
        with pytest.raises(IngestionError):
            parse_checkins(io.StringIO(""))

    def test_all_malformed(self):
        with pytest.raises(IngestionError):
            parse_checkins(io.StringIO("x\ty\n"))

    def test_bundled_sample(self):
        rows, rep = parse_checkins(bundled_checkins_path())
        assert len(rows) == 100 and rep.malformed == []


class TestBuildPrior:
    def test_single_cell(self):
        prior, stats = build_prior(checkins_in_cells(5, [7] * 4), GRID, 5)
        expected = np.zeros(12)
        expected[7] = 1.0
        np.testing.assert_array_equal(prior.weights, expected)
        assert stats.dropped == 0

    def test_counts(self):
        prior, _ = build_prior(checkins_in_cells(5, [0, 0, 0, 5]), GRID, 5)
        assert prior.weights[0] == pytest.approx(0.75)
        assert prior.weights[5] == pytest.approx(0.25)

    def test_out_of_region_dropped(self):
        rows = checkins_in_cells(5, [1, 2]) + [CheckIn(5, "t", 40.0, -100.0, 0)]
        prior, stats = build_prior(rows, GRID, 5)
        assert (stats.total, stats.in_region, stats.dropped) == (3, 2, 1)
        assert prior.weights.sum() == pytest.approx(1.0)

    def test_absent_user(self):
        with pytest.raises(EmptyPriorError):
            build_prior(checkins_in_cells(5, [1]), GRID, 6)

    def test_all_outside(self):
        with pytest.raises(EmptyPriorError):
            build_prior([CheckIn(5, "t", 40.0, -100.0, 0)], GRID, 5)

    def test_bundled_fine_grid(self):
        rows, _ = parse_checkins(bundled_checkins_path())
        fine = build_grid(DEMO_REGION, 40, 30)
        for user in {r.user_id for r in rows}:
            try:
                prior, _ = build_prior(rows, fine, user)
            except EmptyPriorError:
                continue
            assert prior.weights.sum() == pytest.approx(1.0, abs=1e-12)
            assert prior.support.size <= fine.n_cells

    def test_csv_round_trip(self, tmp_path):
        prior = gaussian_mixture_prior(GRID, [[3, 3]], [4.0])
        prior.to_csv(tmp_path / "p.csv")
        np.testing.assert_allclose(Prior.from_csv(tmp_path / "p.csv", GRID).weights, prior.weights)

    def test_size_mismatch(self):
        with pytest.raises(ConfigError):
            Prior(np.ones(3), GRID)


class TestExpectedLoss:
    def test_identity(self):
        g = GeoGrid(15.0, 5.0, 3, 1)
        d = np.abs(np.subtract.outer(np.arange(3), np.arange(3))) * 5.0
        assert expected_loss_discrete(DiscreteMechanism.identity(3), Prior.uniform(g), d) == 0.0

    def test_collapse(self):
        d = np.array([[0.0, 7.0], [7.0, 0.0]])
        k = np.array([[1.0, 0.0], [1.0, 0.0]])
        assert expected_loss_discrete(k, np.array([0.5, 0.5]), d) == pytest.approx(3.5)

    def test_uniform_mean(self):
        g = np.random.default_rng(1)
        L = g.uniform(0, 10, size=(6, 6))
        val = expected_loss_discrete(DiscreteMechanism.uniform(6), np.full(6, 1 / 6), L)
        assert val == pytest.approx(L.mean())

    def test_mismatch(self):
        with pytest.raises(ConfigError):
            expected_loss_discrete(np.eye(2), np.array([0.5, 0.5]), np.zeros((3, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_expected_loss_monotone_in_loss_matrix(seed):
    g = np.random.default_rng(seed)
    k = g.dirichlet(np.ones(5), size=5)
    pi = g.dirichlet(np.ones(5))
    L = g.uniform(0, 5, size=(5, 5))
    bigger = L + g.uniform(0, 1, size=(5, 5))
    assert expected_loss_discrete(k, pi, bigger) >= expected_loss_discrete(k, pi, L)
