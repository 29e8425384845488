import numpy as np
import numpy.testing as npt
import pytest

from ecfcontrol.ecf import build_trajectory_samples, project, select_bandwidth
from ecfcontrol.errors import (
    ConfigurationError,
    DomainError,
    RestrictionFailureError,
    ToleranceError,
)
from ecfcontrol.inversion import CdfTable, invert
from ecfcontrol.pwa import (
    PwaUnderApprox,
    evaluate_pwa,
    read_pwa_csv,
    under_approximate,
    write_pwa_csv,
)


def _logistic_table(n_points=1000, lo=-8.0, hi=8.0, quad_tol=1e-9):
    return CdfTable.from_function(lambda x: 1.0 / (1.0 + np.exp(-x)),
                                  domain=(lo, hi), n_points=n_points,
                                  quad_tol=quad_tol)


def _gaps(pwa, table):
    mask = table.grid >= pwa.x_lb
    return table.values[mask] - evaluate_pwa(pwa, table.grid[mask])


class TestAffineTable:
    def test_single_chord_plus_flat(self):
        table = CdfTable.from_function(lambda x: x, domain=(0.0, 1.0),
                                       n_points=50, quad_tol=1e-9)
        pwa = under_approximate(table, eps=1e-3, max_segments=20)
        assert pwa.n_segments == 2
        npt.assert_allclose(pwa.slopes, [1.0, 0.0], atol=1e-12)
        npt.assert_allclose(pwa.intercepts, [0.0, 1.0], atol=1e-12)
        assert pwa.x_lb == 0.0
        gaps = _gaps(pwa, table)
        assert gaps.max() <= 1e-12 and gaps.min() >= -1e-15


class TestLogisticTable:
    def test_certificate_holds(self):
        table = _logistic_table()
        pwa = under_approximate(table, eps=1e-3, max_segments=20)
        gaps = _gaps(pwa, table)
        assert gaps.min() >= -1e-12
        assert gaps.max() <= 1e-3
        assert pwa.n_segments <= 21

    def test_slopes_strictly_decreasing_ending_flat(self):
        table = _logistic_table()
        pwa = under_approximate(table, eps=1e-3, max_segments=20)
        assert np.all(np.diff(pwa.slopes) < 0)
        assert pwa.slopes[-1] == 0.0
        npt.assert_allclose(pwa.intercepts[-1], table.values[-1], rtol=0, atol=0)

    def test_restriction_point_near_inflection(self):
        table = _logistic_table()
        pwa = under_approximate(table, eps=1e-3, max_segments=40)
        # concave only for x >= 0; anchors cannot cross far into the convex half
        assert -0.2 <= pwa.x_lb <= 2.0

    def test_budget_binds(self):
        table = _logistic_table()
        full = under_approximate(table, eps=1e-3, max_segments=40)
        tight = under_approximate(table, eps=1e-3, max_segments=3)
        assert tight.n_segments <= 4
        assert tight.x_lb >= full.x_lb
        gaps = _gaps(tight, table)
        assert gaps.min() >= -1e-12 and gaps.max() <= 1e-3

    def test_refinement_does_not_worsen(self):
        table = _logistic_table()
        coarse = under_approximate(table, eps=1e-3, max_segments=200)
        fine = under_approximate(table, eps=5e-4, max_segments=200)
        assert _gaps(fine, table).max() <= _gaps(coarse, table).max() + 1e-12
        assert fine.n_segments >= coarse.n_segments


class TestEmpiricalTable:
    def test_bimodal_certificate(self):
        rng = np.random.default_rng(7)
        pool = np.where(rng.random((1000, 1)) < 0.5,
                        rng.normal(0.0, np.sqrt(0.2), size=(1000, 1)),
                        2.0 * rng.weibull(4.0, size=(1000, 1)))
        samples = build_trajectory_samples(pool, horizon=1)
        sm = select_bandwidth(pool, horizon=1)
        table = invert(project(samples, sm, np.ones(1)), n_points=1000,
                       quad_tol=1e-7)
        pwa = under_approximate(table, eps=1e-3, max_segments=20)
        gaps = _gaps(pwa, table)
        assert gaps.min() >= -1e-12
        assert gaps.max() <= 1e-3
        assert pwa.x_lb < table.grid[-1]


class TestEvaluate:
    def test_min_of_segments(self):
        pwa = PwaUnderApprox(slopes=[1.0, 0.0], intercepts=[0.0, 1.0],
                             x_lb=0.0, eps=1e-3)
        npt.assert_allclose(evaluate_pwa(pwa, 0.5), 0.5)
        npt.assert_allclose(evaluate_pwa(pwa, 2.0), 1.0)
        npt.assert_allclose(evaluate_pwa(pwa, np.array([0.25, 3.0])), [0.25, 1.0])

    def test_flat_beyond_table(self):
        table = _logistic_table()
        pwa = under_approximate(table, eps=1e-3, max_segments=20)
        npt.assert_allclose(evaluate_pwa(pwa, 100.0), table.values[-1])

    def test_below_restriction_raises(self):
        pwa = PwaUnderApprox(slopes=[1.0, 0.0], intercepts=[0.0, 1.0],
                             x_lb=0.0, eps=1e-3)
        with pytest.raises(DomainError):
            evaluate_pwa(pwa, -0.01)


class TestFailureModes:
    def test_convex_to_the_end_raises(self):
        table = CdfTable.from_function(lambda x: np.exp(x - 1.0),
                                       domain=(-5.0, 1.0), n_points=200,
                                       quad_tol=1e-9)
        with pytest.raises(RestrictionFailureError):
            under_approximate(table, eps=1e-3, max_segments=20)

    def test_tolerance_too_tight(self):
        table = CdfTable.from_function(lambda x: x, domain=(0.0, 1.0),
                                       n_points=10, quad_tol=1e-3)
        with pytest.raises(ToleranceError):
            under_approximate(table, eps=1e-3, max_segments=20)

    def test_bad_budget(self):
        table = _logistic_table(n_points=50)
        with pytest.raises(ConfigurationError):
            under_approximate(table, eps=1e-3, max_segments=0)

    def test_two_point_table_is_exact(self):
        table = CdfTable(np.array([0.0, 1.0]), np.array([0.2, 0.8]),
                         quad_tol=1e-9)
        pwa = under_approximate(table, eps=1e-3, max_segments=5)
        assert pwa.x_lb == 0.0
        npt.assert_allclose(evaluate_pwa(pwa, 0.0), 0.2, atol=1e-12)
        npt.assert_allclose(evaluate_pwa(pwa, 1.0), 0.8, atol=1e-12)


class TestValidationAndCsv:
    def test_slope_ordering_enforced(self):
        with pytest.raises(ConfigurationError):
            PwaUnderApprox(slopes=[0.5, 1.0, 0.0], intercepts=[0.0, 0.0, 1.0],
                           x_lb=0.0, eps=1e-3)

    def test_last_slope_must_be_flat(self):
        with pytest.raises(ConfigurationError):
            PwaUnderApprox(slopes=[1.0, 0.5], intercepts=[0.0, 0.0],
                           x_lb=0.0, eps=1e-3)

    def test_csv_round_trip(self, tmp_path):
        table = _logistic_table(n_points=300)
        pwa = under_approximate(table, eps=1e-3, max_segments=10)
        path = tmp_path / "pwa.csv"
        write_pwa_csv(pwa, path)
        back = read_pwa_csv(path)
        npt.assert_allclose(back.slopes, pwa.slopes, rtol=0, atol=0)
        npt.assert_allclose(back.intercepts, pwa.intercepts, rtol=0, atol=0)
        assert back.x_lb == pwa.x_lb
        assert back.eps == pwa.eps
        header = path.read_text().splitlines()[0]
        assert header.startswith("#") and "x_lb=" in header and "eps=" in header
