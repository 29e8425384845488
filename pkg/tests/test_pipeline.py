import json

import numpy as np
import numpy.testing as npt
import pytest

from ecfcontrol.errors import PipelineError, ToleranceError
from ecfcontrol.pipeline import run_pipeline, write_artifacts
from ecfcontrol.scenario import parse_scenario


def _integrator_config(**overrides):
    raw = {
        "name": "integrator-test",
        "system": {"A": [[1.0, 0.25], [0.0, 1.0]],
                   "B": [[0.03125], [0.25]],
                   "G": [[1.0, 0.0], [0.0, 1.0]],
                   "horizon": 10, "dt": 0.25,
                   "u_min": -100.0, "u_max": 100.0},
        "x0": [0.0, 0.0],
        "x_d": [50.0, 0.0],
        "cost": {"Q": 10.0, "R": 0.01},
        "constraints": {"bands": [{"coord": 0, "lower": [-2.0, -50.0],
                                   "upper": [2.0, 50.0]}]},
        "delta": 0.2,
        "ecf": {"n_samples": 500, "n_grid": 150},
        "disturbance": {"sampler": [
            {"family": "uniform", "low": -5.0, "high": 5.0},
            {"family": "gamma", "shape": 8.0, "scale": 0.5, "factor": 0.005},
        ], "seed": 0},
        "validation": {"n_rollouts": 2000, "seed": 1},
    }
    raw.update(overrides)
    return parse_scenario(raw)


def _scalar_lq_config(**overrides):
    raw = {
        "name": "lq-degenerate",
        "system": {"A": [[1.0]], "B": [[1.0]], "G": [[0.0]],
                   "horizon": 3, "u_min": -10.0, "u_max": 10.0},
        "x0": [0.0],
        "x_d": [2.0],
        "cost": {"Q": 1.0, "R": 1.0},
        "constraints": {},
        "disturbance": {"sampler": [{"family": "gaussian", "mean": 0.0,
                                     "std": 1.0}]},
        "ecf": {"n_samples": 50},
        "validation": {"n_rollouts": 200, "seed": 3},
    }
    raw.update(overrides)
    return parse_scenario(raw)


class TestFullRun:
    def test_integrator_run_end_to_end(self):
        result = run_pipeline(_integrator_config())
        assert result.solution.status == "optimal"
        assert result.solution.u_bar.shape == (10,)
        assert result.solution.risk_spent <= 0.2 + 1e-8
        assert len(result.rows) == 20
        assert all(r.kind == "inverted" for r in result.rows)
        for r in result.rows:
            assert r.pwa.n_segments <= 21
            assert r.pwa.max_gap <= 1e-3
        assert result.report is not None
        # loose check here; the acceptance run uses full sample counts
        assert result.report.joint_rate >= 0.7
        man = result.manifest
        assert man["solution"]["status"] == "optimal"
        assert man["timings"]["total"] > 0
        assert len(man["rows"]) == 20
        assert man["effective"]["n_samples"] == 500

    def test_artifact_layout(self, tmp_path):
        result = run_pipeline(_integrator_config())
        written = write_artifacts(result, tmp_path)
        names = {p.name for p in written}
        assert "manifest.json" in names
        assert "solution.json" in names
        assert "mc_report.json" in names
        assert "trajectory_stats.csv" in names
        for i in range(20):
            assert f"cdf_row_{i}.csv" in names
            assert f"pwa_row_{i}.csv" in names
        sol = json.loads((tmp_path / "solution.json").read_text())
        assert sol["status"] == "optimal"
        assert len(sol["u_bar"]) == 10
        assert len(sol["u_steps"]) == 10
        assert len(sol["delta_bar"]) == 20
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["config"]["system"]["horizon"] == 10
        stats = np.loadtxt(tmp_path / "trajectory_stats.csv", delimiter=",",
                           skiprows=1)
        assert stats.shape == (11, 5)

    def test_manifest_reproducible(self):
        a = run_pipeline(_integrator_config())
        b = run_pipeline(_integrator_config())
        ma = dict(a.manifest)
        mb = dict(b.manifest)
        ma.pop("timings")
        mb.pop("timings")
        ma["rows"] = [{k: v for k, v in r.items() if k != "seconds"}
                      for r in ma["rows"]]
        mb["rows"] = [{k: v for k, v in r.items() if k != "seconds"}
                      for r in mb["rows"]]
        assert json.dumps(ma, sort_keys=True) == json.dumps(mb, sort_keys=True)

    def test_seed_override_recorded_and_effective(self):
        a = run_pipeline(_integrator_config(), seed=123)
        assert a.manifest["overrides"]["seed"] == 123
        assert a.manifest["config"]["disturbance"]["seed"] == 123
        assert a.manifest["config"]["validation"]["seed"] == 124
        b = run_pipeline(_integrator_config(), seed=124)
        assert not np.array_equal(a.samples.per_step, b.samples.per_step)


class TestDegenerateAndSubsets:
    def test_zero_gain_reduces_to_lq_tracking(self):
        result = run_pipeline(_scalar_lq_config())
        assert result.solution.status == "optimal"
        npt.assert_allclose(result.solution.delta_bar, 0.0, atol=1e-12)
        H = result.program.H[:3, :3]
        f = result.program.f[:3]
        u_lq = np.linalg.solve(2.0 * H, -f)
        npt.assert_allclose(result.solution.u_bar, u_lq, atol=1e-6)
        assert result.report.joint_rate == 1.0

    def test_zero_gain_with_constraints_is_deterministic(self):
        cfg = _scalar_lq_config(
            constraints={"bands": [{"coord": 0, "upper": [0.0, 1.5]}]})
        result = run_pipeline(cfg)
        assert result.solution.status == "optimal"
        assert all(r.kind == "deterministic" for r in result.rows)
        assert all(r.table is None for r in result.rows)
        npt.assert_allclose(result.solution.delta_bar, 0.0, atol=1e-12)
        # hard bound respected by the deterministic trajectory
        assert result.report.joint_rate == 1.0
        assert result.report.state_mean[1:, 0].max() <= 1.5 + 1e-7

    def test_row_subset(self, tmp_path):
        result = run_pipeline(_integrator_config(), rows=[0, 3, 7])
        assert result.row_indices == [0, 3, 7]
        assert [r.index for r in result.rows] == [0, 3, 7]
        assert result.program.n_risk == 3
        assert result.solution.delta_bar.shape == (3,)
        written = write_artifacts(result, tmp_path)
        names = {p.name for p in written}
        assert "cdf_row_3.csv" in names and "cdf_row_1.csv" not in names

    def test_row_subset_out_of_range(self):
        with pytest.raises(PipelineError, match="setup"):
            run_pipeline(_integrator_config(), rows=[99])


class TestFailureModes:
    def test_infeasible_scenario_reports_diagnostics(self):
        cfg = _scalar_lq_config(
            system={"A": [[1.0]], "B": [[1.0]], "G": [[1.0]],
                    "horizon": 2, "u_min": -10.0, "u_max": 10.0},
            x_d=[0.0],
            constraints={"bands": [{"coord": 0, "lower": [0.0, -0.1],
                                    "upper": [0.0, 0.1]}]},
            disturbance={"sampler": [{"family": "uniform", "low": -5.0,
                                      "high": 5.0}]},
            ecf={"n_samples": 300, "n_grid": 120},
        )
        result = run_pipeline(cfg)
        assert result.solution.status == "infeasible"
        assert result.report is None
        info = result.manifest["infeasibility"]
        assert info["risk_budget"] == 0.2
        assert "risk_forced_by_caps" in info

    def test_stage_error_carries_stage_and_row(self):
        cfg = _integrator_config(ecf={"n_samples": 100, "n_grid": 80,
                                      "eps": 1e-9})
        with pytest.raises(PipelineError, match=r"stage approximate, row 0"):
            run_pipeline(cfg)
        try:
            run_pipeline(cfg)
        except PipelineError as exc:
            assert exc.stage == "approximate"
            assert exc.row == 0
            assert isinstance(exc.__cause__, ToleranceError)

    def test_margin_override(self):
        # two-row subset keeps the tightened program inside the risk budget
        base = run_pipeline(_integrator_config(), rows=[0, 10])
        tight = run_pipeline(_integrator_config(), rows=[0, 10],
                             apply_margin=True)
        assert base.manifest["margin"] is None
        assert tight.manifest["margin"] is not None
        assert tight.manifest["margin"]["total"] > 0
        assert tight.program.margin_total > 0
        assert tight.solution.status == "optimal"
        assert tight.solution.objective >= base.solution.objective - 1e-6
