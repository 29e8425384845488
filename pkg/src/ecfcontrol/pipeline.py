"""End-to-end run: samples to tables to program to solution to rollouts.

Stages execute in a fixed order: build the stacked sample set, pick the
smoothing bandwidth, then per constraint row project, invert to a CDF
table and fit the concave under-approximation; estimate moments, assemble
and solve the risk-allocated QP, and finally check the returned inputs by
Monte Carlo. Every stage is timed and recorded in a manifest that captures
all effective parameters and seeds, so a run is reproducible from its
manifest alone.
"""

import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import PolytopeConstraints, concatenate
from .ecf import dkw_margin, moments, project, select_bandwidth
from .errors import PipelineError
from .inversion import invert, write_cdf_csv
from .montecarlo import DisturbanceModel
from .montecarlo import validate as mc_validate
from .montecarlo import write_mc_report, write_trajectory_stats
from .program import (apply_confidence_margin, assemble, expand_cost,
                      solve_chance_program)
from .pwa import PwaUnderApprox, under_approximate, write_pwa_csv
from .scenario import (build_constraints, build_samples, build_system,
                       build_target, per_step_weights, stacked_weights)


class RowResult:
    """Per-constraint-row artifacts: the CDF table and its under-approximation.

    ``kind`` is "inverted" for rows with a genuinely random margin and
    "deterministic" for rows whose disturbance direction is degenerate
    (the constraint is then enforced exactly through the restriction row).
    """

    def __init__(self, index, kind, table, pwa, sigma2, seconds):
        self.index = index
        self.kind = kind
        self.table = table
        self.pwa = pwa
        self.sigma2 = sigma2
        self.seconds = seconds

    def summary(self):
        out = {
            "index": self.index,
            "kind": self.kind,
            "sigma2": self.sigma2,
            "seconds": round(self.seconds, 6),
        }
        if self.pwa is not None:
            out["x_lb"] = self.pwa.x_lb
            out["cap"] = self.pwa.cap
            out["segments"] = int(self.pwa.n_segments)
            if self.table is not None:
                out["max_gap"] = self.pwa.max_gap
        if self.table is not None:
            out["domain"] = [float(self.table.grid[0]),
                             float(self.table.grid[-1])]
        return out


class PipelineResult:
    """Everything a run produced, plus the manifest describing it."""

    def __init__(self, config, sys, csys, constraints, x_d, samples, smoothing,
                 rows, row_indices, moment_estimates, margin, program, solution,
                 report, manifest):
        self.config = config
        self.sys = sys
        self.csys = csys
        self.constraints = constraints
        self.x_d = x_d
        self.samples = samples
        self.smoothing = smoothing
        self.rows = rows
        self.row_indices = row_indices
        self.moments = moment_estimates
        self.margin = margin
        self.program = program
        self.solution = solution
        self.report = report
        self.manifest = manifest

    def solution_payload(self):
        sol = self.solution
        n_in = self.sys.n_inputs
        payload = {
            "status": sol.status,
            "objective": sol.objective if sol.status == "optimal" else None,
            "u_bar": sol.u_bar.tolist(),
            "u_steps": sol.u_bar.reshape(self.sys.horizon, n_in).tolist(),
            "delta_bar": sol.delta_bar.tolist(),
            "risk_spent": sol.risk_spent,
            "iterations": sol.iterations,
            "kkt": sol.kkt.as_dict(),
            "margin_total": self.program.margin_total,
        }
        if sol.diagnostics is not None:
            payload["diagnostics"] = sol.diagnostics
        return payload


def _timed(timings, stage, fn, row=None):
    start = time.perf_counter()
    try:
        out = fn()
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, str(exc), row=row) from exc
    timings[stage] = timings.get(stage, 0.0) + time.perf_counter() - start
    return out


def _validation_model(config, samples):
    if config.disturbance.sampler is not None:
        return DisturbanceModel(config.disturbance.sampler)
    pool = samples.per_step
    return DisturbanceModel([
        {"family": "empirical", "values": pool[:, d].tolist()}
        for d in range(pool.shape[1])
    ])


class EstimateResult:
    """Front half of the pipeline: system, samples, bandwidth, row tables."""

    def __init__(self, config, sys, csys, constraints, x_d, x0, samples,
                 smoothing, model, rows, row_indices, timings):
        self.config = config
        self.sys = sys
        self.csys = csys
        self.constraints = constraints
        self.x_d = x_d
        self.x0 = x0
        self.samples = samples
        self.smoothing = smoothing
        self.model = model
        self.rows = rows
        self.row_indices = row_indices
        self.timings = timings


def estimate_rows(config, rows=None, seed=None, with_pwa=True):
    """Run the estimation stages: samples, bandwidth, per-row CDF tables.

    With ``with_pwa`` the concave under-approximation is fitted per row as
    well; without it only inversion runs (rows with a degenerate direction
    still carry their synthetic flat segment, since it encodes the
    deterministic threshold).
    """
    if seed is not None:
        config = config.model_copy(deep=True)
        config.disturbance.seed = int(seed)
        config.validation.seed = int(seed) + 1

    timings = {}

    def setup():
        sys = build_system(config)
        con = build_constraints(config, sys)
        x_d = build_target(config, sys)
        x0 = np.asarray(config.x0, dtype=float)
        if x0.shape != (sys.n_states,):
            raise PipelineError("setup",
                                f"x0 must have length {sys.n_states}, got "
                                f"{x0.shape[0]}")
        return sys, concatenate(sys), con, x_d, x0

    sys, csys, con_all, x_d, x0 = _timed(timings, "setup", setup)

    if rows is None:
        row_indices = list(range(con_all.n_rows))
        con = con_all
    else:
        row_indices = sorted(set(int(r) for r in rows))
        if not row_indices:
            raise PipelineError("setup", "row subset is empty")
        if row_indices[0] < 0 or row_indices[-1] >= con_all.n_rows:
            raise PipelineError(
                "setup", f"row subset out of range 0..{con_all.n_rows - 1}")
        con = PolytopeConstraints(con_all.P[row_indices], con_all.q[row_indices])

    samples = _timed(timings, "samples", lambda: build_samples(config, sys))
    smoothing = _timed(timings, "bandwidth",
                       lambda: select_bandwidth(samples.per_step, sys.horizon))
    model = _validation_model(config, samples)

    ecf_cfg = config.ecf
    row_results = []
    for j, i in enumerate(row_indices):
        row_start = time.perf_counter()
        direction = csys.Gbar.T @ con.P[j]
        projected = _timed(timings, "project",
                           lambda: project(samples, smoothing, direction),
                           row=i)
        if projected.sigma2 == 0.0 and np.ptp(projected.y) == 0.0:
            # degenerate direction: the margin is a known constant, so the
            # row is enforced exactly through its restriction
            threshold = float(projected.y[0])
            pwa = PwaUnderApprox([0.0], [1.0], x_lb=threshold, eps=ecf_cfg.eps)
            row_results.append(RowResult(i, "deterministic", None, pwa,
                                         0.0, time.perf_counter() - row_start))
            continue
        table = _timed(timings, "invert",
                       lambda: invert(projected, n_points=ecf_cfg.n_grid,
                                      quad_tol=ecf_cfg.quad_tol), row=i)
        pwa = None
        if with_pwa:
            pwa = _timed(
                timings, "approximate",
                lambda: under_approximate(table, eps=ecf_cfg.eps,
                                          max_segments=ecf_cfg.max_segments),
                row=i)
        row_results.append(RowResult(i, "inverted", table, pwa,
                                     projected.sigma2,
                                     time.perf_counter() - row_start))

    return EstimateResult(config, sys, csys, con, x_d, x0, samples, smoothing,
                          model, row_results, row_indices, timings)


def run_pipeline(config, rows=None, apply_margin=None, seed=None):
    """Execute the full pipeline for one scenario.

    ``rows`` restricts processing to a subset of constraint rows (global
    indices) for debugging; ``apply_margin`` overrides the config's margin
    switch; ``seed`` overrides both the sample seed and (plus one) the
    validation seed. Returns a PipelineResult; artifacts are written
    separately by write_artifacts.
    """
    total_start = time.perf_counter()
    est = estimate_rows(config, rows=rows, seed=seed)
    config = est.config
    margin_on = config.ecf.margin if apply_margin is None else bool(apply_margin)
    timings = est.timings
    ecf_cfg = config.ecf
    sys, csys, con = est.sys, est.csys, est.constraints
    x_d, x0, samples, smoothing = est.x_d, est.x0, est.samples, est.smoothing
    model, row_results, row_indices = est.model, est.rows, est.row_indices

    moment_estimates = _timed(
        timings, "moments",
        lambda: moments(samples, smoothing,
                        debias_smoothing=ecf_cfg.debias_smoothing))

    def build_program():
        Q_st, R_st = stacked_weights(config, sys)
        cost = expand_cost(csys, x0, x_d, Q_st, R_st, moment_estimates,
                           n_risk=con.n_rows)
        return assemble(csys, x0, con, [r.pwa for r in row_results],
                        config.delta, cost, sys.u_min, sys.u_max)

    program = _timed(timings, "assemble", build_program)

    margin = None
    if margin_on:
        margin = dkw_margin(samples.n_samples, alpha=ecf_cfg.alpha,
                            eps_D=ecf_cfg.eps_d, eps=ecf_cfg.eps)
        program = _timed(timings, "margin",
                         lambda: apply_confidence_margin(program, margin))

    solution = _timed(timings, "solve", lambda: solve_chance_program(program))

    report = None
    if solution.status == "optimal":
        Qs, Rs = per_step_weights(config, sys)
        val = config.validation
        report = _timed(
            timings, "validate",
            lambda: mc_validate(sys, x0, solution.u_bar, model, con,
                                x_d=x_d, Q=Qs, R=Rs, n_runs=val.n_rollouts,
                                seed=val.seed, chunk_size=val.chunk_size))

    timings["total"] = time.perf_counter() - total_start

    manifest = {
        "name": config.name,
        "version": __version__,
        "config": config.model_dump(),
        "overrides": {
            "rows": None if rows is None else row_indices,
            "margin": margin_on,
            "seed": seed,
        },
        "effective": {
            "n_samples": samples.n_samples,
            "n_constraint_rows": con.n_rows,
            "bandwidth_diag": np.diag(smoothing.sigma).tolist(),
        },
        "rows": [r.summary() for r in row_results],
        "margin": None if margin is None else {
            "alpha": margin.alpha, "eps_E": margin.eps_E,
            "eps_D": margin.eps_D, "eps": margin.eps, "total": margin.total,
        },
        "solution": {
            "status": solution.status,
            "objective": solution.objective,
            "iterations": solution.iterations,
            "risk_spent": solution.risk_spent,
            "kkt": solution.kkt.as_dict(),
        },
        "validation": None if report is None else {
            "n_runs": report.n_runs,
            "joint_rate": report.joint_rate,
            "wilson_95": [report.ci_low, report.ci_high],
            "mean_cost": report.mean_cost,
            "seed": config.validation.seed,
        },
        "timings": {k: round(v, 6) for k, v in timings.items()},
    }
    if solution.status == "infeasible":
        caps = np.array([r.pwa.cap for r in row_results])
        forced = np.maximum(0.0, 1.0 - caps + program.margin_total)
        manifest["infeasibility"] = {
            "risk_forced_by_caps": float(forced.sum()),
            "risk_budget": config.delta,
            "solver": solution.diagnostics,
        }

    return PipelineResult(config=config, sys=sys, csys=csys, constraints=con,
                          x_d=x_d, samples=samples, smoothing=smoothing,
                          rows=row_results, row_indices=row_indices,
                          moment_estimates=moment_estimates, margin=margin,
                          program=program, solution=solution, report=report,
                          manifest=manifest)


def write_artifacts(result, out_dir):
    """Write the fixed artifact set; returns the paths written.

    Layout: manifest.json, solution.json, cdf_row_<i>.csv and
    pwa_row_<i>.csv per processed row (deterministic rows have no CDF
    table), and mc_report.json plus trajectory_stats.csv when validation
    ran.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, writer):
        path = out / name
        writer(path)
        written.append(path)

    emit("manifest.json", lambda p: p.write_text(
        json.dumps(result.manifest, indent=2) + "\n"))
    emit("solution.json", lambda p: p.write_text(
        json.dumps(result.solution_payload(), indent=2) + "\n"))
    for row in result.rows:
        if row.table is not None:
            emit(f"cdf_row_{row.index}.csv",
                 lambda p, t=row.table: write_cdf_csv(t, p))
        emit(f"pwa_row_{row.index}.csv",
             lambda p, w=row.pwa: write_pwa_csv(w, p))
    if result.report is not None:
        emit("mc_report.json", lambda p: write_mc_report(result.report, p))
        emit("trajectory_stats.csv",
             lambda p: write_trajectory_stats(result.report, p))
    return written
