"""HTTP facade over the pipeline, plus the op layer the CLI shares.

The service is stateless: every request carries a complete scenario config
(or raw arrays) and the response carries everything the caller needs to
write artifacts on its own side. Endpoints are thin wrappers around the
``op_*`` functions, which the CLI calls directly when no server is given,
so local and remote runs produce identical payloads.

One caveat for remote use: config fields that point at CSV files are
resolved on the machine that parses them, so a remote server only sees
paths that exist in its own filesystem. Inline the matrices (or use a
sampler block) when posting configs to a server.
"""

from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from . import __version__
from .ecf import moments, select_bandwidth
from .errors import ConfigurationError, DomainError, PipelineError
from .inversion import CdfTable
from .montecarlo import McReport
from .montecarlo import validate as mc_validate
from .pipeline import _validation_model, estimate_rows, run_pipeline
from .pwa import PwaUnderApprox, under_approximate
from .scenario import (ScenarioConfig, build_constraints, build_samples,
                       build_system, build_target, per_step_weights)


class _Payload(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CdfTablePayload(_Payload):
    grid: list[float]
    values: list[float]
    quad_tol: float

    @classmethod
    def from_table(cls, table):
        return cls(grid=table.grid.tolist(), values=table.values.tolist(),
                   quad_tol=table.quad_tol)

    def to_table(self):
        return CdfTable(self.grid, self.values, self.quad_tol)


class PwaPayload(_Payload):
    slopes: list[float]
    intercepts: list[float]
    x_lb: float
    eps: float
    max_gap: Optional[float] = None

    @classmethod
    def from_pwa(cls, pwa):
        return cls(slopes=pwa.slopes.tolist(),
                   intercepts=pwa.intercepts.tolist(),
                   x_lb=pwa.x_lb, eps=pwa.eps, max_gap=pwa.max_gap)

    def to_pwa(self):
        return PwaUnderApprox(self.slopes, self.intercepts, x_lb=self.x_lb,
                              eps=self.eps, max_gap=self.max_gap)


class RowPayload(_Payload):
    index: int
    kind: Literal["inverted", "deterministic"]
    sigma2: float
    seconds: float
    table: Optional[CdfTablePayload] = None
    pwa: Optional[PwaPayload] = None

    @classmethod
    def from_row(cls, row):
        table = None if row.table is None else CdfTablePayload.from_table(row.table)
        pwa = None if row.pwa is None else PwaPayload.from_pwa(row.pwa)
        return cls(index=row.index, kind=row.kind, sigma2=row.sigma2,
                   seconds=row.seconds, table=table, pwa=pwa)


class McReportPayload(_Payload):
    n_runs: int
    joint_rate: float
    ci_low: float
    ci_high: float
    row_rates: list[float]
    mean_cost: Optional[float] = None
    cost_se: Optional[float] = None
    per_step_cost: Optional[list[float]] = None
    state_mean: list[list[float]]
    state_std: list[list[float]]
    seed: int

    @classmethod
    def from_report(cls, report):
        return cls(**report.to_dict())

    def to_report(self):
        return McReport.from_dict(self.model_dump())


class SolveRequest(_Payload):
    config: ScenarioConfig
    rows: Optional[list[int]] = None
    margin: Optional[bool] = None
    seed: Optional[int] = None


class SolveResponse(_Payload):
    status: str
    manifest: dict
    solution: dict
    rows: list[RowPayload]
    report: Optional[McReportPayload] = None


class EstimateRequest(_Payload):
    config: ScenarioConfig
    rows: Optional[list[int]] = None
    seed: Optional[int] = None
    with_pwa: bool = True


class EstimateResponse(_Payload):
    n_samples: int
    bandwidth_diag: list[float]
    rows: list[RowPayload]


class ApproximateRequest(_Payload):
    grid: list[float]
    values: list[float]
    quad_tol: float = 1e-7
    eps: float = 1e-3
    max_segments: int = 20


class ApproximateResponse(_Payload):
    pwa: PwaPayload
    n_segments: int
    max_gap: float


class ValidateRequest(_Payload):
    config: ScenarioConfig
    u_bar: list[float]
    n_rollouts: Optional[int] = None
    seed: Optional[int] = None


class ValidateResponse(_Payload):
    report: McReportPayload


class MomentsRequest(_Payload):
    config: ScenarioConfig
    seed: Optional[int] = None


class MomentsResponse(_Payload):
    mean: list[float]
    second: list[float]
    cov_diag: list[float]
    n_samples: int
    bandwidth_diag: list[float]


def op_solve(req):
    result = run_pipeline(req.config, rows=req.rows, apply_margin=req.margin,
                          seed=req.seed)
    report = (None if result.report is None
              else McReportPayload.from_report(result.report))
    return SolveResponse(status=result.solution.status,
                         manifest=result.manifest,
                         solution=result.solution_payload(),
                         rows=[RowPayload.from_row(r) for r in result.rows],
                         report=report)


def op_estimate(req):
    est = estimate_rows(req.config, rows=req.rows, seed=req.seed,
                        with_pwa=req.with_pwa)
    return EstimateResponse(n_samples=est.samples.n_samples,
                            bandwidth_diag=np.diag(est.smoothing.sigma).tolist(),
                            rows=[RowPayload.from_row(r) for r in est.rows])


def op_approximate(req):
    table = CdfTable(req.grid, req.values, req.quad_tol)
    pwa = under_approximate(table, eps=req.eps, max_segments=req.max_segments)
    return ApproximateResponse(pwa=PwaPayload.from_pwa(pwa),
                               n_segments=int(pwa.n_segments),
                               max_gap=pwa.max_gap)


def op_validate(req):
    config = req.config
    if req.seed is not None or req.n_rollouts is not None:
        config = config.model_copy(deep=True)
        if req.seed is not None:
            config.validation.seed = int(req.seed)
        if req.n_rollouts is not None:
            config.validation.n_rollouts = int(req.n_rollouts)
    sys = build_system(config)
    u_bar = np.asarray(req.u_bar, dtype=float)
    expected = sys.n_inputs * sys.horizon
    if u_bar.shape != (expected,):
        raise ConfigurationError(
            f"u_bar must have length {expected}, got {u_bar.shape}")
    con = build_constraints(config, sys)
    x_d = build_target(config, sys)
    Q, R = per_step_weights(config, sys)
    samples = build_samples(config, sys)
    model = _validation_model(config, samples)
    report = mc_validate(sys, np.asarray(config.x0, dtype=float), u_bar,
                         model, con, x_d=x_d, Q=Q, R=R,
                         n_runs=config.validation.n_rollouts,
                         seed=config.validation.seed,
                         chunk_size=config.validation.chunk_size)
    return ValidateResponse(report=McReportPayload.from_report(report))


def op_moments(req):
    config = req.config
    if req.seed is not None:
        config = config.model_copy(deep=True)
        config.disturbance.seed = int(req.seed)
    sys = build_system(config)
    samples = build_samples(config, sys)
    smoothing = select_bandwidth(samples.per_step, sys.horizon)
    est = moments(samples, smoothing,
                  debias_smoothing=config.ecf.debias_smoothing)
    return MomentsResponse(mean=est.mean.tolist(), second=est.second.tolist(),
                           cov_diag=est.cov_diag.tolist(),
                           n_samples=samples.n_samples,
                           bandwidth_diag=np.diag(smoothing.sigma).tolist())


def _client_fault(exc):
    if isinstance(exc, (ConfigurationError, DomainError)):
        return True
    if isinstance(exc, PipelineError):
        cause = exc.__cause__
        return cause is None or isinstance(cause,
                                           (ConfigurationError, DomainError))
    return False


def create_app():
    """Build the FastAPI app; kept in a factory so imports stay cheap."""
    from fastapi import FastAPI, HTTPException

    app = FastAPI(title="ecfcontrol", version=__version__)

    def guard(op, req):
        try:
            return op(req)
        except (ConfigurationError, DomainError, PipelineError) as exc:
            code = 400 if _client_fault(exc) else 500
            raise HTTPException(status_code=code, detail=str(exc)) from exc

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    @app.post("/solve", response_model=SolveResponse)
    def solve(req: SolveRequest):
        return guard(op_solve, req)

    @app.post("/estimate", response_model=EstimateResponse)
    def estimate(req: EstimateRequest):
        return guard(op_estimate, req)

    @app.post("/approximate", response_model=ApproximateResponse)
    def approximate(req: ApproximateRequest):
        return guard(op_approximate, req)

    @app.post("/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest):
        return guard(op_validate, req)

    @app.post("/moments", response_model=MomentsResponse)
    def get_moments(req: MomentsRequest):
        return guard(op_moments, req)

    return app
