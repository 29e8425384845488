"""Command line front end.

Subcommands mirror the service endpoints: estimate, approximate, solve,
validate and moments, plus serve to host the HTTP app. Without --server
everything runs in-process; with --server URL the same request is posted
to a running service and artifacts are written locally from the response,
so both modes leave identical files behind.

Exit codes: 0 on success (solve: optimal), 2 when the program is
infeasible, 1 on any error.
"""

import argparse
import json
import sys
from pathlib import Path

from .errors import PipelineError
from .inversion import read_cdf_csv, write_cdf_csv
from .montecarlo import write_mc_report, write_trajectory_stats
from .pwa import write_pwa_csv
from .scenario import load_scenario
from .service import (ApproximateRequest, ApproximateResponse,
                      EstimateRequest, EstimateResponse, MomentsRequest,
                      MomentsResponse, SolveRequest, SolveResponse,
                      ValidateRequest, ValidateResponse, op_approximate,
                      op_estimate, op_moments, op_solve, op_validate)

_TIMEOUT = 600.0


class CliError(RuntimeError):
    pass


def _parse_rows(text):
    if text is None:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise CliError(f"--rows expects comma-separated integers, got {text!r}")


def _post(server, route, request, response_cls):
    import httpx

    url = server.rstrip("/") + route
    try:
        reply = httpx.post(url, json=request.model_dump(mode="json"),
                           timeout=_TIMEOUT)
    except httpx.HTTPError as exc:
        raise CliError(f"request to {url} failed: {exc}")
    if reply.status_code >= 400:
        try:
            detail = reply.json().get("detail", reply.text)
        except Exception:
            detail = reply.text
        raise CliError(f"server returned {reply.status_code}: {detail}")
    return response_cls.model_validate(reply.json())


def _run(server, route, request, op, response_cls):
    if server is None:
        return op(request)
    return _post(server, route, request, response_cls)


def _ensure_out(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def _write_row_files(out, rows):
    for row in rows:
        if row.table is not None:
            write_cdf_csv(row.table.to_table(), out / f"cdf_row_{row.index}.csv")
        if row.pwa is not None:
            write_pwa_csv(row.pwa.to_pwa(), out / f"pwa_row_{row.index}.csv")


def _write_report_files(out, report_payload):
    report = report_payload.to_report()
    write_mc_report(report, out / "mc_report.json")
    write_trajectory_stats(report, out / "trajectory_stats.csv")


def _row_line(row):
    if row.kind == "deterministic":
        return (f"row {row.index}: deterministic threshold "
                f"{row.pwa.x_lb:.6g}")
    bits = [f"row {row.index}: inverted", f"sigma2 {row.sigma2:.3g}"]
    if row.pwa is not None:
        bits.append(f"{len(row.pwa.slopes)} segments")
        if row.pwa.max_gap is not None:
            bits.append(f"max gap {row.pwa.max_gap:.2e}")
    if row.table is not None:
        bits.append(f"domain [{row.table.grid[0]:.4g}, {row.table.grid[-1]:.4g}]")
    return ", ".join(bits)


def _cmd_solve(args):
    config = load_scenario(args.config)
    request = SolveRequest(config=config, rows=_parse_rows(args.rows),
                           margin=True if args.margin else None,
                           seed=args.seed)
    resp = _run(args.server, "/solve", request, op_solve, SolveResponse)
    if args.out is not None:
        out = _ensure_out(args.out)
        _dump_json(out / "manifest.json", resp.manifest)
        _dump_json(out / "solution.json", resp.solution)
        _write_row_files(out, resp.rows)
        if resp.report is not None:
            _write_report_files(out, resp.report)
        print(f"artifacts written to {out}")
    print(f"status: {resp.status}")
    if resp.status == "optimal":
        sol = resp.solution
        print(f"objective: {sol['objective']:.6g}")
        print(f"risk spent: {sol['risk_spent']:.6g}")
        if resp.report is not None:
            rep = resp.report
            print(f"joint satisfaction: {rep.joint_rate:.4f} "
                  f"(wilson 95% low {rep.ci_low:.4f}, {rep.n_runs} runs)")
        return 0
    return 2 if resp.status == "infeasible" else 1


def _cmd_estimate(args):
    config = load_scenario(args.config)
    request = EstimateRequest(config=config, rows=_parse_rows(args.rows),
                              seed=args.seed, with_pwa=not args.tables_only)
    resp = _run(args.server, "/estimate", request, op_estimate,
                EstimateResponse)
    if args.out is not None:
        out = _ensure_out(args.out)
        _write_row_files(out, resp.rows)
        print(f"artifacts written to {out}")
    print(f"{resp.n_samples} stacked samples, "
          f"bandwidth diag {resp.bandwidth_diag}")
    for row in resp.rows:
        print(_row_line(row))
    return 0


def _cmd_approximate(args):
    table = read_cdf_csv(args.table)
    request = ApproximateRequest(grid=table.grid.tolist(),
                                 values=table.values.tolist(),
                                 quad_tol=table.quad_tol, eps=args.eps,
                                 max_segments=args.max_segments)
    resp = _run(args.server, "/approximate", request, op_approximate,
                ApproximateResponse)
    if args.out is not None:
        out = _ensure_out(args.out)
        write_pwa_csv(resp.pwa.to_pwa(), out / "pwa.csv")
        print(f"artifacts written to {out}")
    print(f"{resp.n_segments} segments, max gap {resp.max_gap:.3e}, "
          f"cap {resp.pwa.intercepts[-1]:.6g}")
    return 0


def _cmd_validate(args):
    config = load_scenario(args.config)
    solution = json.loads(Path(args.solution).read_text())
    if "u_bar" not in solution:
        raise CliError(f"{args.solution} has no u_bar field")
    request = ValidateRequest(config=config, u_bar=solution["u_bar"],
                              n_rollouts=args.rollouts, seed=args.seed)
    resp = _run(args.server, "/validate", request, op_validate,
                ValidateResponse)
    rep = resp.report
    if args.out is not None:
        out = _ensure_out(args.out)
        _write_report_files(out, rep)
        print(f"artifacts written to {out}")
    print(f"joint satisfaction: {rep.joint_rate:.4f} "
          f"(wilson 95% [{rep.ci_low:.4f}, {rep.ci_high:.4f}], "
          f"{rep.n_runs} runs)")
    if rep.mean_cost is not None:
        print(f"mean cost: {rep.mean_cost:.6g} (se {rep.cost_se:.3g})")
    return 0


def _cmd_moments(args):
    config = load_scenario(args.config)
    request = MomentsRequest(config=config, seed=args.seed)
    resp = _run(args.server, "/moments", request, op_moments, MomentsResponse)
    if args.out is not None:
        out = _ensure_out(args.out)
        _dump_json(out / "moments.json", resp.model_dump())
        print(f"artifacts written to {out}")
    print(f"{resp.n_samples} stacked samples")
    print(f"mean: {resp.mean}")
    print(f"cov diag: {resp.cov_diag}")
    return 0


def _cmd_serve(args):
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def _add_common(parser, config=True):
    if config:
        parser.add_argument("--config", required=True,
                            help="scenario config file (JSON)")
    parser.add_argument("--out", default=None,
                        help="directory for artifacts (created if missing)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's sample seed")
    parser.add_argument("--server", default=None, metavar="URL",
                        help="POST to a running service instead of "
                             "running in-process")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ecfcontrol",
        description="open-loop stochastic control from disturbance samples")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the full pipeline on a scenario")
    _add_common(p)
    p.add_argument("--margin", action="store_true",
                   help="tighten rows by the finite-sample confidence margin")
    p.add_argument("--rows", default=None,
                   help="comma-separated subset of constraint rows")
    p.set_defaults(handler=_cmd_solve)

    p = sub.add_parser("estimate",
                       help="per-row CDF tables and under-approximations, "
                            "no solve")
    _add_common(p)
    p.add_argument("--rows", default=None,
                   help="comma-separated subset of constraint rows")
    p.add_argument("--tables-only", action="store_true",
                   help="skip the concave fit, emit CDF tables only")
    p.set_defaults(handler=_cmd_estimate)

    p = sub.add_parser("approximate",
                       help="fit a concave lower bound to a CDF table")
    _add_common(p, config=False)
    p.add_argument("--table", required=True, help="CDF table CSV")
    p.add_argument("--eps", type=float, default=1e-3,
                   help="uniform gap tolerance")
    p.add_argument("--max-segments", type=int, default=20,
                   help="segment budget (flat cap included)")
    p.set_defaults(handler=_cmd_approximate)

    p = sub.add_parser("validate",
                       help="Monte Carlo check of a stored input plan")
    _add_common(p)
    p.add_argument("--solution", required=True,
                   help="solution.json holding u_bar")
    p.add_argument("--rollouts", type=int, default=None,
                   help="override the config's rollout count")
    p.set_defaults(handler=_cmd_validate)

    p = sub.add_parser("moments",
                       help="smoothed moment estimates of the stacked "
                            "disturbance")
    _add_common(p)
    p.set_defaults(handler=_cmd_moments)

    p = sub.add_parser("serve", help="host the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=_cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (CliError, PipelineError, OSError, ValueError) as exc:
        # ConfigurationError and DomainError are ValueErrors, so config
        # mistakes land here rather than as tracebacks
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
