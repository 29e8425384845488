"""Dense convex QP solver: Mehrotra-style predictor-corrector interior point.

Problems are inequality-form:

    min 1/2 z' H z + f' z   s.t.   A z <= b

with H positive semidefinite. Slack/multiplier pairs follow the central
path; each iteration eliminates the slack block and factors the condensed
matrix H + A' diag(lam/s) A once, reusing it for the predictor and the
centrality-corrected step. Stopping is on absolute KKT residuals so an
independent recomputation at the reported point passes the same tolerance.
"""

import numpy as np

from .errors import AccuracyError, ConfigurationError

_PSD_TOL = 1e-9


class QpProblem:
    """Validated problem data for min 1/2 z'Hz + f'z s.t. Az <= b."""

    def __init__(self, H, f, A, b):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        f = np.atleast_1d(np.asarray(f, dtype=float))
        A = np.asarray(A, dtype=float)
        if A.ndim == 1:
            A = A.reshape(1, -1)
        b = np.atleast_1d(np.asarray(b, dtype=float))
        n = H.shape[0]
        if H.shape != (n, n):
            raise ConfigurationError(f"H must be square, got {H.shape}")
        if not np.allclose(H, H.T, atol=1e-9, rtol=0):
            raise ConfigurationError("H must be symmetric")
        H = 0.5 * (H + H.T)
        if n and np.linalg.eigvalsh(H).min() < -_PSD_TOL:
            raise ConfigurationError("H must be positive semidefinite")
        if f.shape != (n,):
            raise ConfigurationError(f"f must have length {n}, got {f.shape}")
        if A.size == 0:
            A = A.reshape(0, n)
        if A.shape[1] != n:
            raise ConfigurationError(f"A must have {n} columns, got {A.shape}")
        if b.shape != (A.shape[0],):
            raise ConfigurationError(
                f"b must have length {A.shape[0]}, got {b.shape}")
        if not (np.isfinite(H).all() and np.isfinite(f).all()
                and np.isfinite(A).all() and np.isfinite(b).all()):
            raise ConfigurationError("problem data must be finite")
        self.H = H
        self.f = f
        self.A = A
        self.b = b

    @property
    def n_vars(self):
        return self.H.shape[0]

    @property
    def n_cons(self):
        return self.A.shape[0]


class KktResiduals:
    """First-order optimality measures at a candidate primal-dual point."""

    def __init__(self, primal_inf, dual_inf, comp_slack, lambda_min):
        self.primal_inf = float(primal_inf)
        self.dual_inf = float(dual_inf)
        self.comp_slack = float(comp_slack)
        self.lambda_min = float(lambda_min)

    def as_dict(self):
        return {"primal_inf": self.primal_inf, "dual_inf": self.dual_inf,
                "comp_slack": self.comp_slack, "lambda_min": self.lambda_min}

    def within(self, tol):
        return (self.primal_inf <= tol and self.dual_inf <= tol
                and self.comp_slack <= tol and self.lambda_min >= -tol)


class QpSolution:
    def __init__(self, z, lam, status, iterations, objective, residuals,
                 diagnostics=None):
        self.z = z
        self.lam = lam
        self.status = status
        self.iterations = iterations
        self.objective = objective
        self.residuals = residuals
        self.diagnostics = diagnostics


def kkt_residuals(problem, z, lam):
    """Recompute KKT residuals from scratch (independent of solver state)."""
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if problem.n_cons == 0:
        dual = np.abs(problem.H @ z + problem.f).max() if problem.n_vars else 0.0
        return KktResiduals(0.0, dual, 0.0, 0.0)
    slack = problem.b - problem.A @ z
    primal = max(0.0, float(-slack.min()))
    dual = float(np.abs(problem.H @ z + problem.f + problem.A.T @ lam).max())
    comp = float(np.abs(lam * slack).max())
    return KktResiduals(primal, dual, comp, float(lam.min()))


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    # a ratio overflowing to inf just means that coordinate never blocks
    with np.errstate(over="ignore"):
        return float((-v[neg] / dv[neg]).min())


def _factor(K):
    if not np.isfinite(K).all():
        raise AccuracyError("condensed KKT matrix has non-finite entries")
    scale = max(1.0, np.trace(K) / K.shape[0])
    for reg in (0.0, 1e-12, 1e-10, 1e-8, 1e-6):
        try:
            return np.linalg.cholesky(K + reg * scale * np.eye(K.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise AccuracyError("condensed KKT matrix could not be factored")


def _equilibrate(H, A, sweeps=3):
    """Ruiz-style diagonal scaling of the problem data.

    Returns (Hs, As, d, e) with Hs = D H D and As = E A D for
    D = diag(d), E = diag(e), so original variables and multipliers are
    recovered as z = d * zs and lam = e * lams. Balancing the mixed
    magnitudes of input, risk and segment rows keeps the condensed matrix
    factorable on badly scaled programs.
    """
    n = H.shape[0]
    m = A.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    Hs = H.copy()
    As = A.copy()
    for _ in range(sweeps):
        col = np.abs(Hs).max(axis=0)
        if m:
            col = np.maximum(col, np.abs(As).max(axis=0))
        # leave empty rows and columns alone: scaling them only inflates
        # the recovered multipliers on vacuous constraints
        col = np.sqrt(np.where(col > 1e-10, col, 1.0))
        Hs /= col[:, None] * col[None, :]
        d /= col
        if m:
            As /= col[None, :]
            row = np.abs(As).max(axis=1)
            row = np.sqrt(np.where(row > 1e-10, row, 1.0))
            As /= row[:, None]
            e /= row
    return Hs, As, d, e


def _chol_solve(L, r):
    return np.linalg.solve(L.T, np.linalg.solve(L, r))


def solve_qp(problem, tol=1e-8, max_iter=100, initial_point=None):
    """Solve a :class:`QpProblem`.

    Returns a :class:`QpSolution` with status ``optimal``, ``infeasible``
    or ``max-iterations``. On ``optimal`` the reported point satisfies all
    four KKT residuals at ``tol`` under independent recomputation; on
    ``infeasible`` the diagnostics carry a scaled dual ray and the smallest
    constraint violation the iterates reached.
    """
    if tol <= 0:
        raise ConfigurationError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ConfigurationError(f"max_iter must be >= 1, got {max_iter}")
    H, f, A, b = problem.H, problem.f, problem.A, problem.b
    n, m = problem.n_vars, problem.n_cons

    if m == 0:
        L = _factor(H)
        z = _chol_solve(L, -f)
        res = kkt_residuals(problem, z, np.zeros(0))
        if res.dual_inf > tol:
            raise AccuracyError(
                "unconstrained problem has no stationary point at tolerance",
                achieved=res.dual_inf)
        return QpSolution(z, np.zeros(0), "optimal", 0,
                          float(0.5 * z @ H @ z + f @ z), res)

    # iterate on the equilibrated problem, certify on the original
    Hs, As, d, e = _equilibrate(H, A)
    fs = d * f
    bs = e * b

    if initial_point is not None:
        z = np.asarray(initial_point, dtype=float).reshape(n) / d
    else:
        z = np.zeros(n)
    s = np.maximum(bs - As @ z, 1.0)
    lam = np.ones(m)

    status = "max-iterations"
    iterations = max_iter
    diagnostics = None
    for it in range(1, max_iter + 1):
        lam_orig = e * lam
        res = kkt_residuals(problem, d * z, lam_orig)
        if res.within(0.25 * tol):
            status = "optimal"
            iterations = it - 1
            break
        if lam_orig.max() > 1e10 and res.primal_inf > np.sqrt(tol):
            status = "infeasible"
            iterations = it - 1
            ray = lam_orig / np.abs(lam_orig).sum()
            diagnostics = {
                "max_violation": res.primal_inf,
                "farkas_residual": float(np.abs(A.T @ ray).max()),
                "farkas_value": float(b @ ray),
            }
            break

        rd = Hs @ z + fs + As.T @ lam
        rp = As @ z + s - bs
        mu = float(s @ lam) / m

        K = Hs + (As.T * (lam / s)) @ As
        L = _factor(K)

        rc_aff = s * lam
        dz_aff = _chol_solve(L, -rd + As.T @ ((rc_aff - lam * rp) / s))
        ds_aff = -rp - As @ dz_aff
        dlam_aff = (-rc_aff - lam * ds_aff) / s
        ap_aff = min(1.0, _max_step(s, ds_aff))
        ad_aff = min(1.0, _max_step(lam, dlam_aff))
        mu_aff = float((s + ap_aff * ds_aff) @ (lam + ad_aff * dlam_aff)) / m
        sigma = (max(mu_aff, 0.0) / mu) ** 3 if mu > 0 else 0.0

        rc = s * lam + ds_aff * dlam_aff - sigma * mu
        dz = _chol_solve(L, -rd + As.T @ ((rc - lam * rp) / s))
        ds = -rp - As @ dz
        dlam = (-rc - lam * ds) / s

        eta = max(0.995, 1.0 - mu)
        ap = min(1.0, eta * _max_step(s, ds))
        ad = min(1.0, eta * _max_step(lam, dlam))
        z = z + ap * dz
        # a full-length step can zero a slack exactly; keep it positive so
        # the next condensation never divides by zero
        s = np.maximum(s + ap * ds, 1e-300)
        lam = lam + ad * dlam

    z_orig = d * z
    lam_orig = e * lam
    res = kkt_residuals(problem, z_orig, lam_orig)
    return QpSolution(z_orig, lam_orig, status, iterations,
                      float(0.5 * z_orig @ H @ z_orig + f @ z_orig), res,
                      diagnostics)
