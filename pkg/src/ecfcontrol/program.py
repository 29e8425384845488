"""Risk-allocated chance-constrained control as a dense convex QP.

The decision vector stacks the open-loop input sequence with one risk
variable per constraint row: z = (u_bar, delta_bar). Each halfspace row
p' x_bar <= q on the stacked state turns into a family of affine rows
through a concave piecewise-affine under-approximation of the CDF of its
disturbance-driven margin: demanding

    a_r * (q - p'(Abar x0 + Bbar u_bar)) + c_r >= 1 - delta_i

for every segment (a_r, c_r) enforces satisfaction probability at least
1 - delta_i, while sum(delta) <= Delta caps the total risk. The cost is
the exact expectation of the quadratic tracking objective under the
estimated disturbance moments, which separates into a deterministic QP
term plus a constant.
"""

import warnings

import numpy as np

from .errors import ConfigurationError
from .pwa import evaluate_pwa
from .qp import QpProblem, solve_qp

_SECTION_ORDER = ("pwa", "restriction", "risk_sum", "risk_nonneg",
                  "input_upper", "input_lower")


class ChanceProgram:
    """Assembled program min z'Hz + f'z + c0 s.t. A z <= b over (u_bar, delta).

    ``row_sections`` maps each row group to its slice of A and b. The
    optional ``pwas``, ``g`` and ``V`` carry enough structure to recompute
    the canonical risk split after a solve; programs re-read from a triplet
    file lack them and fall back to the solver's raw risk variables.
    """

    def __init__(self, H, f, c0, A, b, n_inputs, n_risk, row_sections,
                 delta_total, pwas=None, g=None, V=None, margin_total=0.0):
        H = np.asarray(H, dtype=float)
        f = np.asarray(f, dtype=float)
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        n_z = int(n_inputs) + int(n_risk)
        if H.shape != (n_z, n_z):
            raise ConfigurationError(f"H must be {(n_z, n_z)}, got {H.shape}")
        if not np.allclose(H, H.T, atol=1e-9, rtol=0):
            raise ConfigurationError("H must be symmetric")
        if f.shape != (n_z,):
            raise ConfigurationError(f"f must have length {n_z}, got {f.shape}")
        if A.ndim != 2 or A.shape[1] != n_z:
            raise ConfigurationError(f"A must have {n_z} columns, got {A.shape}")
        if b.shape != (A.shape[0],):
            raise ConfigurationError("b length must match A rows")
        if not 0.0 <= delta_total <= 1.0:
            raise ConfigurationError(
                f"delta_total must lie in [0, 1], got {delta_total}")
        if margin_total < 0:
            raise ConfigurationError("margin_total must be >= 0")
        for name in _SECTION_ORDER:
            if name not in row_sections:
                raise ConfigurationError(f"row_sections is missing {name!r}")
            sec = row_sections[name]
            if sec.stop > A.shape[0] or sec.start < 0:
                raise ConfigurationError(f"section {name!r} exceeds row count")
        if pwas is not None and len(pwas) != n_risk:
            raise ConfigurationError("need exactly one under-approximation per "
                                     "risk variable")
        self.H = H
        self.f = f
        self.c0 = float(c0)
        self.A = A
        self.b = b
        self.n_inputs = int(n_inputs)
        self.n_risk = int(n_risk)
        self.row_sections = dict(row_sections)
        self.delta_total = float(delta_total)
        self.pwas = list(pwas) if pwas is not None else None
        self.g = None if g is None else np.asarray(g, dtype=float)
        self.V = None if V is None else np.asarray(V, dtype=float)
        self.margin_total = float(margin_total)

    @property
    def n_vars(self):
        return self.n_inputs + self.n_risk

    @property
    def n_rows(self):
        return self.A.shape[0]


def _weight_matrix(weight, size, name, positive_definite):
    """Expand a scalar weight to a scaled identity and validate definiteness."""
    if np.isscalar(weight):
        w = float(weight)
        if positive_definite and w <= 0:
            raise ConfigurationError(f"{name} must be positive, got {w}")
        if not positive_definite and w < 0:
            raise ConfigurationError(f"{name} must be nonnegative, got {w}")
        return w * np.eye(size)
    W = np.asarray(weight, dtype=float)
    if W.shape != (size, size):
        raise ConfigurationError(f"{name} must be {(size, size)}, got {W.shape}")
    if not np.allclose(W, W.T, atol=1e-9, rtol=0):
        raise ConfigurationError(f"{name} must be symmetric")
    eigmin = np.linalg.eigvalsh(W).min()
    if positive_definite and eigmin <= 1e-12:
        raise ConfigurationError(f"{name} must be positive definite")
    if not positive_definite and eigmin < -1e-9:
        raise ConfigurationError(f"{name} must be positive semidefinite")
    return 0.5 * (W + W.T)


def expand_cost(csys, x0, x_d, Q, R, moments, n_risk=0):
    """Expected quadratic tracking cost as (H, f, c0) over (u_bar, delta_bar).

    With r0 = Abar x0 + Gbar E[w_bar] - x_d the expectation splits into

        u' (Bbar' Q Bbar + R) u  +  2 r0' Q Bbar u
          +  r0' Q r0  +  sum_k var_k * gbar_k' Q gbar_k

    using only the mean and per-coordinate variance of the stacked
    disturbance (cross-covariances enter through Q-weighted diagonal terms
    only because the stacked coordinates are resampled independently).
    Risk variables never enter the cost; the blocks for them are zero.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    x_d = np.atleast_1d(np.asarray(x_d, dtype=float))
    nb = csys.n_stacked
    nu = csys.n_inputs * csys.horizon
    nw = csys.n_dist * csys.horizon
    if x0.shape != (csys.n_states,):
        raise ConfigurationError(
            f"x0 must have length {csys.n_states}, got {x0.shape}")
    if x_d.shape != (nb,):
        raise ConfigurationError(
            f"x_d must have length {nb}, got {x_d.shape}")
    if moments.mean.shape != (nw,):
        raise ConfigurationError(
            f"moments must cover {nw} stacked coordinates, got "
            f"{moments.mean.shape}")
    Qm = _weight_matrix(Q, nb, "Q", positive_definite=False)
    Rm = _weight_matrix(R, nu, "R", positive_definite=True)

    r0 = csys.Abar @ x0 + csys.Gbar @ moments.mean - x_d
    QB = Qm @ csys.Bbar
    H_uu = csys.Bbar.T @ QB + Rm
    f_u = 2.0 * (r0 @ QB)
    trace_term = float(np.einsum("ik,ij,jk->k", csys.Gbar, Qm, csys.Gbar)
                       @ moments.cov_diag)
    c0 = float(r0 @ Qm @ r0) + trace_term

    n_z = nu + int(n_risk)
    H = np.zeros((n_z, n_z))
    H[:nu, :nu] = 0.5 * (H_uu + H_uu.T)
    f = np.zeros(n_z)
    f[:nu] = f_u
    return H, f, c0


def assemble(csys, x0, constraints, pwas, delta_total, cost, u_min, u_max):
    """Build the full inequality system over (u_bar, delta_bar).

    Row layout, in order: every under-approximation segment of every
    constraint row (flat caps included), then one domain restriction per
    row, the total risk budget, delta >= 0, and the stacked input box.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    l = constraints.n_rows
    if len(pwas) != l:
        raise ConfigurationError(
            f"need one under-approximation per constraint row: got {len(pwas)} "
            f"for {l} rows")
    if not 0.0 <= delta_total <= 1.0:
        raise ConfigurationError(
            f"delta_total must lie in [0, 1], got {delta_total}")
    nu = csys.n_inputs * csys.horizon
    if constraints.P.shape[1] != csys.n_stacked:
        raise ConfigurationError("constraint rows must act on the stacked state")
    H, f, c0 = cost
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    if H.shape == (nu, nu):
        # cost built without risk columns: pad with zero blocks
        H_full = np.zeros((nu + l, nu + l))
        H_full[:nu, :nu] = H
        H = H_full
        f = np.concatenate([f, np.zeros(l)])
    if H.shape != (nu + l, nu + l):
        raise ConfigurationError(
            f"cost matrix must be {(nu + l, nu + l)}, got {H.shape}")

    lo = np.broadcast_to(np.asarray(u_min, dtype=float),
                         (csys.n_inputs,)).astype(float)
    hi = np.broadcast_to(np.asarray(u_max, dtype=float),
                         (csys.n_inputs,)).astype(float)
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        raise ConfigurationError("input bounds must be finite")
    if np.any(lo >= hi):
        raise ConfigurationError("u_min must be strictly below u_max")
    lo_bar = np.tile(lo, csys.horizon)
    hi_bar = np.tile(hi, csys.horizon)

    V = constraints.P @ csys.Bbar                       # (l, nu)
    g = constraints.q - constraints.P @ (csys.Abar @ x0)

    n_z = nu + l
    rows_A = []
    rows_b = []
    for i, pwa in enumerate(pwas):
        for a_r, c_r in zip(pwa.slopes, pwa.intercepts):
            row = np.zeros(n_z)
            row[:nu] = a_r * V[i]
            row[nu + i] = -1.0
            rows_A.append(row)
            rows_b.append(a_r * g[i] + c_r - 1.0)
    n_pwa = len(rows_A)

    for i, pwa in enumerate(pwas):
        row = np.zeros(n_z)
        row[:nu] = V[i]
        rows_A.append(row)
        rows_b.append(g[i] - pwa.x_lb)

    risk_row = np.zeros(n_z)
    risk_row[nu:] = 1.0
    rows_A.append(risk_row)
    rows_b.append(delta_total)

    for i in range(l):
        row = np.zeros(n_z)
        row[nu + i] = -1.0
        rows_A.append(row)
        rows_b.append(0.0)

    eye_u = np.zeros((nu, n_z))
    eye_u[:, :nu] = np.eye(nu)
    A = np.vstack([np.array(rows_A), eye_u, -eye_u])
    b = np.concatenate([np.array(rows_b), hi_bar, -lo_bar])

    start = 0
    sections = {}
    for name, count in (("pwa", n_pwa), ("restriction", l), ("risk_sum", 1),
                        ("risk_nonneg", l), ("input_upper", nu),
                        ("input_lower", nu)):
        sections[name] = slice(start, start + count)
        start += count

    return ChanceProgram(H, f, c0, A, b, n_inputs=nu, n_risk=l,
                         row_sections=sections, delta_total=delta_total,
                         pwas=pwas, g=g, V=V)


def apply_confidence_margin(program, margin):
    """Tighten every under-approximation row by the margin's total.

    Subtracting the total from the right-hand side of each segment row
    demands satisfaction probability 1 - delta_i + total from the estimated
    CDF, buying a finite-sample guarantee for the true one. Emits a warning
    when the flat caps alone already force the risk budget to overflow.
    """
    total = margin.total
    if total >= 1.0:
        raise ConfigurationError(
            f"margin total must be below 1, got {total}")
    b = program.b.copy()
    sec = program.row_sections["pwa"]
    b[sec] = b[sec] - total
    new_total = program.margin_total + total
    if program.pwas is not None:
        forced = sum(max(0.0, 1.0 - pwa.cap + new_total)
                     for pwa in program.pwas)
        if forced > program.delta_total:
            warnings.warn(
                "confidence margin forces total risk "
                f"{forced:.4f} > budget {program.delta_total:.4f}; the "
                "tightened program cannot be feasible", UserWarning)
    return ChanceProgram(program.H, program.f, program.c0, program.A, b,
                         program.n_inputs, program.n_risk,
                         program.row_sections, program.delta_total,
                         pwas=program.pwas, g=program.g, V=program.V,
                         margin_total=new_total)


def to_qp(program):
    """Convert to the solver's 1/2 z'Hz convention (Hessian doubled)."""
    return QpProblem(2.0 * program.H, program.f, program.A, program.b)


class ControlSolution:
    """Solve outcome: input sequence, risk split, cost, and KKT certificate."""

    def __init__(self, u_bar, delta_bar, objective, status, kkt, iterations,
                 diagnostics=None, z_raw=None):
        self.u_bar = u_bar
        self.delta_bar = delta_bar
        self.objective = objective
        self.status = status
        self.kkt = kkt
        self.iterations = iterations
        self.diagnostics = diagnostics
        self.z_raw = z_raw

    @property
    def risk_spent(self):
        return float(self.delta_bar.sum()) if self.delta_bar.size else 0.0


def _heuristic_start(program):
    """Interior-leaning start: box midpoint inputs, half-budget risk split."""
    nu, l = program.n_inputs, program.n_risk
    hi = program.b[program.row_sections["input_upper"]]
    lo = -program.b[program.row_sections["input_lower"]]
    z0 = np.zeros(nu + l)
    if hi.size == nu:
        z0[:nu] = 0.5 * (lo + hi)
    if l:
        z0[nu:] = program.delta_total / (2.0 * l)
    return z0


def solve_chance_program(program, tol=1e-8, max_iter=200, initial_point=None):
    """Solve the assembled program and report the canonical risk split.

    The raw solver leaves each delta_i anywhere between its forced minimum
    and the budget, since risk variables carry no cost. When the program
    retains its under-approximations, the reported delta_bar is recomputed
    as the pointwise-smallest feasible value at the returned inputs:
    max(0, 1 - envelope(margin_i) + tightening). Programs without that
    structure report the solver's raw nonnegative risk variables.
    """
    if initial_point is None:
        initial_point = _heuristic_start(program)
    qp_sol = solve_qp(to_qp(program), tol=tol, max_iter=max_iter,
                      initial_point=initial_point)
    nu = program.n_inputs
    u_bar = qp_sol.z[:nu].copy()
    delta_raw = np.clip(qp_sol.z[nu:], 0.0, None)
    objective = qp_sol.objective + program.c0

    delta_bar = delta_raw
    if (qp_sol.status == "optimal" and program.pwas is not None
            and program.V is not None and program.g is not None):
        args = program.g - program.V @ u_bar
        delta_bar = np.empty(program.n_risk)
        for i, pwa in enumerate(program.pwas):
            arg = max(args[i], pwa.x_lb)
            phi = evaluate_pwa(pwa, arg)
            delta_bar[i] = max(0.0, 1.0 - phi + program.margin_total)

    return ControlSolution(u_bar=u_bar, delta_bar=delta_bar,
                           objective=objective, status=qp_sol.status,
                           kkt=qp_sol.residuals, iterations=qp_sol.iterations,
                           diagnostics=qp_sol.diagnostics, z_raw=qp_sol.z)


def write_program_triplets(program, path):
    """Serialize the program as a plain-text sparse-triplet record.

    Layout: a dims header, scalar lines (c0, delta_total, margin), sparse
    (index, value) lines for H and A nonzeros, dense lines for f and b,
    and one line per row section. Floats use %.17g so the round trip is
    exact.
    """
    lines = [
        f"dims {program.n_vars} {program.n_rows} {program.n_inputs} "
        f"{program.n_risk}",
        f"c0 {program.c0:.17g}",
        f"delta_total {program.delta_total:.17g}",
        f"margin {program.margin_total:.17g}",
    ]
    for (i, j) in zip(*np.nonzero(program.H)):
        lines.append(f"H {i} {j} {program.H[i, j]:.17g}")
    for i, val in enumerate(program.f):
        lines.append(f"f {i} {val:.17g}")
    for (r, c) in zip(*np.nonzero(program.A)):
        lines.append(f"A {r} {c} {program.A[r, c]:.17g}")
    for r, val in enumerate(program.b):
        lines.append(f"b {r} {val:.17g}")
    for name in _SECTION_ORDER:
        sec = program.row_sections[name]
        lines.append(f"section {name} {sec.start} {sec.stop}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_program_triplets(path):
    """Rebuild a ChanceProgram from its triplet record.

    The under-approximation structure is not part of the record, so the
    result solves identically but reports raw solver risk variables.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("dims "):
        raise ConfigurationError(f"{path}: missing dims header")
    try:
        n_vars, n_rows, n_inputs, n_risk = map(int, lines[0].split()[1:])
    except ValueError as exc:
        raise ConfigurationError(f"{path}: malformed dims line") from exc
    if n_vars != n_inputs + n_risk:
        raise ConfigurationError(f"{path}: dims are inconsistent")
    H = np.zeros((n_vars, n_vars))
    f = np.zeros(n_vars)
    A = np.zeros((n_rows, n_vars))
    b = np.zeros(n_rows)
    scalars = {"c0": 0.0, "delta_total": 0.0, "margin": 0.0}
    sections = {}
    for ln in lines[1:]:
        parts = ln.split()
        tag = parts[0]
        try:
            if tag in scalars:
                scalars[tag] = float(parts[1])
            elif tag == "H":
                H[int(parts[1]), int(parts[2])] = float(parts[3])
            elif tag == "f":
                f[int(parts[1])] = float(parts[2])
            elif tag == "A":
                A[int(parts[1]), int(parts[2])] = float(parts[3])
            elif tag == "b":
                b[int(parts[1])] = float(parts[2])
            elif tag == "section":
                sections[parts[1]] = slice(int(parts[2]), int(parts[3]))
            else:
                raise ConfigurationError(f"{path}: unknown record tag {tag!r}")
        except (IndexError, ValueError) as exc:
            raise ConfigurationError(f"{path}: malformed line {ln!r}") from exc
    return ChanceProgram(H, f, scalars["c0"], A, b, n_inputs, n_risk,
                         sections, scalars["delta_total"],
                         margin_total=scalars["margin"])
