"""Finite-horizon stacking of linear time-invariant dynamics.

The planning problem works on the stacked state vector
``xbar = (x[0], ..., x[N])`` generated by

    x[k+1] = A x[k] + B u[k] + G w[k]

so that ``xbar = Abar x0 + Bbar ubar + Gbar wbar`` with block lower
triangular input and disturbance maps. State constraints are kept as a
polytope ``P xbar <= q`` whose rows are built one halfspace at a time.
"""

import numpy as np

from .errors import ConfigurationError


class LtiSystem:
    """Discrete-time LTI system with additive disturbance and box input bounds.

    Parameters
    ----------
    A, B, G : array_like
        State, input and disturbance matrices. ``A`` is n x n, ``B`` n x m,
        ``G`` n x p.
    horizon : int
        Number of steps N (>= 1) the plan covers.
    u_min, u_max : array_like or float
        Per-channel input bounds, broadcast to length m.
    dt : float, optional
        Sample time, only used to scale time-varying constraint bounds.
    """

    def __init__(self, A, B, G, horizon, u_min, u_max, dt=1.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        G = np.atleast_2d(np.asarray(G, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        if B.shape[0] != n:
            raise ConfigurationError(
                f"B must have {n} rows to match A, got shape {B.shape}")
        if G.shape[0] != n:
            raise ConfigurationError(
                f"G must have {n} rows to match A, got shape {G.shape}")
        if not (isinstance(horizon, (int, np.integer)) and horizon >= 1):
            raise ConfigurationError(f"horizon must be an integer >= 1, got {horizon!r}")
        if not np.isfinite(dt) or dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {dt!r}")
        m = B.shape[1]
        u_min = np.broadcast_to(np.asarray(u_min, dtype=float), (m,)).copy()
        u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (m,)).copy()
        if np.any(u_min > u_max):
            raise ConfigurationError("u_min must be elementwise <= u_max")
        self.A = A
        self.B = B
        self.G = G
        self.horizon = int(horizon)
        self.u_min = u_min
        self.u_max = u_max
        self.dt = float(dt)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_dist(self):
        return self.G.shape[1]

    def simulate(self, x0, u_seq, w_seq):
        """Step the recursion, returning states as an (N+1, n) array."""
        x0 = np.asarray(x0, dtype=float).reshape(self.n_states)
        u_seq = np.asarray(u_seq, dtype=float).reshape(self.horizon, self.n_inputs)
        w_seq = np.asarray(w_seq, dtype=float).reshape(self.horizon, self.n_dist)
        states = np.empty((self.horizon + 1, self.n_states))
        states[0] = x0
        for k in range(self.horizon):
            states[k + 1] = self.A @ states[k] + self.B @ u_seq[k] + self.G @ w_seq[k]
        return states


class ConcatenatedSystem:
    """Stacked maps over the horizon: xbar = Abar x0 + Bbar ubar + Gbar wbar."""

    def __init__(self, Abar, Bbar, Gbar, n_states, n_inputs, n_dist, horizon):
        self.Abar = Abar
        self.Bbar = Bbar
        self.Gbar = Gbar
        self.n_states = n_states
        self.n_inputs = n_inputs
        self.n_dist = n_dist
        self.horizon = horizon

    @property
    def n_stacked(self):
        return self.Abar.shape[0]


def concatenate(sys):
    """Build the stacked horizon maps of an :class:`LtiSystem`.

    Block row k of ``Abar`` is ``A^k``; block (k, j) of ``Bbar`` is
    ``A^(k-1-j) B`` for j < k and zero otherwise, and likewise for ``Gbar``
    with ``G``. The first block row therefore reproduces ``x0`` untouched.
    """
    n, m, p, N = sys.n_states, sys.n_inputs, sys.n_dist, sys.horizon
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(sys.A @ powers[-1])

    Abar = np.vstack(powers)
    Bbar = np.zeros(((N + 1) * n, N * m))
    Gbar = np.zeros(((N + 1) * n, N * p))
    for k in range(1, N + 1):
        for j in range(k):
            Bbar[k * n:(k + 1) * n, j * m:(j + 1) * m] = powers[k - 1 - j] @ sys.B
            Gbar[k * n:(k + 1) * n, j * p:(j + 1) * p] = powers[k - 1 - j] @ sys.G
    return ConcatenatedSystem(Abar, Bbar, Gbar, n, m, p, N)


class PolytopeConstraints:
    """Stacked-state constraint polytope ``P xbar <= q``."""

    def __init__(self, P, q):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if P.shape[0] != q.shape[0]:
            raise ConfigurationError(
                f"P has {P.shape[0]} rows but q has {q.shape[0]} entries")
        if not (np.isfinite(P).all() and np.isfinite(q).all()):
            raise ConfigurationError("constraint rows must be finite")
        norms = np.linalg.norm(P, axis=1)
        if np.any(norms == 0):
            raise ConfigurationError("constraint rows must be nonzero")
        self.P = P
        self.q = q

    @property
    def n_rows(self):
        return self.P.shape[0]

    def margins(self, xbar):
        """Slack q - P xbar; nonnegative entries mean satisfied rows."""
        return self.q - self.P @ np.asarray(xbar, dtype=float)

    @classmethod
    def stack(cls, parts):
        parts = list(parts)
        if not parts:
            raise ConfigurationError("need at least one constraint block")
        return cls(np.vstack([c.P for c in parts]), np.concatenate([c.q for c in parts]))


def build_time_varying_halfspaces(sys, coord, lower=None, upper=None, steps=None,
                                  include_initial=False):
    """Halfspace rows bounding one state coordinate along the horizon.

    Bounds are affine in wall time: an ``upper`` pair (slope, intercept)
    yields ``x[coord] at step k <= slope * (k * dt) + intercept`` and a
    ``lower`` pair yields the mirrored ``>=`` row. By default steps
    1..N are constrained; step 0 is deterministic and only included on
    request.

    Parameters
    ----------
    sys : LtiSystem
    coord : int
        State coordinate to bound.
    lower, upper : tuple or None
        (slope, intercept) pairs; at least one must be given.
    steps : iterable of int, optional
        Steps to constrain, each in [0, N].
    include_initial : bool
        Prepend step 0 when ``steps`` is not given.
    """
    n, N = sys.n_states, sys.horizon
    if not (0 <= int(coord) < n):
        raise ConfigurationError(f"coord must be in [0, {n}), got {coord}")
    if lower is None and upper is None:
        raise ConfigurationError("need at least one of lower/upper")
    if steps is None:
        steps = list(range(0 if include_initial else 1, N + 1))
    else:
        steps = [int(k) for k in steps]
        if any(k < 0 or k > N for k in steps):
            raise ConfigurationError(f"steps must lie in [0, {N}]")

    dim = (N + 1) * n
    rows, rhs = [], []
    for k in steps:
        t = k * sys.dt
        if lower is not None:
            slope, intercept = lower
            row = np.zeros(dim)
            row[k * n + coord] = -1.0
            rows.append(row)
            rhs.append(-(slope * t + intercept))
        if upper is not None:
            slope, intercept = upper
            row = np.zeros(dim)
            row[k * n + coord] = 1.0
            rows.append(row)
            rhs.append(slope * t + intercept)
    return PolytopeConstraints(np.array(rows), np.array(rhs))
