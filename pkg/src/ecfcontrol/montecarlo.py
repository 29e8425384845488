"""Monte Carlo rollout harness for checking a fixed input sequence.

Disturbance draws come from hand-built samplers driven only by the
Generator's uniform stream, so results are reproducible across platforms
and library versions: Box-Muller for normals, Marsaglia-Tsang rejection
for gamma (with the power boost below shape 1), inverse transform for
Weibull, threshold selection for two-part mixtures, and uniform index
draws over an empirical value pool.

Rollouts are chunked. Chunk c draws its own generator from
SeedSequence((seed, c)) and fills the stacked disturbance block column
group by column group (step-major, then dimension), so a report depends
only on (seed, chunk_size, n_runs) and never on how earlier chunks were
consumed.
"""

import json
import math

import numpy as np

from .dynamics import concatenate
from .errors import ConfigurationError

_CHUNK_DEFAULT = 4096
_Z95 = 1.959963984540054

_FAMILY_KEYS = {
    "uniform": ("low", "high"),
    "gaussian": ("mean", "std"),
    "gamma": ("shape", "scale"),
    "weibull": ("shape", "scale"),
    "mixture": ("components",),
    "empirical": ("values",),
}


def _check_spec(spec):
    family = spec.get("family")
    if family not in _FAMILY_KEYS:
        raise ConfigurationError(f"unknown sampler family {family!r}")
    for key in _FAMILY_KEYS[family]:
        if key not in spec:
            raise ConfigurationError(f"{family} sampler needs {key!r}")
    if family == "uniform" and spec["low"] > spec["high"]:
        raise ConfigurationError("uniform sampler needs low <= high")
    if family == "gaussian" and spec["std"] < 0:
        raise ConfigurationError("gaussian sampler needs std >= 0")
    if family in ("gamma", "weibull"):
        if spec["shape"] <= 0 or spec["scale"] <= 0:
            raise ConfigurationError(f"{family} sampler needs positive shape "
                                     "and scale")
    if family == "empirical" and len(spec["values"]) < 1:
        raise ConfigurationError("empirical sampler needs at least one value")
    if family == "mixture":
        comps = spec["components"]
        if len(comps) != 2:
            raise ConfigurationError("mixture sampler needs exactly 2 components")
        weight = spec.get("weight", 0.5)
        if not 0.0 < weight < 1.0:
            raise ConfigurationError(f"mixture weight must be in (0, 1), "
                                     f"got {weight}")
        for comp in comps:
            _check_spec(comp)


class DisturbanceModel:
    """Per-coordinate disturbance distribution given as family descriptors.

    Each entry of ``dims`` is a dict with a ``family`` key (uniform,
    gaussian, gamma, weibull, mixture) plus that family's parameters; an
    optional ``factor`` rescales the draw. Mixtures take two component
    descriptors and a selection ``weight`` (probability of the first,
    default 0.5).
    """

    def __init__(self, dims):
        dims = list(dims)
        if not dims:
            raise ConfigurationError("need at least one disturbance coordinate")
        for spec in dims:
            _check_spec(spec)
        self.dims = dims

    @property
    def n_dist(self):
        return len(self.dims)

    def sample(self, rng, n):
        """Draw n joint samples, one column per coordinate."""
        cols = [_sample_dim(rng, spec, n) for spec in self.dims]
        return np.column_stack(cols)


def _normals(rng, n):
    # Box-Muller on the uniform stream; 1 - u keeps the log argument in (0, 1]
    u1 = rng.random(n)
    u2 = rng.random(n)
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


def _gamma_mt(rng, shape, n):
    """Marsaglia-Tsang rejection sampler, boosted below shape 1."""
    if shape < 1.0:
        base = _gamma_mt(rng, shape + 1.0, n)
        return base * rng.random(n) ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        z = _normals(rng, todo.size)
        u = rng.random(todo.size)
        v = (1.0 + c * z) ** 3
        with np.errstate(divide="ignore", invalid="ignore"):
            accept = (v > 0) & (np.log(u)
                                < 0.5 * z**2 + d - d * v + d * np.log(v))
        out[todo[accept]] = d * v[accept]
        todo = todo[~accept]
    return out


def _sample_dim(rng, spec, n):
    family = spec["family"]
    factor = spec.get("factor", 1.0)
    if family == "uniform":
        x = spec["low"] + (spec["high"] - spec["low"]) * rng.random(n)
    elif family == "gaussian":
        x = spec["mean"] + spec["std"] * _normals(rng, n)
    elif family == "gamma":
        x = spec["scale"] * _gamma_mt(rng, spec["shape"], n)
    elif family == "weibull":
        x = spec["scale"] * (-np.log1p(-rng.random(n))) ** (1.0 / spec["shape"])
    elif family == "empirical":
        values = np.asarray(spec["values"], dtype=float)
        idx = np.minimum((rng.random(n) * values.size).astype(np.int64),
                         values.size - 1)
        x = values[idx]
    else:
        pick_first = rng.random(n) < spec.get("weight", 0.5)
        a = _sample_dim(rng, spec["components"][0], n)
        b = _sample_dim(rng, spec["components"][1], n)
        x = np.where(pick_first, a, b)
    return factor * x


def wilson_interval(successes, n):
    """Two-sided 95% Wilson score interval for a binomial rate."""
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    p = successes / n
    z2 = _Z95**2
    denom = 1.0 + z2 / n
    center = (p + z2 / (2.0 * n)) / denom
    half = _Z95 * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def stacked_states(sys, x0, u_bar, W):
    """Map a batch of stacked disturbance rows to stacked state rows.

    W is (n_runs, n_dist * N); the result row r is the full trajectory
    (x_0 ... x_N) under input sequence u_bar and disturbance row r.
    """
    csys = concatenate(sys)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    u_bar = np.atleast_1d(np.asarray(u_bar, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    base = csys.Abar @ x0 + csys.Bbar @ u_bar
    return base + W @ csys.Gbar.T


class McReport:
    """Aggregate rollout statistics for one candidate input sequence."""

    def __init__(self, n_runs, joint_rate, ci_low, ci_high, row_rates,
                 mean_cost, cost_se, per_step_cost, state_mean, state_std,
                 seed=None):
        self.n_runs = int(n_runs)
        self.joint_rate = float(joint_rate)
        self.ci_low = float(ci_low)
        self.ci_high = float(ci_high)
        self.row_rates = np.asarray(row_rates, dtype=float)
        self.mean_cost = None if mean_cost is None else float(mean_cost)
        self.cost_se = None if cost_se is None else float(cost_se)
        self.per_step_cost = (None if per_step_cost is None
                              else np.asarray(per_step_cost, dtype=float))
        self.state_mean = np.asarray(state_mean, dtype=float)
        self.state_std = np.asarray(state_std, dtype=float)
        self.seed = seed

    def to_dict(self):
        return {
            "n_runs": self.n_runs,
            "joint_rate": self.joint_rate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "row_rates": self.row_rates.tolist(),
            "mean_cost": self.mean_cost,
            "cost_se": self.cost_se,
            "per_step_cost": (None if self.per_step_cost is None
                              else self.per_step_cost.tolist()),
            "state_mean": self.state_mean.tolist(),
            "state_std": self.state_std.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def validate(sys, x0, u_bar, model, constraints, x_d=None, Q=None, R=None,
             n_runs=1000, seed=0, chunk_size=_CHUNK_DEFAULT):
    """Estimate constraint satisfaction and cost of u_bar by simulation.

    Runs ``n_runs`` independent rollouts in chunks, counting how often the
    trajectory satisfies every constraint row simultaneously (plus per-row
    rates) and, when Q is given, averaging the realized quadratic tracking
    cost. Terminal steps carry no input penalty. The 95% Wilson interval
    brackets the joint rate.
    """
    if n_runs < 1:
        raise ConfigurationError(f"n_runs must be >= 1, got {n_runs}")
    if chunk_size < 1:
        raise ConfigurationError(f"chunk_size must be >= 1, got {chunk_size}")
    if model.n_dist != sys.n_dist:
        raise ConfigurationError(
            f"model has {model.n_dist} coordinates, system expects {sys.n_dist}")
    csys = concatenate(sys)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    u_bar = np.atleast_1d(np.asarray(u_bar, dtype=float))
    N, n, p = sys.horizon, sys.n_states, sys.n_dist
    if constraints.P.shape[1] != csys.n_stacked:
        raise ConfigurationError("constraint rows must act on the stacked state")

    with_cost = Q is not None
    if with_cost:
        if x_d is None or R is None:
            raise ConfigurationError("cost evaluation needs x_d, Q and R together")
        x_d = np.asarray(x_d, dtype=float)
        if x_d.shape != (csys.n_stacked,):
            raise ConfigurationError(
                f"x_d must have length {csys.n_stacked}, got {x_d.shape}")
        Qm = Q * np.eye(n) if np.isscalar(Q) else np.asarray(Q, dtype=float)
        Rm = R * np.eye(sys.n_inputs) if np.isscalar(R) else np.asarray(R, float)
        u_steps = u_bar.reshape(N, sys.n_inputs)
        u_cost_steps = np.einsum("ki,ij,kj->k", u_steps, Rm, u_steps)

    base = csys.Abar @ x0 + csys.Bbar @ u_bar
    l = constraints.n_rows

    joint_hits = 0
    row_hits = np.zeros(l)
    cost_sum = 0.0
    cost_sq_sum = 0.0
    step_cost_sum = np.zeros(N + 1)
    state_sum = np.zeros(csys.n_stacked)
    state_sq_sum = np.zeros(csys.n_stacked)

    n_chunks = (n_runs + chunk_size - 1) // chunk_size
    for c in range(n_chunks):
        m = min(chunk_size, n_runs - c * chunk_size)
        rng = np.random.default_rng(np.random.SeedSequence((seed, c)))
        W = np.empty((m, p * N))
        for k in range(N):
            for d, spec in enumerate(model.dims):
                W[:, k * p + d] = _sample_dim(rng, spec, m)
        X = base + W @ csys.Gbar.T

        if l:
            slack = constraints.q - X @ constraints.P.T
            ok = slack >= 0.0
            row_hits += ok.sum(axis=0)
            joint_hits += ok.all(axis=1).sum()
        else:
            joint_hits += m

        state_sum += X.sum(axis=0)
        state_sq_sum += (X**2).sum(axis=0)

        if with_cost:
            E = (X - x_d).reshape(m, N + 1, n)
            step_state = np.einsum("mki,ij,mkj->mk", E, Qm, E)
            step_total = step_state.copy()
            step_total[:, :N] += u_cost_steps
            totals = step_total.sum(axis=1)
            cost_sum += totals.sum()
            cost_sq_sum += (totals**2).sum()
            step_cost_sum += step_total.sum(axis=0)

    joint_rate = joint_hits / n_runs
    ci_low, ci_high = wilson_interval(joint_hits, n_runs)
    state_mean = state_sum / n_runs
    state_var = np.maximum(state_sq_sum / n_runs - state_mean**2, 0.0)

    mean_cost = cost_se = per_step = None
    if with_cost:
        mean_cost = cost_sum / n_runs
        var = max(cost_sq_sum / n_runs - mean_cost**2, 0.0)
        cost_se = math.sqrt(var / n_runs)
        per_step = step_cost_sum / n_runs

    return McReport(n_runs=n_runs, joint_rate=joint_rate, ci_low=ci_low,
                    ci_high=ci_high, row_rates=row_hits / n_runs,
                    mean_cost=mean_cost, cost_se=cost_se,
                    per_step_cost=per_step,
                    state_mean=state_mean.reshape(N + 1, n),
                    state_std=np.sqrt(state_var).reshape(N + 1, n),
                    seed=seed)


def write_mc_report(report, path):
    """Write the report as indented JSON."""
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


def read_mc_report(path):
    with open(path) as fh:
        return McReport.from_dict(json.load(fh))


def write_trajectory_stats(report, path):
    """Per-step state mean and spread as CSV: step, means, stds."""
    n = report.state_mean.shape[1]
    header = "step," + ",".join(
        [f"mean_x{i + 1}" for i in range(n)] + [f"std_x{i + 1}" for i in range(n)])
    steps = np.arange(report.state_mean.shape[0])
    body = np.column_stack([steps, report.state_mean, report.state_std])
    np.savetxt(path, body, delimiter=",", header=header, comments="",
               fmt="%.17g")
