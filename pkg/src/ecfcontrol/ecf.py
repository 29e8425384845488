"""Smoothed empirical characteristic function estimation from raw samples.

Given per-step disturbance draws, the stacked-horizon sample set is built
by reshuffling the pool independently per step (independence across time).
The distribution estimate along any direction d is the empirical
characteristic function of the projected samples y_j = d . w_j, damped by
a Gaussian kernel whose covariance comes from a plug-in bandwidth rule:

    ecf(t) = sum_j alpha_j exp(i t y_j) * exp(-sigma2 t^2 / 2)

with sigma2 = d' Sigma_stacked d. First and second moments of the stacked
disturbance follow from derivatives of the same object at t = 0, which
reduces to sample moments plus the known smoothing variance.
"""

import math
import warnings

import numpy as np

from .errors import ConfigurationError, InsufficientDataError

_PSD_TOL = 1e-10


class DisturbanceSamples:
    """Per-step sample pool and the stacked-horizon sample set built from it.

    ``per_step`` is (N_s, p); ``trajectory`` is (N_s, p*N) where block k of
    row j is one draw of the step-k disturbance.
    """

    def __init__(self, per_step, trajectory):
        per_step = np.atleast_2d(np.asarray(per_step, dtype=float))
        trajectory = np.atleast_2d(np.asarray(trajectory, dtype=float))
        if per_step.shape[0] != trajectory.shape[0]:
            raise ConfigurationError("per_step and trajectory row counts differ")
        p = per_step.shape[1]
        if p == 0 or trajectory.shape[1] % p != 0:
            raise ConfigurationError(
                f"trajectory width {trajectory.shape[1]} is not a multiple of "
                f"per-step width {p}")
        self.per_step = per_step
        self.trajectory = trajectory

    @property
    def n_samples(self):
        return self.per_step.shape[0]

    @property
    def n_dist(self):
        return self.per_step.shape[1]

    @property
    def horizon(self):
        return self.trajectory.shape[1] // self.per_step.shape[1]

    @classmethod
    def from_trajectory(cls, trajectory, n_dist):
        """Ingest already-stacked draws; block 0 doubles as the per-step pool."""
        trajectory = np.atleast_2d(np.asarray(trajectory, dtype=float))
        if n_dist < 1 or trajectory.shape[1] % n_dist != 0:
            raise ConfigurationError(
                f"trajectory width {trajectory.shape[1]} is not a multiple of {n_dist}")
        return cls(trajectory[:, :n_dist], trajectory)


def build_trajectory_samples(per_step, horizon, seed=0):
    """Stack the per-step pool over the horizon by seeded reshuffling.

    Step block 0 keeps the pool order; each later block applies an
    independent seeded permutation, so horizon 1 reproduces the pool
    exactly and every block remains an exact copy of the pool.
    """
    per_step = np.atleast_2d(np.asarray(per_step, dtype=float))
    if per_step.shape[0] < 2:
        raise InsufficientDataError("need at least 2 per-step samples")
    if horizon < 1:
        raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
    n_s, p = per_step.shape
    rng = np.random.default_rng(seed)
    blocks = [per_step]
    for _ in range(1, horizon):
        blocks.append(per_step[rng.permutation(n_s)])
    return DisturbanceSamples(per_step, np.hstack(blocks))


class SmoothingMatrix:
    """Per-step kernel covariance Sigma, replicated down the stacked horizon."""

    def __init__(self, sigma, horizon):
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        if sigma.shape[0] != sigma.shape[1]:
            raise ConfigurationError(f"sigma must be square, got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, atol=1e-12):
            raise ConfigurationError("sigma must be symmetric")
        if np.linalg.eigvalsh(sigma).min() < -_PSD_TOL:
            raise ConfigurationError("sigma must be positive semidefinite")
        if horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
        self.sigma = sigma
        self.horizon = int(horizon)

    @property
    def n_dist(self):
        return self.sigma.shape[0]

    def stacked_diag(self):
        """Diagonal of the stacked covariance blockdiag(Sigma, ..., Sigma)."""
        return np.tile(np.diag(self.sigma), self.horizon)

    def project(self, direction):
        """Quadratic form d' blockdiag(Sigma) d without forming the big matrix."""
        d = np.asarray(direction, dtype=float)
        expected = self.n_dist * self.horizon
        if d.shape != (expected,):
            raise ConfigurationError(
                f"direction must have length {expected}, got {d.shape}")
        blocks = d.reshape(self.horizon, self.n_dist)
        return float(np.einsum("bi,ij,bj->", blocks, self.sigma, blocks))


def select_bandwidth(per_step, horizon):
    """Diagonal plug-in kernel covariance from per-coordinate sample spread.

    Each diagonal entry is (1.06 * s_d * N_s^(-1/5))^2 with s_d the sample
    standard deviation of coordinate d. Constant coordinates get zero
    smoothing and a warning, since projections touching only them cannot
    be inverted.
    """
    per_step = np.atleast_2d(np.asarray(per_step, dtype=float))
    n_s = per_step.shape[0]
    if n_s < 2:
        raise InsufficientDataError("need at least 2 samples to estimate spread")
    stds = per_step.std(axis=0, ddof=1)
    if np.any(stds == 0):
        warnings.warn("constant sample coordinate: smoothing bandwidth set to 0 "
                      "for that coordinate", UserWarning)
    h = 1.06 * stds * n_s ** (-1.0 / 5.0)
    return SmoothingMatrix(np.diag(h**2), horizon)


class ProjectedEcf:
    """One-dimensional smoothed ECF: atoms y_j, weights alpha_j, kernel var."""

    def __init__(self, y, sigma2, weights=None):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.ndim != 1 or y.size == 0:
            raise ConfigurationError("y must be a nonempty vector")
        if sigma2 < 0:
            raise ConfigurationError(f"sigma2 must be >= 0, got {sigma2}")
        if weights is None:
            weights = np.full(y.size, 1.0 / y.size)
        else:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != y.shape:
                raise ConfigurationError("weights must match y in shape")
            if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
                raise ConfigurationError("weights must be positive and sum to 1")
        self.y = y
        self.sigma2 = float(sigma2)
        self.weights = weights

    @property
    def n_samples(self):
        return self.y.size

    def mean(self):
        return float(self.weights @ self.y)


def project(samples, smoothing, direction):
    """Project stacked samples onto a direction, carrying the kernel variance."""
    d = np.asarray(direction, dtype=float)
    width = samples.trajectory.shape[1]
    if d.shape != (width,):
        raise ConfigurationError(f"direction must have length {width}, got {d.shape}")
    if smoothing.n_dist * smoothing.horizon != width:
        raise ConfigurationError("smoothing and samples disagree on stacked width")
    y = samples.trajectory @ d
    sigma2 = smoothing.project(d)
    return ProjectedEcf(y, sigma2)


def evaluate_ecf(ecf, t):
    """Evaluate the smoothed ECF at scalar or vector t (complex output)."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(t_arr.shape, dtype=complex)
    # chunk so the outer product stays small for long node lists
    step = max(1, int(4_000_000 // max(ecf.y.size, 1)))
    for lo in range(0, t_arr.size, step):
        chunk = t_arr[lo:lo + step]
        phase = np.exp(1j * np.outer(chunk, ecf.y)) @ ecf.weights
        out[lo:lo + step] = phase * np.exp(-0.5 * ecf.sigma2 * chunk**2)
    return out[0] if np.isscalar(t) or np.ndim(t) == 0 else out


class MomentEstimates:
    """Stacked-disturbance moment summaries from the smoothed estimate."""

    def __init__(self, mean, second, cov_diag):
        self.mean = np.asarray(mean, dtype=float)
        self.second = np.asarray(second, dtype=float)
        self.cov_diag = np.asarray(cov_diag, dtype=float)
        if not (self.mean.shape == self.second.shape == self.cov_diag.shape):
            raise ConfigurationError("moment vectors must share a shape")


def moments(samples, smoothing, debias_smoothing=True):
    """First and second stacked moments via ECF derivatives at zero.

    The kernel leaves the mean untouched and adds its variance to each
    second moment. With ``debias_smoothing`` the added variance is removed
    again so ``cov_diag`` estimates the raw-data variance; without it the
    covariance describes the smoothed distribution itself.
    """
    expected = smoothing.n_dist * smoothing.horizon
    if samples.trajectory.shape[1] != expected:
        raise ConfigurationError("smoothing and samples disagree on stacked width")
    traj = samples.trajectory
    mean = traj.mean(axis=0)
    sm_diag = smoothing.stacked_diag()
    second = (traj**2).mean(axis=0) + sm_diag
    cov_diag = second - mean**2
    if debias_smoothing:
        cov_diag = cov_diag - sm_diag
    return MomentEstimates(mean, second, cov_diag)


class ConfidenceMargin:
    """Uniform CDF confidence components; ``total`` tightens constraint rows."""

    def __init__(self, alpha, eps_E, eps_D=0.0, eps=0.0):
        if not 0.0 < alpha < 1.0:
            raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
        for name, val in (("eps_E", eps_E), ("eps_D", eps_D), ("eps", eps)):
            if val < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {val}")
        self.alpha = float(alpha)
        self.eps_E = float(eps_E)
        self.eps_D = float(eps_D)
        self.eps = float(eps)

    @property
    def total(self):
        return self.eps + self.eps_E + self.eps_D

    def __repr__(self):
        return (f"ConfidenceMargin(alpha={self.alpha}, eps_E={self.eps_E}, "
                f"eps_D={self.eps_D}, eps={self.eps})")


def dkw_margin(n_samples, alpha=0.05, eps_D=0.0, eps=0.0):
    """Finite-sample uniform CDF deviation bound at confidence 1 - alpha.

    eps_E = sqrt(ln(2 / alpha) / (2 N_s)); the optional eps_D and eps terms
    carry smoothing bias and approximation slack into the same budget.
    """
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be >= 1, got {n_samples}")
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
    eps_E = math.sqrt(math.log(2.0 / alpha) / (2.0 * n_samples))
    return ConfidenceMargin(alpha=alpha, eps_E=eps_E, eps_D=eps_D, eps=eps)


def load_samples_csv(path):
    """Read a headerless CSV of samples, one row per draw."""
    arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    return arr


def write_samples_csv(path, samples):
    """Write samples as headerless CSV with full float precision."""
    np.savetxt(path, np.atleast_2d(np.asarray(samples, dtype=float)),
               delimiter=",", fmt="%.17g")
