"""CDF recovery from a one-dimensional smoothed ECF.

The distribution function is recovered through the inversion integral

    F(x) = 1/2 - (1/pi) * integral_0^inf Im(exp(-i t x) ecf(t)) / t dt

evaluated on a grid of query points. The integrand is smooth (the t -> 0
limit is mean - x) and Gaussian-damped, so the integral is split into a
small series-expanded panel at the origin, an adaptive Gauss-Legendre
section, and an analytically bounded discarded tail. All grid points share
quadrature nodes, which makes the grid sweep a pair of matrix products
per panel.
"""

import numpy as np

from .errors import (
    AccuracyError,
    ConfigurationError,
    DegenerateSmoothingError,
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(15)
_MAX_DEPTH = 40
_ATOM_CHUNK = 65536


class CdfTable:
    """Monotone CDF values tabulated on an increasing grid.

    Values are cleaned on construction: excursions outside [0, 1] or
    monotonicity dips within ``quad_tol`` of zero are flattened away,
    anything larger raises :class:`AccuracyError`.
    """

    def __init__(self, grid, values, quad_tol):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ConfigurationError("grid must be a vector with >= 2 points")
        if values.shape != grid.shape:
            raise ConfigurationError("grid and values must match in shape")
        if np.any(np.diff(grid) <= 0):
            raise ConfigurationError("grid must be strictly increasing")
        if quad_tol <= 0:
            raise ConfigurationError(f"quad_tol must be positive, got {quad_tol}")
        self.grid = grid
        self.values = _finalize_values(values, quad_tol)
        self.quad_tol = float(quad_tol)

    @property
    def domain(self):
        return (float(self.grid[0]), float(self.grid[-1]))

    @property
    def n_points(self):
        return self.grid.size

    @classmethod
    def from_function(cls, fn, domain, n_points, quad_tol=1e-9):
        """Tabulate a callable CDF directly (validation testing, analytic laws)."""
        x_min, x_max = map(float, domain)
        if not x_min < x_max:
            raise ConfigurationError(f"empty domain ({x_min}, {x_max})")
        grid = np.linspace(x_min, x_max, int(n_points))
        return cls(grid, np.asarray(fn(grid), dtype=float), quad_tol)

    def interpolate(self, x):
        """Piecewise-linear lookup, clamped to the end values off-domain."""
        return np.interp(x, self.grid, self.values)


def _finalize_values(values, quad_tol):
    if not np.all(np.isfinite(values)):
        raise AccuracyError("non-finite CDF values")
    low, high = values.min(), values.max()
    if low < -10.0 * quad_tol or high > 1.0 + 10.0 * quad_tol:
        raise AccuracyError(
            f"CDF values leave [0, 1] by more than 10 * quad_tol "
            f"(range [{low:.3e}, {high:.3e}])",
            achieved=max(-low, high - 1.0))
    dips = np.diff(values)
    worst = dips.min() if dips.size else 0.0
    if worst < -quad_tol:
        raise AccuracyError(
            f"CDF values decrease by {-worst:.3e} (> quad_tol {quad_tol:.1e})",
            achieved=-worst)
    cleaned = np.clip(values, 0.0, 1.0)
    return np.maximum.accumulate(cleaned)


def _ecf_trig_sums(y, weights, nodes):
    # S(t) = sum_j w_j sin(t y_j), C(t) likewise with cos, chunked over atoms
    S = np.zeros(nodes.shape)
    C = np.zeros(nodes.shape)
    for lo in range(0, y.size, _ATOM_CHUNK):
        ty = np.outer(nodes, y[lo:lo + _ATOM_CHUNK])
        w = weights[lo:lo + _ATOM_CHUNK]
        S += np.sin(ty) @ w
        C += np.cos(ty) @ w
    return S, C


def gil_pelaez_integrand(ecf, t, x):
    """Inversion integrand Im(exp(-i t x) ecf(t)) / t, finite at t = 0.

    The limit as t -> 0 is (mean - x), which is what t = 0 returns.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(t_arr.shape)
    zero = t_arr == 0.0
    out[zero] = ecf.mean() - x
    tnz = t_arr[~zero]
    if tnz.size:
        S, C = _ecf_trig_sums(ecf.y, ecf.weights, tnz)
        damp = np.exp(-0.5 * ecf.sigma2 * tnz**2) / tnz
        out[~zero] = (S * np.cos(tnz * x) - C * np.sin(tnz * x)) * damp
    return out[0] if np.ndim(t) == 0 else out


def _truncation_point(b, quad_tol):
    # discarded tail is bounded by exp(-b T^2) / (2 b T^2); keep it under
    # pi * quad_tol / 4 so the final 1/pi factor leaves quad_tol / 4
    target = np.pi * quad_tol / 4.0
    T = max(1.0, 1.0 / np.sqrt(b))
    for _ in range(200):
        if np.exp(-b * T * T) / (2.0 * b * T * T) <= target:
            return T
        T *= 1.25
    raise AccuracyError("could not bound the inversion tail")


def _panel_integral(lo, hi, y, weights, b, grid):
    half = 0.5 * (hi - lo)
    nodes = 0.5 * (hi + lo) + half * _GL_NODES
    S, C = _ecf_trig_sums(y, weights, nodes)
    damp = np.exp(-b * nodes**2) / nodes
    tx = np.outer(nodes, grid)
    F = (S * damp)[:, None] * np.cos(tx) - (C * damp)[:, None] * np.sin(tx)
    return half * (_GL_WEIGHTS @ F)


def _gil_pelaez_values(ecf, grid, quad_tol, truncation_multiplier):
    y, weights, b = ecf.y, ecf.weights, 0.5 * ecf.sigma2
    m1 = float(weights @ y)
    m2 = float(weights @ y**2)
    m3 = float(weights @ y**3)

    T = _truncation_point(b, quad_tol) * truncation_multiplier
    tail_bound = np.exp(-b * T * T) / (2.0 * b * T * T)

    # series panel [0, t0]: integrand = (m1 - x) - c3(x) t^2 + O(t^4)
    amax = max(y.max() - grid.min(), grid.max() - y.min())
    c4 = amax**5 / 120.0 + amax**3 * b / 6.0 + amax * b**2 / 2.0
    t0 = (5.0 * quad_tol / (100.0 * c4)) ** 0.2 if c4 > 0 else T / 8.0
    t0 = min(t0, T / 8.0)
    taylor_bound = c4 * t0**5 / 5.0

    mean_term = m1 - grid
    cubic_term = (m3 - 3.0 * m2 * grid + 3.0 * m1 * grid**2 - grid**3) / 6.0 \
        + b * mean_term
    series = mean_term * t0 - cubic_term * t0**3 / 3.0

    # adaptive Gauss-Legendre over [t0, T]: error budget proportional to width
    total_width = T - t0
    unit_tol = (quad_tol / 4.0) / total_width
    osc_freq = max(amax, 1e-12)
    n_init = max(4, int(np.ceil(total_width * osc_freq / (5.0 * np.pi))))
    edges = np.linspace(t0, T, n_init + 1)
    stack = [(edges[i], edges[i + 1], 0,
              _panel_integral(edges[i], edges[i + 1], y, weights, b, grid))
             for i in range(n_init)]
    osc = np.zeros(grid.shape)
    err_sum = 0.0
    while stack:
        lo, hi, depth, val = stack.pop()
        mid = 0.5 * (lo + hi)
        left = _panel_integral(lo, mid, y, weights, b, grid)
        right = _panel_integral(mid, hi, y, weights, b, grid)
        err = float(np.abs(val - left - right).max())
        if err <= unit_tol * (hi - lo) or depth >= _MAX_DEPTH:
            osc += left + right
            err_sum += err
        else:
            stack.append((lo, mid, depth + 1, left))
            stack.append((mid, hi, depth + 1, right))

    estimate = (err_sum + taylor_bound + tail_bound) / np.pi
    if estimate > quad_tol:
        raise AccuracyError(
            f"quadrature error estimate {estimate:.3e} exceeds quad_tol",
            achieved=estimate)
    return 0.5 - (series + osc) / np.pi


def invert(ecf, n_points=1000, quad_tol=1e-7, domain=None,
           truncation_multiplier=1.0):
    """Tabulate the CDF of a :class:`ProjectedEcf` on an even grid.

    Parameters
    ----------
    ecf : ProjectedEcf
        Requires a strictly positive kernel variance; without smoothing
        the inversion integrand decays too slowly to truncate.
    n_points : int
        Grid resolution (>= 2).
    quad_tol : float
        Certified bound on the quadrature error of each tabulated value.
    domain : (float, float), optional
        Grid range; defaults to the projected sample range.
    truncation_multiplier : float
        Scales the analytic truncation point (stability checks).
    """
    if ecf.sigma2 <= 0.0:
        raise DegenerateSmoothingError(
            "projected smoothing variance is zero; this direction's "
            "distribution cannot be inverted")
    if quad_tol <= 0.0:
        raise ConfigurationError(f"quad_tol must be positive, got {quad_tol}")
    if n_points < 2:
        raise ConfigurationError(f"n_points must be >= 2, got {n_points}")
    if truncation_multiplier < 1.0:
        raise ConfigurationError("truncation_multiplier must be >= 1")
    if domain is None:
        domain = (float(ecf.y.min()), float(ecf.y.max()))
        if domain[0] >= domain[1]:
            raise ConfigurationError(
                "sample range is a single point; pass an explicit domain")
    x_min, x_max = map(float, domain)
    if not x_min < x_max:
        raise ConfigurationError(f"domain must satisfy x_min < x_max, got {domain}")
    grid = np.linspace(x_min, x_max, int(n_points))
    raw = _gil_pelaez_values(ecf, grid, quad_tol, truncation_multiplier)
    return CdfTable(grid, raw, quad_tol)


def write_cdf_csv(table, path):
    """Two-column CSV (x, value) with quad_tol carried in a comment header."""
    with open(path, "w") as fh:
        fh.write(f"# quad_tol={table.quad_tol:.17g}\n")
        for x, v in zip(table.grid, table.values):
            fh.write(f"{x:.17g},{v:.17g}\n")


def read_cdf_csv(path):
    """Read a table written by :func:`write_cdf_csv`."""
    quad_tol = 1e-7
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("#") and "quad_tol=" in first:
            quad_tol = float(first.split("quad_tol=")[1].strip())
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return CdfTable(data[:, 0], data[:, 1], quad_tol)
