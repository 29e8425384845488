"""Certified concave piecewise-affine under-approximation of a CDF table.

Working right to left from the top of the table, each step picks the
longest chord (smallest left anchor) whose deviation from the tabulated
values stays inside the gap budget, shifts it down so it never exceeds
the table, and repeats from the new anchor. The result is the lower
envelope of the accepted chords plus a flat cap at the table's top value,
valid for every x at or above the restriction point x_lb:

    0 <= F(x) - min_r (a_r x + c_r) <= eps      on the tabulated grid.

Segments carry strictly decreasing slopes, so the envelope is concave and
each chord is active exactly on its own span.
"""

import numpy as np

from .errors import (
    ConfigurationError,
    DomainError,
    RestrictionFailureError,
    ToleranceError,
)


class PwaUnderApprox:
    """Concave PWA lower bound: value(x) = min_r slopes[r] * x + intercepts[r].

    The last segment is always flat (zero slope) at the table's top value;
    queries below ``x_lb`` are outside the certified region and rejected.
    """

    def __init__(self, slopes, intercepts, x_lb, eps, max_gap=None):
        slopes = np.asarray(slopes, dtype=float)
        intercepts = np.asarray(intercepts, dtype=float)
        if slopes.ndim != 1 or slopes.shape != intercepts.shape or slopes.size == 0:
            raise ConfigurationError("slopes and intercepts must be matching vectors")
        if not (np.isfinite(slopes).all() and np.isfinite(intercepts).all()):
            raise ConfigurationError("segments must be finite")
        if np.any(np.diff(slopes) >= 0):
            raise ConfigurationError("slopes must be strictly decreasing")
        if slopes[-1] != 0.0:
            raise ConfigurationError("last segment must be flat (slope 0)")
        if eps <= 0:
            raise ConfigurationError(f"eps must be positive, got {eps}")
        self.slopes = slopes
        self.intercepts = intercepts
        self.x_lb = float(x_lb)
        self.eps = float(eps)
        self.max_gap = max_gap if max_gap is None else float(max_gap)

    @property
    def n_segments(self):
        return self.slopes.size

    @property
    def cap(self):
        """Constant value the envelope takes for large x."""
        return float(self.intercepts[-1])


def evaluate_pwa(pwa, x):
    """Envelope value min_r(a_r x + c_r); raises for x below x_lb."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x_arr < pwa.x_lb):
        raise DomainError(
            f"evaluation at x < x_lb = {pwa.x_lb} is outside the certified region")
    vals = (np.outer(x_arr, pwa.slopes) + pwa.intercepts).min(axis=1)
    return float(vals[0]) if np.ndim(x) == 0 else vals


def under_approximate(table, eps=1e-3, max_segments=20):
    """Build the chord envelope of a :class:`CdfTable`.

    Parameters
    ----------
    table : CdfTable
    eps : float
        Gap budget; must exceed twice the table's quadrature tolerance so
        tabulation noise cannot eat the whole budget.
    max_segments : int
        Cap on non-flat segments; when it binds, the certified region
        shrinks (larger x_lb) instead of the gap growing.
    """
    if max_segments < 1:
        raise ConfigurationError(f"max_segments must be >= 1, got {max_segments}")
    qt = table.quad_tol
    if eps <= 2.0 * qt:
        raise ToleranceError(
            f"eps = {eps} must exceed twice the table quad_tol = {qt}")
    x, F = table.grid, table.values
    n = x.size
    eps_adm = eps - qt

    accepted_slopes = []
    accepted_intercepts = []
    idx_p = n - 1
    first = True
    x_lb = x[0]
    while True:
        if idx_p == 0:
            x_lb = x[0]
            break
        if len(accepted_slopes) >= max_segments:
            x_lb = x[idx_p]
            break
        js = np.arange(idx_p)
        slopes = (F[idx_p] - F[js]) / (x[idx_p] - x[js])
        intercepts = F[idx_p] - slopes * x[idx_p]
        # chord error at every grid point k <= idx_p, then restricted to k >= j
        M = F[None, :idx_p + 1] - slopes[:, None] * x[None, :idx_p + 1] \
            - intercepts[:, None]
        emin = np.minimum.accumulate(M[:, ::-1], axis=1)[:, ::-1][js, js]
        emax = np.maximum.accumulate(M[:, ::-1], axis=1)[:, ::-1][js, js]
        shift = np.maximum(0.0, -emin)
        ok = (emin >= -qt) & (emax + shift <= eps_adm)
        if first and idx_p >= 2 and not ok[:idx_p - 1].any():
            raise RestrictionFailureError(
                f"no chord with a left anchor below x = {x[idx_p - 1]:.6g} "
                f"under-approximates the table near its right end "
                f"[{x[idx_p - 1]:.6g}, {x[idx_p]:.6g}]; the concave region "
                "does not reach the top of the table")
        if not ok.any():
            x_lb = x[idx_p]
            break
        w = int(np.argmax(ok))
        a_new = float(slopes[w])
        if a_new <= 0.0 or (accepted_slopes and a_new <= accepted_slopes[-1]):
            # a flat or slope-inverting chord would break concavity of the
            # envelope; stop and certify from here
            x_lb = x[idx_p]
            break
        accepted_slopes.append(a_new)
        accepted_intercepts.append(float(intercepts[w] - shift[w]))
        if w == idx_p - 1:
            x_lb = x[w]
            break
        idx_p = w
        first = False

    # left-to-right segment order: steepest chord first, flat cap last
    seg_slopes = accepted_slopes[::-1] + [0.0]
    seg_intercepts = accepted_intercepts[::-1] + [float(F[-1])]
    pwa = PwaUnderApprox(seg_slopes, seg_intercepts, x_lb=x_lb, eps=eps)
    mask = x >= pwa.x_lb
    pwa.max_gap = float((F[mask] - evaluate_pwa(pwa, x[mask])).max())
    return pwa


def write_pwa_csv(pwa, path):
    """Segments as (slope, intercept) rows; x_lb and eps in a comment header."""
    with open(path, "w") as fh:
        fh.write(f"# x_lb={pwa.x_lb:.17g}, eps={pwa.eps:.17g}\n")
        for a, c in zip(pwa.slopes, pwa.intercepts):
            fh.write(f"{a:.17g},{c:.17g}\n")


def read_pwa_csv(path):
    """Read an envelope written by :func:`write_pwa_csv`."""
    with open(path) as fh:
        header = fh.readline()
    if not header.startswith("#") or "x_lb=" not in header or "eps=" not in header:
        raise ConfigurationError(f"{path}: missing x_lb/eps header line")
    fields = dict(part.strip().split("=") for part in header[1:].split(","))
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return PwaUnderApprox(data[:, 0], data[:, 1], x_lb=float(fields["x_lb"]),
                          eps=float(fields["eps"]))
