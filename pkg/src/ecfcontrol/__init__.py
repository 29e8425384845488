"""Sample-driven chance-constrained control for linear systems.

The toolkit estimates the distribution of stacked disturbances from raw
samples through a smoothed empirical characteristic function, inverts it
into constraint-aligned CDF tables, certifies concave piecewise-affine
under-approximations of those tables, and solves the resulting convex
risk-allocated input design problem, with a Monte Carlo harness to check
the planned inputs against fresh disturbance draws.
"""

__version__ = "0.1.0"
