"""Monte-Carlo pinned-path sampling on constant-curvature spaces.

Broken-geodesic paths with Gaussian increments, matrix Jacobi flows along them,
and an importance-weighted estimator whose mass reproduces the heat kernel.
"""

from . import geom, jacobi, damped, paths, measures, diagnostics

__all__ = ["geom", "jacobi", "damped", "paths", "measures", "diagnostics"]
__version__ = "0.1.0"
