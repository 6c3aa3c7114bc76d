"""Quadrature rules on the reference triangle and the unit interval.

Triangle rules are conical products (Gauss-Jacobi in one direction,
Gauss-Legendre in the other, composed through the Duffy map), so the rule
built for degree d integrates every bivariate polynomial of total degree <= d
exactly.  Weights are positive and normalised to sum to one: the integral of
f over a physical triangle T is approximated by

    area(T) * sum_i w_i * f(x_i)

with the points x_i mapped affinely from the reference triangle
conv{(0,0), (1,0), (0,1)}.  Edge rules follow the same convention on [0, 1]:
the integral over an edge E is length(E) * sum_i w_i * f(x_i).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class QuadratureRule:
    """Positive-weight rule on the reference triangle.

    points : (nq, 2) reference coordinates (xi, eta)
    bary   : (nq, 3) barycentric coordinates (1-xi-eta, xi, eta)
    weights: (nq,) positive, summing to one
    degree : total polynomial degree integrated exactly
    """

    points: np.ndarray
    bary: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def n_points(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class EdgeRule:
    """Gauss-Legendre rule on [0, 1] with weights summing to one."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def n_points(self) -> int:
        return self.weights.size


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadratureRule:
    """Conical-product rule exact for total degree <= degree."""
    if degree < 0:
        raise ValueError(f"quadrature degree must be >= 0, got {degree}")
    n = max(1, (degree + 2) // 2)  # ceil((degree+1)/2)
    # xi direction carries the Jacobi weight (1-xi) coming from the Duffy map.
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xi = 0.5 * (xj + 1.0)
    wxi = 0.25 * wj
    xl, wl = roots_legendre(n)
    s = 0.5 * (xl + 1.0)
    ws = 0.5 * wl
    # x = xi, y = s * (1 - xi); weight already includes the Jacobian (1 - xi).
    X = np.repeat(xi, n)
    Y = np.tile(s, n) * (1.0 - X)
    W = (wxi[:, None] * ws[None, :]).ravel()
    W = W / W.sum()  # reference-area normalisation (exact sum is 1/2)
    pts = np.column_stack([X, Y])
    bary = np.column_stack([1.0 - X - Y, X, Y])
    pts.flags.writeable = False
    bary.flags.writeable = False
    W.flags.writeable = False
    return QuadratureRule(points=pts, bary=bary, weights=W, degree=2 * n - 1)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> EdgeRule:
    """Gauss-Legendre rule on [0, 1] exact for degree <= degree."""
    if degree < 0:
        raise ValueError(f"quadrature degree must be >= 0, got {degree}")
    n = max(1, (degree + 2) // 2)
    x, w = roots_legendre(n)
    pts = 0.5 * (x + 1.0)
    wts = 0.5 * w
    wts = wts / wts.sum()
    pts.flags.writeable = False
    wts.flags.writeable = False
    return EdgeRule(points=pts, weights=wts, degree=2 * n - 1)
