"""B-spline bases: evaluation, Gram matrices, metric orthonormalization.

Bases are clamped (open-uniform): the boundary knots are repeated
``degree + 1`` times, so evaluation at the domain endpoints is exact and
the basis spans all splines of the given degree over the interior knot
partition.  The Gram matrix of the basis under the L2 inner product
defines the metric in which amplitude components are orthonormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .exceptions import DegeneracyError

__all__ = ["SplineBasis", "eval_basis", "eval_matrix", "gram", "orthonormalize"]


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis of a given degree on a closed interval.

    Parameters
    ----------
    domain : (float, float)
        Closed interval ``[a, b]`` the basis lives on.
    interior_knots : tuple of float
        Strictly increasing knots in the open interval ``(a, b)``.
    degree : int, default=3
        Polynomial degree (3 = cubic).

    The dimension is ``len(interior_knots) + degree + 1``.
    """

    domain: tuple[float, float]
    interior_knots: tuple[float, ...] = ()
    degree: int = 3

    def __post_init__(self):
        a, b = float(self.domain[0]), float(self.domain[1])
        if not np.isfinite([a, b]).all() or a >= b:
            raise ValueError(f"domain must be a finite interval [a, b] with a < b, got ({a}, {b})")
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        knots = tuple(float(k) for k in self.interior_knots)
        if any(not np.isfinite(k) for k in knots):
            raise ValueError("interior knots must be finite")
        if any(k <= a or k >= b for k in knots):
            raise ValueError("interior knots must lie strictly inside the domain")
        if any(k2 <= k1 for k1, k2 in zip(knots, knots[1:])):
            raise ValueError("interior knots must be strictly increasing")
        object.__setattr__(self, "domain", (a, b))
        object.__setattr__(self, "interior_knots", knots)

    @classmethod
    def uniform(cls, domain, n_interior: int, degree: int = 3) -> "SplineBasis":
        """Basis with ``n_interior`` equally spaced interior knots."""
        a, b = float(domain[0]), float(domain[1])
        knots = np.linspace(a, b, n_interior + 2)[1:-1]
        return cls(domain=(a, b), interior_knots=tuple(knots), degree=degree)

    @property
    def dim(self) -> int:
        return len(self.interior_knots) + self.degree + 1

    @property
    def knot_vector(self) -> np.ndarray:
        """Full clamped knot vector with endpoint multiplicity degree + 1."""
        a, b = self.domain
        k = self.degree
        return np.concatenate([np.full(k + 1, a), self.interior_knots, np.full(k + 1, b)])

    def _check_points(self, points) -> np.ndarray:
        x = np.atleast_1d(np.asarray(points, dtype=float))
        a, b = self.domain
        tol = 1e-12 * (b - a)
        if x.size and (x.min() < a - tol or x.max() > b + tol):
            bad = x[(x < a - tol) | (x > b + tol)]
            raise ValueError(f"evaluation points outside domain [{a}, {b}]: {bad[:5]}")
        return np.clip(x, a, b)


def eval_matrix(basis: SplineBasis, points, deriv: int = 0) -> np.ndarray:
    """Evaluate all basis functions (or their first derivative) at ``points``.

    Returns an array of shape ``(len(points), basis.dim)``.
    """
    x = basis._check_points(points)
    t = basis.knot_vector
    k = basis.degree
    q = basis.dim
    if x.size == 0:
        return np.zeros((0, q))
    if deriv == 0:
        return BSpline.design_matrix(x, t, k).toarray()
    if deriv != 1:
        raise ValueError("only deriv in {0, 1} is supported")
    if k == 0:
        return np.zeros((x.size, q))
    # d/ds B_{j,k} = k * (B_{j,k-1}/(t_{j+k}-t_j) - B_{j+1,k-1}/(t_{j+k+1}-t_{j+1}))
    lower = BSpline.design_matrix(x, t, k - 1).toarray()  # (n, q+1)
    span1 = t[k : k + q] - t[:q]
    span2 = t[k + 1 : k + q + 1] - t[1 : q + 1]
    w1 = np.where(span1 > 0, k / np.where(span1 > 0, span1, 1.0), 0.0)
    w2 = np.where(span2 > 0, k / np.where(span2 > 0, span2, 1.0), 0.0)
    return lower[:, :q] * w1 - lower[:, 1:] * w2


def eval_basis(basis: SplineBasis, s: float) -> np.ndarray:
    """Basis values at a single point; a vector of length ``basis.dim``."""
    return eval_matrix(basis, [s])[0]


def gram(basis: SplineBasis) -> np.ndarray:
    """Gram matrix ``G[i, j] = integral of b_i * b_j`` over the domain.

    Computed by Gauss-Legendre quadrature with ``degree + 2`` nodes per
    knot interval, which is exact for the piecewise-polynomial integrand
    (degree ``2 * degree`` per piece).
    """
    a, b = basis.domain
    breaks = np.concatenate([[a], basis.interior_knots, [b]])
    nodes, weights = np.polynomial.legendre.leggauss(basis.degree + 2)
    mid = 0.5 * (breaks[1:] + breaks[:-1])
    half = 0.5 * (breaks[1:] - breaks[:-1])
    pts = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    wts = (half[:, None] * weights[None, :]).ravel()
    design = eval_matrix(basis, pts)
    out = (design * wts[:, None]).T @ design
    return 0.5 * (out + out.T)


def orthonormalize(coef: np.ndarray, metric: np.ndarray) -> np.ndarray:
    """Orthonormalize the columns of ``coef`` in the ``metric`` inner product.

    Uses the symmetric inverse square root ``coef @ (coef^T M coef)^{-1/2}``,
    which treats all columns symmetrically and preserves their span. Each
    returned column is signed so that its largest-magnitude entry is
    positive. Column order is preserved.

    Raises
    ------
    DegeneracyError
        If ``coef`` does not have full column rank in the metric.
    """
    coef = np.asarray(coef, dtype=float)
    if coef.ndim != 2:
        raise ValueError("coef must be a 2-d array")
    if coef.shape[1] == 0:
        return coef.copy()
    inner = coef.T @ metric @ coef
    evals, evecs = np.linalg.eigh(0.5 * (inner + inner.T))
    if evals.min() <= 1e-12 * max(evals.max(), 1.0):
        raise DegeneracyError("coefficient matrix is rank deficient in the given metric")
    inv_sqrt = (evecs * evals**-0.5) @ evecs.T
    out = coef @ inv_sqrt
    dominant = np.abs(out).argmax(axis=0)
    signs = np.sign(out[dominant, np.arange(out.shape[1])])
    signs[signs == 0] = 1.0
    return out * signs
