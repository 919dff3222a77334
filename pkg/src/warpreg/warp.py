"""Monotone Hermite-spline warping functions and log-ratio coordinates.

A warp on ``[a, b]`` is the piecewise-cubic Hermite interpolant of the
points ``(a, a), (k_1, tau_1), ..., (k_r, tau_r), (b, b)`` where the
``k_j`` are fixed knots and the ``tau_j`` are free interior values.
Slopes at all nodes come from a Fritsch-Carlson rule (three-point
finite-difference initialization followed by projection onto the
monotone region), so the interpolant is increasing on the whole domain
and fixes both endpoints.

Because the interior values must stay increasing, estimation works in
their unconstrained log-ratio (Jupp) coordinates
``theta_j = log((tau_{j+1} - tau_j) / (tau_j - tau_{j-1}))``; the pair
:func:`jupp` / :func:`jupp_inv` converts back and forth.

Most functions have an internal batched form operating on arrays of
warps at once; the public API wraps the batch kernels for one warp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "WarpSpec",
    "Warp",
    "hermite_h",
    "hermite_basis",
    "fc_slopes",
    "fc_slopes_jacobian",
    "make_warp",
    "identity_warp",
    "warp_eval",
    "warp_deriv",
    "warp_invert",
    "jupp",
    "jupp_inv",
    "jupp_inv_jacobian",
]

_INVERT_TOL = 1e-13  # relative to domain length; spec'd contract is 1e-10


@dataclass(frozen=True)
class WarpSpec:
    """Knot layout of a warping family on a closed interval.

    ``knots`` are strictly increasing and strictly inside the domain;
    their count ``r`` is the dimension of the family.
    """

    domain: tuple[float, float]
    knots: tuple[float, ...]

    def __post_init__(self):
        a, b = float(self.domain[0]), float(self.domain[1])
        if not np.isfinite([a, b]).all() or a >= b:
            raise ValueError("domain must be a finite interval [a, b] with a < b")
        knots = tuple(float(k) for k in self.knots)
        if len(knots) == 0:
            raise ValueError("a warp family needs at least one interior knot")
        ext = (a,) + knots + (b,)
        if any(k2 <= k1 for k1, k2 in zip(ext, ext[1:])):
            raise ValueError("knots must be strictly increasing inside the domain")
        object.__setattr__(self, "domain", (a, b))
        object.__setattr__(self, "knots", knots)

    @property
    def r(self) -> int:
        return len(self.knots)

    @property
    def grid(self) -> np.ndarray:
        """Extended node sequence (a, k_1, ..., k_r, b)."""
        a, b = self.domain
        return np.concatenate([[a], self.knots, [b]])


@dataclass(frozen=True)
class Warp:
    """One member of a warping family: interior values plus node slopes."""

    spec: WarpSpec
    values: np.ndarray  # (r,) increasing interior values
    slopes: np.ndarray  # (r + 2,) derivative at a, knots, b

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "slopes", np.asarray(self.slopes, dtype=float))


def hermite_h(s):
    """The two cubic Hermite shape functions ``(1+2s)(1-s)^2`` and ``s(1-s)^2``."""
    s = np.asarray(s, dtype=float)
    one_minus = (1.0 - s) ** 2
    return (1.0 + 2.0 * s) * one_minus, s * one_minus


def hermite_basis(spec: WarpSpec, j: int, s):
    """Value and slope basis functions ``(alpha_j(s), beta_j(s))`` at ``s``.

    ``alpha_j`` is 1 at node ``j`` and 0 at every other node; ``beta_j``
    vanishes at all nodes and carries the slope degree of freedom, scaled
    by the local interval length.  Index ``j`` runs over the extended node
    sequence, ``0 <= j <= r + 1``.
    """
    if not 0 <= j <= spec.r + 1:
        raise ValueError(f"basis index {j} outside 0..{spec.r + 1}")
    alpha, beta = _hermite_basis_matrix(spec, np.atleast_1d(np.asarray(s, dtype=float)))
    a_j, b_j = alpha[:, j], beta[:, j]
    if np.ndim(s) == 0:
        return a_j[0], b_j[0]
    return a_j, b_j


def _hermite_basis_matrix(spec: WarpSpec, s: np.ndarray):
    """All alpha_j(s) and beta_j(s) stacked as (len(s), r+2) arrays."""
    x = spec.grid
    piece = np.clip(np.searchsorted(x, s, side="right") - 1, 0, spec.r)
    h = x[piece + 1] - x[piece]
    loc = (s - x[piece]) / h
    h00_l, h10_l = hermite_h(loc)
    h00_r, h10_r = hermite_h(1.0 - loc)
    n = s.size
    alpha = np.zeros((n, spec.r + 2))
    beta = np.zeros((n, spec.r + 2))
    rows = np.arange(n)
    # left node of the containing piece sees the "ascending" branch,
    # right node the reflected one; beta at the right node picks up a sign
    alpha[rows, piece] = h00_l
    alpha[rows, piece + 1] = h00_r
    beta[rows, piece] = h * h10_l
    beta[rows, piece + 1] = -h * h10_r
    return alpha, beta


# ---------------------------------------------------------------------------
# Fritsch-Carlson slopes


def _fc_slopes_batch(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Monotone slopes for a batch of warps; ``values`` has shape (B, r)."""
    a, b = grid[0], grid[-1]
    B = values.shape[0]
    y = np.concatenate(
        [np.full((B, 1), a), values, np.full((B, 1), b)], axis=1
    )
    h = np.diff(grid)
    sec = np.diff(y, axis=1) / h  # (B, r+1)
    d = np.empty((B, grid.size))
    # three-point finite differences; one-sided parabolic rule at the ends
    d[:, 1:-1] = (h[1:] * sec[:, :-1] + h[:-1] * sec[:, 1:]) / (h[:-1] + h[1:])
    d[:, 0] = ((2.0 * h[0] + h[1]) * sec[:, 0] - h[0] * sec[:, 1]) / (h[0] + h[1])
    d[:, -1] = ((2.0 * h[-1] + h[-2]) * sec[:, -1] - h[-1] * sec[:, -2]) / (h[-1] + h[-2])
    np.maximum(d, 0.0, out=d)
    # project each interval's slope pair into the circle of radius 3
    # (relative to the secant), which is sufficient for monotonicity
    for j in range(grid.size - 1):
        norm = np.hypot(d[:, j], d[:, j + 1])
        limit = 3.0 * sec[:, j]
        scale = np.where(norm > limit, limit / np.where(norm > 0, norm, 1.0), 1.0)
        d[:, j] *= scale
        d[:, j + 1] *= scale
    return d


def fc_slopes(spec: WarpSpec, values) -> np.ndarray:
    """Slopes at all nodes making the Hermite interpolant increasing.

    Raises
    ------
    ValueError
        If the extended sequence (a, values, b) is not strictly increasing.
    """
    tau = np.asarray(values, dtype=float)
    _check_values(spec, tau)
    return _fc_slopes_batch(spec.grid, tau[None, :])[0]


def fc_slopes_jacobian(spec: WarpSpec, values):
    """Slopes together with their Jacobian in the interior values.

    At the (measure-zero) boundaries of the clipping / projection branches
    the derivative of the active branch is used.
    """
    tau = np.asarray(values, dtype=float)
    _check_values(spec, tau)
    grid = spec.grid
    a, b = grid[0], grid[-1]
    r = spec.r
    y = np.concatenate([[a], tau, [b]])
    h = np.diff(grid)
    sec = np.diff(y) / h
    # d sec_j / d tau_k, nonzero only for k = j-1, j (0-based tau index)
    jac_sec = np.zeros((r + 1, r))
    for j in range(r + 1):
        if j - 1 >= 0:
            jac_sec[j, j - 1] = -1.0 / h[j]
        if j < r:
            jac_sec[j, j] = 1.0 / h[j]
    d = np.empty(r + 2)
    jac = np.zeros((r + 2, r))
    w_lo = h[1:] / (h[:-1] + h[1:])
    w_hi = h[:-1] / (h[:-1] + h[1:])
    d[1:-1] = w_lo * sec[:-1] + w_hi * sec[1:]
    jac[1:-1] = w_lo[:, None] * jac_sec[:-1] + w_hi[:, None] * jac_sec[1:]
    d[0] = ((2.0 * h[0] + h[1]) * sec[0] - h[0] * sec[1]) / (h[0] + h[1])
    jac[0] = ((2.0 * h[0] + h[1]) * jac_sec[0] - h[0] * jac_sec[1]) / (h[0] + h[1])
    d[-1] = ((2.0 * h[-1] + h[-2]) * sec[-1] - h[-1] * sec[-2]) / (h[-1] + h[-2])
    jac[-1] = ((2.0 * h[-1] + h[-2]) * jac_sec[-1] - h[-1] * jac_sec[-2]) / (h[-1] + h[-2])
    clipped = d < 0.0
    d[clipped] = 0.0
    jac[clipped] = 0.0
    for j in range(r + 1):
        norm = np.hypot(d[j], d[j + 1])
        limit = 3.0 * sec[j]
        if norm <= limit or norm == 0.0:
            continue
        jac_norm = (d[j] * jac[j] + d[j + 1] * jac[j + 1]) / norm
        jac_limit = 3.0 * jac_sec[j]
        scale = limit / norm
        jac_scale = (jac_limit * norm - limit * jac_norm) / norm**2
        jac[j] = scale * jac[j] + d[j] * jac_scale
        jac[j + 1] = scale * jac[j + 1] + d[j + 1] * jac_scale
        d[j] *= scale
        d[j + 1] *= scale
    return d, jac


def _check_values(spec: WarpSpec, tau: np.ndarray):
    a, b = spec.domain
    if tau.shape != (spec.r,):
        raise ValueError(f"expected {spec.r} interior values, got shape {tau.shape}")
    ext = np.concatenate([[a], tau, [b]])
    if not np.all(np.diff(ext) > 0):
        raise ValueError("interior values must be strictly increasing inside the domain")


def make_warp(spec: WarpSpec, values) -> Warp:
    """Warp through the given interior values with Fritsch-Carlson slopes."""
    tau = np.asarray(values, dtype=float)
    return Warp(spec, tau, fc_slopes(spec, tau))


def identity_warp(spec: WarpSpec) -> Warp:
    """The identity map as a member of the family."""
    return make_warp(spec, np.array(spec.knots))


# ---------------------------------------------------------------------------
# Evaluation and inversion (batched kernels + scalar wrappers)


def _piece_coeffs(grid: np.ndarray, values: np.ndarray, slopes: np.ndarray):
    """Local cubic coefficients per piece for a batch of warps.

    Returns (y, c1, c2, c3) where on piece j
    ``w(s) = y[..., j] + c1[..., j] t + c2[..., j] t^2 + c3[..., j] t^3``
    with ``t = s - grid[j]``.
    """
    a, b = grid[0], grid[-1]
    B = values.shape[0]
    y = np.concatenate([np.full((B, 1), a), values, np.full((B, 1), b)], axis=1)
    h = np.diff(grid)
    sec = np.diff(y, axis=1) / h
    d_lo = slopes[:, :-1]
    d_hi = slopes[:, 1:]
    c2 = (3.0 * sec - 2.0 * d_lo - d_hi) / h
    c3 = (d_lo + d_hi - 2.0 * sec) / h**2
    return y, d_lo, c2, c3


def _eval_batch(grid, values, slopes, s, deriv=0):
    """Evaluate a batch of warps; ``s`` broadcasts against the batch."""
    y, c1, c2, c3 = _piece_coeffs(grid, values, slopes)
    piece = np.clip(np.searchsorted(grid, s, side="right") - 1, 0, grid.size - 2)
    t = s - grid[piece]
    if s.ndim == 2 and y.shape[0] == s.shape[0]:
        rows = np.arange(y.shape[0])[:, None]
        yj, c1j, c2j, c3j = y[rows, piece], c1[rows, piece], c2[rows, piece], c3[rows, piece]
        y_hi = y[rows, piece + 1]
    else:
        yj, c1j, c2j, c3j = y[:, piece], c1[:, piece], c2[:, piece], c3[:, piece]
        y_hi = y[:, piece + 1]
    if deriv == 0:
        out = yj + t * (c1j + t * (c2j + t * c3j))
        # nodal values interpolate exactly; snap points sitting on a node
        return np.where(s == grid[piece + 1], y_hi, out)
    return c1j + t * (2.0 * c2j + t * 3.0 * c3j)


def _invert_batch(grid, values, slopes, targets):
    """Solve ``w(s) = t`` per batch row; ``targets`` has shape (B, m)."""
    a, b = grid[0], grid[-1]
    B = targets.shape[0]
    y = np.concatenate([np.full((B, 1), a), values, np.full((B, 1), b)], axis=1)
    t = np.clip(targets, a, b)
    # containing piece: number of node values <= target, minus one
    piece = np.clip(
        (t[:, :, None] >= y[:, None, :]).sum(axis=2) - 1, 0, grid.size - 2
    )
    lo = np.broadcast_to(grid[piece], t.shape).copy()
    hi = np.broadcast_to(grid[piece + 1], t.shape).copy()
    rows = np.arange(B)[:, None]
    y_lo = y[rows, piece]
    y_hi = y[rows, piece + 1]
    gap = np.where(y_hi > y_lo, y_hi - y_lo, 1.0)
    s = lo + (t - y_lo) / gap * (hi - lo)
    tol = _INVERT_TOL * (b - a)
    # a small residual is not enough on its own: where the warp is nearly
    # flat it vanishes long before the preimage is located, so require the
    # implied location error |f| / w'(s) to be small, or a collapsed bracket
    width_tol = 1e-14 * (b - a)
    for _ in range(200):
        f = _eval_batch(grid, values, slopes, s) - t
        df = _eval_batch(grid, values, slopes, s, deriv=1)
        close = np.abs(f) <= tol
        located = (hi - lo <= width_tol) | (np.abs(f) <= df * width_tol)
        if np.all(close & located):
            break
        above = f > 0
        hi = np.where(above, s, hi)
        lo = np.where(above, lo, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(df > 0, f / np.where(df > 0, df, 1.0), np.inf)
        cand = s - step
        bad = ~np.isfinite(cand) | (cand <= lo) | (cand >= hi)
        s = np.where(bad, 0.5 * (lo + hi), cand)
    return s


def warp_eval(warp: Warp, s):
    """Evaluate the warp; accepts a scalar or an array of points."""
    pts = _check_domain(warp.spec, s)
    out = _eval_batch(warp.spec.grid, warp.values[None, :], warp.slopes[None, :], pts[None, :])[0]
    return out[0] if np.ndim(s) == 0 else out


def warp_deriv(warp: Warp, s):
    """First derivative of the warp at ``s``."""
    pts = _check_domain(warp.spec, s)
    out = _eval_batch(
        warp.spec.grid, warp.values[None, :], warp.slopes[None, :], pts[None, :], deriv=1
    )[0]
    return out[0] if np.ndim(s) == 0 else out


def warp_invert(warp: Warp, t):
    """Solve ``warp_eval(s) = t``; accepts a scalar or an array.

    Monotonicity plus endpoint interpolation guarantee a unique solution
    for every ``t`` in the domain; safeguarded Newton/bisection is used
    on the containing cubic piece.
    """
    pts = _check_domain(warp.spec, t)
    out = _invert_batch(warp.spec.grid, warp.values[None, :], warp.slopes[None, :], pts[None, :])[0]
    return out[0] if np.ndim(t) == 0 else out


def _check_domain(spec: WarpSpec, s) -> np.ndarray:
    pts = np.atleast_1d(np.asarray(s, dtype=float))
    a, b = spec.domain
    tol = 1e-12 * (b - a)
    if pts.size and (pts.min() < a - tol or pts.max() > b + tol):
        raise ValueError(f"points outside warp domain [{a}, {b}]")
    return np.clip(pts, a, b)


# ---------------------------------------------------------------------------
# Log-ratio (Jupp) coordinates


def jupp(spec: WarpSpec, values) -> np.ndarray:
    """Unconstrained log-ratio coordinates of increasing interior values."""
    tau = np.asarray(values, dtype=float)
    _check_values(spec, tau)
    a, b = spec.domain
    gaps = np.diff(np.concatenate([[a], tau, [b]]))
    return np.log(gaps[1:]) - np.log(gaps[:-1])


def _jupp_inv_batch(domain, theta: np.ndarray) -> np.ndarray:
    """Inverse transform for a (B, r) batch of coordinate vectors."""
    a, b = domain
    csum = np.cumsum(theta, axis=-1)
    shift = np.maximum(csum.max(axis=-1, keepdims=True), 0.0)
    exps = np.exp(csum - shift)
    denom = np.exp(-shift[..., 0]) + exps.sum(axis=-1)
    numer = np.exp(-shift) + np.concatenate(
        [np.zeros_like(csum[..., :1]), np.cumsum(exps, axis=-1)[..., :-1]], axis=-1
    )
    return a + (b - a) * numer / denom[..., None]


def jupp_inv(spec: WarpSpec, theta) -> np.ndarray:
    """Interior values corresponding to log-ratio coordinates ``theta``.

    Any finite vector maps to a strictly increasing sequence in the open
    domain; the zero vector maps to equally spaced values.
    """
    th = np.asarray(theta, dtype=float)
    if th.shape != (spec.r,):
        raise ValueError(f"expected {spec.r} coordinates, got shape {th.shape}")
    if not np.all(np.isfinite(th)):
        raise ValueError("coordinates must be finite")
    return _jupp_inv_batch(spec.domain, th[None, :])[0]


def jupp_inv_jacobian(spec: WarpSpec, theta):
    """Interior values and their Jacobian in the coordinates, both exact.

    Returns ``(tau, jac)`` with ``jac[j, l] = d tau_j / d theta_l``.
    """
    th = np.asarray(theta, dtype=float)
    tau = jupp_inv(spec, th)
    a, b = spec.domain
    r = spec.r
    csum = np.cumsum(th)
    shift = max(csum.max(), 0.0)
    expn = np.exp(csum - shift)  # normalized exp terms, k = 1..r
    denom = np.exp(-shift) + expn.sum()
    en = expn / denom  # E_k / D, stable
    pos = (tau - a) / (b - a)  # N_j / D
    # d tau_j / d theta_l = (b-a) * (sum_{k=l}^{j-1} E_k - pos_j sum_{k=l}^{r} E_k) / D
    cs = np.concatenate([[0.0], np.cumsum(en)])  # cs[k] = sum_{i<=k} E_i/D
    total = cs[-1]
    jac = np.empty((r, r))
    for l in range(1, r + 1):
        lead = np.maximum(cs[:r] - cs[l - 1], 0.0)  # sum_{k=l}^{j-1}, j = 1..r
        tail = total - cs[l - 1]
        jac[:, l - 1] = (b - a) * (lead - pos * tail)
    return tau, jac
