"""Model structure for warped functional regression.

The model couples two latent effect vectors per curve pair: covariate
effects (amplitude scores plus warp coordinates) and response effects,
linked by a linear regression with diagonal residual covariance.  Curves
are spline expansions of a mean plus orthonormal components, composed
with a monotone warp; observations are noisy evaluations on irregular
per-curve grids.

This module holds the configuration and parameter containers, evaluation
of means/components/reconstructions, the derived regression kernels, and
enforcement of the structural constraints (component orthonormality,
diagonal score covariances).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import basis as bs
from . import warp as wp
from .exceptions import DegeneracyError

__all__ = [
    "ModelConfig",
    "ModelParams",
    "CurveDataset",
    "RegressionKernels",
    "eval_mean",
    "eval_components",
    "reconstruct_curve",
    "kernels",
    "enforce_constraints",
]


@dataclass(frozen=True)
class ModelConfig:
    """Fixed meta-parameters: bases, warp knot layouts, and dimensions.

    ``x_warp`` / ``y_warp`` may be None, which disables warping on that
    side (ordinary functional regression as a degenerate case).
    """

    x_basis: bs.SplineBasis
    y_basis: bs.SplineBasis
    n_comp_x: int
    n_comp_y: int
    x_warp: wp.WarpSpec | None = None
    y_warp: wp.WarpSpec | None = None

    def __post_init__(self):
        if self.n_comp_x < 0 or self.n_comp_y < 0:
            raise ValueError("component counts must be nonnegative")
        if self.dim_x < 1 or self.dim_y < 1:
            raise ValueError("each side needs at least one component or warp coordinate")
        if self.n_comp_x > self.x_basis.dim or self.n_comp_y > self.y_basis.dim:
            raise ValueError("component count cannot exceed basis dimension")
        if self.x_warp is not None and self.x_warp.domain != self.x_basis.domain:
            raise ValueError("x warp domain must match x basis domain")
        if self.y_warp is not None and self.y_warp.domain != self.y_basis.domain:
            raise ValueError("y warp domain must match y basis domain")

    @property
    def n_warp_x(self) -> int:
        return 0 if self.x_warp is None else self.x_warp.r

    @property
    def n_warp_y(self) -> int:
        return 0 if self.y_warp is None else self.y_warp.r

    @property
    def dim_x(self) -> int:
        """Covariate effect dimension (scores + warp coordinates)."""
        return self.n_comp_x + self.n_warp_x

    @property
    def dim_y(self) -> int:
        return self.n_comp_y + self.n_warp_y

    @property
    def theta_x0(self) -> np.ndarray:
        """Log-ratio coordinates of the x warp knots (identity warp)."""
        if self.x_warp is None:
            return np.zeros(0)
        return wp.jupp(self.x_warp, np.array(self.x_warp.knots))

    @property
    def theta_y0(self) -> np.ndarray:
        if self.y_warp is None:
            return np.zeros(0)
        return wp.jupp(self.y_warp, np.array(self.y_warp.knots))

    @property
    def gram_x(self) -> np.ndarray:
        got = getattr(self, "_gram_x", None)
        if got is None:
            got = bs.gram(self.x_basis)
            object.__setattr__(self, "_gram_x", got)
        return got

    @property
    def gram_y(self) -> np.ndarray:
        got = getattr(self, "_gram_y", None)
        if got is None:
            got = bs.gram(self.y_basis)
            object.__setattr__(self, "_gram_y", got)
        return got


@dataclass(frozen=True)
class ModelParams:
    """All estimable parameters of the model.

    Attributes
    ----------
    config : ModelConfig
    reg_matrix : (dim_y, dim_x) array
        Regression of response effects on centered covariate effects.
    reg_resid_var : (dim_y,) array
        Diagonal of the regression residual covariance.
    effect_cov : (dim_x, dim_x) array
        Covariance of covariate effects; its upper-left score block is
        diagonal with nonincreasing entries after constraint enforcement.
    mean_coef_x, mean_coef_y : spline coefficients of the two means.
    comp_coef_x : (q1, n_comp_x) component coefficients, orthonormal in
        the x Gram metric; likewise ``comp_coef_y``.
    noise_var_x, noise_var_y : measurement noise variances.
    """

    config: ModelConfig
    reg_matrix: np.ndarray
    reg_resid_var: np.ndarray
    effect_cov: np.ndarray
    mean_coef_x: np.ndarray
    mean_coef_y: np.ndarray
    comp_coef_x: np.ndarray
    comp_coef_y: np.ndarray
    noise_var_x: float
    noise_var_y: float

    def __post_init__(self):
        cfg = self.config
        d1, d2 = cfg.dim_x, cfg.dim_y
        conv = {
            "reg_matrix": (d2, d1),
            "reg_resid_var": (d2,),
            "effect_cov": (d1, d1),
            "mean_coef_x": (cfg.x_basis.dim,),
            "mean_coef_y": (cfg.y_basis.dim,),
            "comp_coef_x": (cfg.x_basis.dim, cfg.n_comp_x),
            "comp_coef_y": (cfg.y_basis.dim, cfg.n_comp_y),
        }
        for name, shape in conv.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        if self.noise_var_x <= 0 or self.noise_var_y <= 0:
            raise ValueError("noise variances must be positive")
        if np.any(self.reg_resid_var < 0):
            raise ValueError("residual variances must be nonnegative")

    @property
    def effect_mean_x(self) -> np.ndarray:
        """Prior mean of covariate effects: zero scores, identity warp."""
        return np.concatenate([np.zeros(self.config.n_comp_x), self.config.theta_x0])

    @property
    def effect_mean_y(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.config.n_comp_y), self.config.theta_y0])

    @property
    def response_cov(self) -> np.ndarray:
        """Marginal covariance of response effects."""
        a = self.reg_matrix
        return a @ self.effect_cov @ a.T + np.diag(self.reg_resid_var)

    @property
    def score_cov_y(self) -> np.ndarray:
        """Marginal covariance of response amplitude scores (diagonal by
        the structural constraint)."""
        p2 = self.config.n_comp_y
        return self.response_cov[:p2, :p2]


@dataclass
class CurveDataset:
    """Paired irregular samples: per curve, an x grid/values and a y
    grid/values."""

    x_times: list[np.ndarray]
    x_values: list[np.ndarray]
    y_times: list[np.ndarray]
    y_values: list[np.ndarray]
    ids: list[str] | None = None

    def __post_init__(self):
        n = len(self.x_times)
        if not (len(self.x_values) == len(self.y_times) == len(self.y_values) == n):
            raise ValueError("per-curve lists must have equal length")
        for attr in ("x_times", "x_values", "y_times", "y_values"):
            setattr(self, attr, [np.asarray(v, dtype=float) for v in getattr(self, attr)])
        for i in range(n):
            if self.x_times[i].size != self.x_values[i].size or self.x_times[i].size < 1:
                raise ValueError(f"curve {i}: x grid/value mismatch or empty")
            if self.y_times[i].size != self.y_values[i].size or self.y_times[i].size < 1:
                raise ValueError(f"curve {i}: y grid/value mismatch or empty")
            for arr in (self.x_times[i], self.x_values[i], self.y_times[i], self.y_values[i]):
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"curve {i}: non-finite entries")

    @property
    def n(self) -> int:
        return len(self.x_times)

    def curve(self, i: int):
        return self.x_times[i], self.x_values[i], self.y_times[i], self.y_values[i]

    def subset(self, indices) -> "CurveDataset":
        idx = list(indices)
        return CurveDataset(
            [self.x_times[i] for i in idx],
            [self.x_values[i] for i in idx],
            [self.y_times[i] for i in idx],
            [self.y_values[i] for i in idx],
            None if self.ids is None else [self.ids[i] for i in idx],
        )


@dataclass(frozen=True)
class RegressionKernels:
    """Derived functional regression kernels.

    ``amplitude`` maps covariate amplitude to response amplitude:
    ``amplitude(s, t)`` evaluates the bivariate kernel on the grid
    ``s x t`` (shape ``(len(t), len(s))``).  ``phase_to_amplitude(t)``
    gives the loadings of covariate warp coordinates on the response
    curve; ``amplitude_to_phase(s)`` the loadings of covariate amplitude
    on response warp coordinates.
    """

    params: ModelParams

    def amplitude(self, s, t) -> np.ndarray:
        p = self.params
        p1, p2 = p.config.n_comp_x, p.config.n_comp_y
        a11 = p.reg_matrix[:p2, :p1]
        phi = eval_components(p, "x", s)
        psi = eval_components(p, "y", t)
        return psi @ a11 @ phi.T

    def phase_to_amplitude(self, t) -> np.ndarray:
        p = self.params
        p1, p2 = p.config.n_comp_x, p.config.n_comp_y
        a12 = p.reg_matrix[:p2, p1:]
        return eval_components(p, "y", t) @ a12

    def amplitude_to_phase(self, s) -> np.ndarray:
        p = self.params
        p1, p2 = p.config.n_comp_x, p.config.n_comp_y
        a21 = p.reg_matrix[p2:, :p1]
        return eval_components(p, "x", s) @ a21.T


def _side(params: ModelParams, side: str):
    if side == "x":
        return (
            params.config.x_basis,
            params.config.x_warp,
            params.mean_coef_x,
            params.comp_coef_x,
        )
    if side == "y":
        return (
            params.config.y_basis,
            params.config.y_warp,
            params.mean_coef_y,
            params.comp_coef_y,
        )
    raise ValueError("side must be 'x' or 'y'")


def eval_mean(params: ModelParams, side: str, points) -> np.ndarray:
    """Mean curve of one side, evaluated before warping."""
    b, _, mean_coef, _ = _side(params, side)
    out = bs.eval_matrix(b, points) @ mean_coef
    return out if np.ndim(points) else out[0]


def eval_components(params: ModelParams, side: str, points) -> np.ndarray:
    """Orthonormal component functions of one side; shape (npoints, p)."""
    b, _, _, comp_coef = _side(params, side)
    return bs.eval_matrix(b, np.atleast_1d(points)) @ comp_coef


def reconstruct_curve(params: ModelParams, side: str, scores, theta, grid) -> np.ndarray:
    """Curve implied by given amplitude scores and warp coordinates.

    Evaluates mean + score-weighted components at the inverse-warped grid;
    with no warp configured it reduces to the plain expansion.
    """
    b, warp_spec, mean_coef, comp_coef = _side(params, side)
    scores = np.asarray(scores, dtype=float)
    theta = np.asarray(theta, dtype=float)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if warp_spec is None:
        if theta.size:
            raise ValueError(f"side {side} has no warp but got warp coordinates")
        pts = grid
    else:
        w = wp.make_warp(warp_spec, wp.jupp_inv(warp_spec, theta))
        pts = wp.warp_invert(w, grid)
    coef = mean_coef if scores.size == 0 else mean_coef + comp_coef @ scores
    return bs.eval_matrix(b, pts) @ coef


def kernels(params: ModelParams) -> RegressionKernels:
    """Regression kernels factorized through the fitted components."""
    return RegressionKernels(params)


def _canon_eigh(mat: np.ndarray):
    """Eigendecomposition with decreasing eigenvalues and sign-canonical
    eigenvectors (largest-magnitude entry positive)."""
    evals, evecs = np.linalg.eigh(0.5 * (mat + mat.T))
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    dominant = np.abs(evecs).argmax(axis=0)
    signs = np.sign(evecs[dominant, np.arange(evecs.shape[1])])
    signs[signs == 0] = 1.0
    return evals, evecs * signs


def enforce_constraints(params: ModelParams) -> ModelParams:
    """Rotate and rescale parameters onto the constraint surface.

    Applied transformations, all of which leave the data distribution
    unchanged (rotations of scores are absorbed by the corresponding
    component rotations):

    * floor the covariate effect covariance to be positive definite;
    * rotate covariate scores so their covariance block is diagonal with
      decreasing entries;
    * rotate response scores so the regression-plus-residual part of
      their covariance is diagonal (decreasing), keeping the residual
      covariance diagonal -- exactly invariant when the residual block is
      isotropic, which also keeps the marginal score covariance diagonal;
    * sign each component so its largest-magnitude coefficient is positive.
    """
    cfg = params.config
    p1, p2 = cfg.n_comp_x, cfg.n_comp_y
    r1 = cfg.n_warp_x
    a = params.reg_matrix.copy()
    resid = params.reg_resid_var.copy()
    w_cov = 0.5 * (params.effect_cov + params.effect_cov.T)
    c_x = params.comp_coef_x.copy()
    c_y = params.comp_coef_y.copy()

    scale = np.trace(w_cov) / max(cfg.dim_x, 1)
    if not np.isfinite(scale) or scale <= 0:
        raise DegeneracyError("covariate effect covariance has nonpositive trace")
    evals, evecs = np.linalg.eigh(w_cov)
    floor = 1e-8 * scale
    if evals.min() < floor:
        w_cov = (evecs * np.maximum(evals, floor)) @ evecs.T
        w_cov = 0.5 * (w_cov + w_cov.T)

    if p1 > 0:
        lam, rot = _canon_eigh(w_cov[:p1, :p1])
        t_full = np.eye(cfg.dim_x)
        t_full[:p1, :p1] = rot.T
        w_cov = t_full @ w_cov @ t_full.T
        w_cov[:p1, :p1] = np.diag(lam)  # exact diagonality
        c_x = c_x @ rot
        a = a @ t_full.T

    if p2 > 0:
        a_amp = a[:p2, :]  # rows feeding response scores
        shared = a_amp @ w_cov @ a_amp.T
        gammas, rot = _canon_eigh(shared)
        a[:p2, :] = rot.T @ a[:p2, :]
        c_y = c_y @ rot
        resid[:p2] = (rot.T**2) @ resid[:p2]

    # sign conventions: dominant coefficient of every component positive
    if p1 > 0:
        dominant = np.abs(c_x).argmax(axis=0)
        signs = np.sign(c_x[dominant, np.arange(p1)])
        signs[signs == 0] = 1.0
        c_x *= signs
        a[:, :p1] *= signs
        w_cov[:p1, :] *= signs[:, None]
        w_cov[:, :p1] *= signs[None, :]
    if p2 > 0:
        dominant = np.abs(c_y).argmax(axis=0)
        signs = np.sign(c_y[dominant, np.arange(p2)])
        signs[signs == 0] = 1.0
        c_y *= signs
        a[:p2, :] *= signs[:, None]

    return replace(
        params,
        reg_matrix=a,
        reg_resid_var=resid,
        effect_cov=w_cov,
        comp_coef_x=c_x,
        comp_coef_y=c_y,
    )
