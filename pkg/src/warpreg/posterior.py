"""Per-curve posterior of the latent effects given the observed pair.

The joint density of data and effects factorizes into four Gaussian
terms: two data terms whose design matrices are spline bases evaluated
at inverse-warped grids (hence nonlinear in the warp coordinates), the
effect regression, and the covariate effect prior.  The marginal over
effects has no closed form once warps enter, so the posterior is
approximated by a Laplace scheme: quasi-Newton mode search with analytic
gradients, inverse-Hessian covariance, and the corresponding marginal
log-likelihood contribution.

With no warp coordinates on either side everything is exactly Gaussian
and the Laplace quantities coincide with the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from . import basis as bs
from . import warp as wp
from .exceptions import DegeneracyError, ModeSearchError
from .model import ModelParams

__all__ = [
    "LatentPosterior",
    "PosteriorMoments",
    "CovariatePosterior",
    "joint_logdensity",
    "joint_logdensity_grad",
    "find_mode",
    "laplace_moments",
    "covariate_posterior",
]

_LOG_2PI = math.log(2.0 * math.pi)
_THETA_PERTURB = 0.3


@dataclass
class LatentPosterior:
    """Gaussian posterior approximation for one curve pair.

    ``mode`` stacks covariate effects then response effects; ``cov`` is
    the inverse Hessian of the joint log density at the mode; ``loglik``
    is the Laplace approximation of this curve's marginal log likelihood.
    """

    mode: np.ndarray
    cov: np.ndarray
    loglik: float


@dataclass
class PosteriorMoments:
    """Posterior plus the centered second-moment blocks used by the
    M-step and the likelihood score (expectations of outer products of
    effects about their prior means)."""

    posterior: LatentPosterior
    ww: np.ndarray
    wz: np.ndarray
    zz: np.ndarray


@dataclass
class CovariatePosterior:
    """Posterior of covariate effects given the covariate curve only."""

    mean: np.ndarray
    cov: np.ndarray
    loglik: float

    def scores(self, n_comp: int) -> np.ndarray:
        return self.mean[:n_comp]

    def warp_coords(self, n_comp: int) -> np.ndarray:
        return self.mean[n_comp:]


class _SideTerm:
    """Data log-density term of one side, with gradient in the latent
    scores and warp coordinates."""

    def __init__(self, spline, warp_spec, mean_coef, comp_coef, noise_var, times, values):
        self.spline = spline
        self.warp_spec = warp_spec
        self.mean_coef = mean_coef
        self.comp_coef = comp_coef
        self.noise_var = float(noise_var)
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.n_obs = self.times.size
        self.const = -0.5 * self.n_obs * (_LOG_2PI + math.log(self.noise_var))
        self.design0 = None
        if warp_spec is None:
            self.design0 = bs.eval_matrix(spline, self.times)

    def value_grad(self, scores, theta, want_grad=True):
        coef = self.mean_coef if scores.size == 0 else self.mean_coef + self.comp_coef @ scores
        if self.warp_spec is None:
            design = self.design0
            pts = None
        else:
            tau, jac_tau = wp.jupp_inv_jacobian(self.warp_spec, theta)
            slopes, jac_slopes = wp.fc_slopes_jacobian(self.warp_spec, tau)
            warp = wp.Warp(self.warp_spec, tau, slopes)
            pts = wp.warp_invert(warp, self.times)
            design = bs.eval_matrix(self.spline, pts)
        fitted = design @ coef
        resid = self.values - fitted
        value = self.const - 0.5 * (resid @ resid) / self.noise_var
        if not want_grad:
            return value, None, None
        grad_scores = (self.comp_coef.T @ (design.T @ resid)) / self.noise_var
        if self.warp_spec is None:
            return value, grad_scores, np.zeros(0)
        # chain rule through the inverse warp: for fixed observation time t,
        # d s*/d theta = -(d warp/d theta)(s*) / warp'(s*)
        alpha, beta = wp._hermite_basis_matrix(self.warp_spec, pts)
        jac_warp = alpha[:, 1:-1] @ jac_tau + beta @ (jac_slopes @ jac_tau)
        wprime = wp.warp_deriv(warp, pts)
        dpts = -jac_warp / wprime[:, None]
        curve_slope = bs.eval_matrix(self.spline, pts, deriv=1) @ coef
        grad_theta = ((resid * curve_slope) / self.noise_var) @ dpts
        return value, grad_scores, grad_theta


class _JointProblem:
    """Joint log density of one curve pair as a function of the stacked
    latent effects, with analytic gradient."""

    def __init__(self, params: ModelParams, x_t, x_v, y_t, y_v):
        cfg = params.config
        self.p1, self.p2 = cfg.n_comp_x, cfg.n_comp_y
        self.d1, self.d2 = cfg.dim_x, cfg.dim_y
        self.x_side = _SideTerm(
            cfg.x_basis, cfg.x_warp, params.mean_coef_x, params.comp_coef_x,
            params.noise_var_x, x_t, x_v,
        )
        self.y_side = _SideTerm(
            cfg.y_basis, cfg.y_warp, params.mean_coef_y, params.comp_coef_y,
            params.noise_var_y, y_t, y_v,
        )
        self.mu_w = params.effect_mean_x
        self.mu_z = params.effect_mean_y
        self.reg = params.reg_matrix
        if np.any(params.reg_resid_var <= 0):
            raise DegeneracyError("regression residual variances must be positive")
        self.resid_prec = 1.0 / params.reg_resid_var
        cov = 0.5 * (params.effect_cov + params.effect_cov.T)
        try:
            chol = scipy.linalg.cho_factor(cov, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise DegeneracyError("covariate effect covariance is not positive definite") from exc
        self.w_prec = scipy.linalg.cho_solve(chol, np.eye(self.d1))
        logdet_w = 2.0 * np.sum(np.log(np.diag(chol[0])))
        self.const = -0.5 * (
            self.d1 * _LOG_2PI + logdet_w
            + self.d2 * _LOG_2PI + np.sum(np.log(params.reg_resid_var))
        )
        self.dim = self.d1 + self.d2

    def split(self, wz):
        w, z = wz[: self.d1], wz[self.d1 :]
        return w[: self.p1], w[self.p1 :], z[: self.p2], z[self.p2 :]

    def value_grad(self, wz, want_grad=True):
        u, th_x, v, th_y = self.split(wz)
        val_x, gsx, gtx = self.x_side.value_grad(u, th_x, want_grad)
        val_y, gsy, gty = self.y_side.value_grad(v, th_y, want_grad)
        dw = wz[: self.d1] - self.mu_w
        dz = wz[self.d1 :] - self.mu_z
        ez = dz - self.reg @ dw
        value = (
            val_x + val_y + self.const
            - 0.5 * dw @ (self.w_prec @ dw)
            - 0.5 * np.sum(ez * ez * self.resid_prec)
        )
        if not want_grad:
            return value, None
        weighted = ez * self.resid_prec
        grad_w = np.concatenate([gsx, gtx]) - self.w_prec @ dw + self.reg.T @ weighted
        grad_z = np.concatenate([gsy, gty]) - weighted
        return value, np.concatenate([grad_w, grad_z])

    def value(self, wz):
        return self.value_grad(wz, want_grad=False)[0]

    def prior_mean(self):
        return np.concatenate([self.mu_w, self.mu_z])

    def theta_indices(self):
        """Stacked indices of all warp coordinates."""
        idx_x = np.arange(self.p1, self.d1)
        idx_y = self.d1 + np.arange(self.p2, self.d2)
        return np.concatenate([idx_x, idx_y])

    def score_indices(self):
        return np.concatenate([np.arange(self.p1), self.d1 + np.arange(self.p2)])


class _MarginalProblem(_JointProblem):
    """Covariate-only variant: drop the response and regression terms."""

    def __init__(self, params: ModelParams, x_t, x_v):
        cfg = params.config
        self.p1 = cfg.n_comp_x
        self.p2 = 0
        self.d1 = cfg.dim_x
        self.d2 = 0
        self.x_side = _SideTerm(
            cfg.x_basis, cfg.x_warp, params.mean_coef_x, params.comp_coef_x,
            params.noise_var_x, x_t, x_v,
        )
        self.mu_w = params.effect_mean_x
        cov = 0.5 * (params.effect_cov + params.effect_cov.T)
        try:
            chol = scipy.linalg.cho_factor(cov, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise DegeneracyError("covariate effect covariance is not positive definite") from exc
        self.w_prec = scipy.linalg.cho_solve(chol, np.eye(self.d1))
        self.const = -0.5 * (self.d1 * _LOG_2PI + 2.0 * np.sum(np.log(np.diag(chol[0]))))
        self.dim = self.d1

    def value_grad(self, w, want_grad=True):
        val, gs, gt = self.x_side.value_grad(w[: self.p1], w[self.p1 :], want_grad)
        dw = w - self.mu_w
        value = val + self.const - 0.5 * dw @ (self.w_prec @ dw)
        if not want_grad:
            return value, None
        return value, np.concatenate([gs, gt]) - self.w_prec @ dw

    def prior_mean(self):
        return self.mu_w.copy()

    def theta_indices(self):
        return np.arange(self.p1, self.d1)

    def score_indices(self):
        return np.arange(self.p1)


# ---------------------------------------------------------------------------
# mode search


def _fd_hessian(problem, x, indices=None, rel_step=1e-5):
    """Central finite differences of the analytic gradient.

    Exact (up to rounding) whenever the gradient is linear, which covers
    every non-warped direction.
    """
    idx = np.arange(x.size) if indices is None else np.asarray(indices)
    cols = np.empty((x.size, idx.size))
    for pos, i in enumerate(idx):
        h = rel_step * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        _, gp = problem.value_grad(xp)
        _, gm = problem.value_grad(xm)
        cols[:, pos] = (gp - gm) / (2.0 * h)
    hess = cols[idx, :]
    return 0.5 * (hess + hess.T)


def _solve_psd(mat, rhs, scale=None):
    """Cholesky solve with escalating jitter; returns (solution, logdet, jittered)."""
    scale = np.trace(mat) / mat.shape[0] if scale is None else scale
    scale = max(abs(scale), 1e-12)
    jitter = 0.0
    for _ in range(12):
        try:
            chol = scipy.linalg.cho_factor(mat + jitter * np.eye(mat.shape[0]), lower=True)
            sol = scipy.linalg.cho_solve(chol, rhs)
            logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
            return sol, logdet, jitter > 0
        except scipy.linalg.LinAlgError:
            jitter = 1e-8 * scale if jitter == 0.0 else 10.0 * jitter
    raise DegeneracyError("Hessian could not be stabilized")


def _newton_polish(problem, x, gtol, max_iter=40):
    """Drive the gradient norm below tolerance with damped Newton steps
    on the negative log density.

    Near the mode the objective improvement drops below evaluation noise
    while the gradient is still resolvable, so steps are also accepted
    when they shrink the gradient norm.
    """
    val, grad = problem.value_grad(x)
    gnorm = np.linalg.norm(grad)
    for _ in range(max_iter):
        if gnorm <= gtol:
            return x, val, True
        hess = -_fd_hessian(problem, x)  # negative log density curvature
        step, _, _ = _solve_psd(hess, grad)
        alpha = 1.0
        accepted = False
        for _ in range(30):
            cand = x + alpha * step
            cand_val, cand_grad = problem.value_grad(cand)
            cand_gnorm = np.linalg.norm(cand_grad)
            if np.isfinite(cand_val) and (cand_val > val or cand_gnorm < 0.9 * gnorm):
                x, val, grad, gnorm = cand, cand_val, cand_grad, cand_gnorm
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
    return x, val, gnorm <= gtol


def _amplitude_start(problem):
    """Prior mean warped coordinates with data-informed amplitude scores:
    the exact conditional mode over scores given identity warps."""
    start = problem.prior_mean()
    idx = problem.score_indices()
    if idx.size == 0:
        return start
    _, grad = problem.value_grad(start)
    hess = -_fd_hessian(problem, start, indices=idx)
    try:
        step, _, _ = _solve_psd(hess, grad[idx])
    except DegeneracyError:
        return start
    start[idx] += step
    return start


def _maximize(problem, init=None, gtol=1e-6):
    starts = []
    if init is not None:
        starts.append(np.asarray(init, dtype=float))
    else:
        base = _amplitude_start(problem)
        starts.append(base)
        for i in problem.theta_indices():
            for delta in (_THETA_PERTURB, -_THETA_PERTURB):
                pert = base.copy()
                pert[i] += delta
                starts.append(pert)

    def neg(xv):
        value, grad = problem.value_grad(xv)
        return -value, -grad

    best = None
    for start in starts:
        res = minimize(
            neg, start, jac=True, method="BFGS",
            options={"gtol": 1e-7, "maxiter": 500},
        )
        x, val, ok = _newton_polish(problem, res.x, gtol)
        if best is None or val > best[1]:
            best = (x, val, ok)
    x, val, ok = best
    if not ok:
        _, grad = problem.value_grad(x)
        raise ModeSearchError(
            f"mode search stalled with gradient norm {np.linalg.norm(grad):.3e}", best=x
        )
    return x


# ---------------------------------------------------------------------------
# public surface


def _check_effects(problem, w, z=None):
    w = np.asarray(w, dtype=float)
    parts = [w]
    if z is not None:
        z = np.asarray(z, dtype=float)
        parts.append(z)
    wz = np.concatenate(parts)
    if wz.size != problem.dim:
        raise ValueError(f"expected {problem.dim} latent coordinates, got {wz.size}")
    if not np.all(np.isfinite(wz)):
        raise ValueError("latent effects must be finite")
    return wz


def joint_logdensity(params: ModelParams, x_t, x_v, y_t, y_v, w, z) -> float:
    """Log of the joint density of one curve pair and its latent effects."""
    problem = _JointProblem(params, x_t, x_v, y_t, y_v)
    return problem.value(_check_effects(problem, w, z))


def joint_logdensity_grad(params: ModelParams, x_t, x_v, y_t, y_v, w, z):
    """Joint log density and its gradient in the stacked latent effects."""
    problem = _JointProblem(params, x_t, x_v, y_t, y_v)
    return problem.value_grad(_check_effects(problem, w, z))


def find_mode(params: ModelParams, x_t, x_v, y_t, y_v, init=None, gtol=1e-6) -> np.ndarray:
    """Maximizer of the joint log density over the latent effects.

    Without an initial guess the search multi-starts from the
    data-informed amplitude start plus perturbations of every warp
    coordinate, since warped likelihoods can be multimodal.
    """
    problem = _JointProblem(params, x_t, x_v, y_t, y_v)
    return _maximize(problem, init=init, gtol=gtol)


def _laplace(problem, init, gtol):
    mode = _maximize(problem, init=init, gtol=gtol)
    hess = -_fd_hessian(problem, mode)
    scale = max(np.trace(hess) / hess.shape[0], 1e-12)
    cov, logdet, _ = _solve_psd(hess, np.eye(hess.shape[0]), scale=scale)
    cov = 0.5 * (cov + cov.T)
    value = problem.value(mode)
    loglik = value + 0.5 * problem.dim * _LOG_2PI - 0.5 * logdet
    return mode, cov, loglik


def laplace_moments(
    params: ModelParams, x_t, x_v, y_t, y_v, init=None, gtol=1e-6
) -> PosteriorMoments:
    """Gaussian posterior approximation centered at the mode, with the
    second-moment blocks about the prior effect means and the Laplace
    marginal log-likelihood contribution."""
    problem = _JointProblem(params, x_t, x_v, y_t, y_v)
    mode, cov, loglik = _laplace(problem, init, gtol)
    d1 = problem.d1
    dw = mode[:d1] - problem.mu_w
    dz = mode[d1:] - problem.mu_z
    ww = cov[:d1, :d1] + np.outer(dw, dw)
    wz = cov[:d1, d1:] + np.outer(dw, dz)
    zz = cov[d1:, d1:] + np.outer(dz, dz)
    return PosteriorMoments(LatentPosterior(mode, cov, loglik), ww, wz, zz)


def covariate_posterior(params: ModelParams, x_t, x_v, init=None, gtol=1e-6) -> CovariatePosterior:
    """Posterior of the covariate effects given the covariate curve only,
    via the same Laplace machinery applied to the marginal model."""
    problem = _MarginalProblem(params, x_t, x_v)
    mode, cov, loglik = _laplace(problem, init, gtol)
    return CovariatePosterior(mode, cov, loglik)
