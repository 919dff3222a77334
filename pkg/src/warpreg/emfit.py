"""Maximum-likelihood fitting of the warped regression model by EM.

The E-step computes per-curve Laplace posteriors of the latent effects
(module :mod:`warpreg.posterior`); the M-step has closed forms for the
effect regression, residual and effect covariances, and solves penalized
generalized least squares for the mean/component spline coefficients
against design matrices frozen at the posterior-mode warps.  Structural
constraints are restored by likelihood-invariant rotations after every
step.

With no warp coordinates the E-step is exact and classical EM monotonicity
holds; with warping the trace is monotone up to the Laplace approximation
error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import basis as bs
from . import warp as wp
from .exceptions import DegeneracyError, ModeSearchError
from .model import CurveDataset, ModelConfig, ModelParams, enforce_constraints
from .posterior import PosteriorMoments, laplace_moments

__all__ = ["FitConfig", "FitResult", "initialize", "e_step", "em_step", "fit"]

_VAR_FLOOR = 1e-10


@dataclass(frozen=True)
class FitConfig:
    """Convergence control for the EM loop."""

    max_iter: int = 500
    rel_tol: float = 1e-6
    mode_gtol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.rel_tol <= 0 or self.mode_gtol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class FitResult:
    """Converged parameters with the iteration trace and final posteriors."""

    params: ModelParams
    loglik_trace: np.ndarray
    moments: list[PosteriorMoments]
    converged: bool
    iterations: int

    @property
    def posteriors(self):
        return [m.posterior for m in self.moments]

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


def _validate_dataset(config: ModelConfig, data: CurveDataset):
    ax, bx = config.x_basis.domain
    ay, by = config.y_basis.domain
    for i in range(data.n):
        if data.x_times[i].min() < ax or data.x_times[i].max() > bx:
            raise ValueError(f"curve {i}: x times outside basis domain [{ax}, {bx}]")
        if data.y_times[i].min() < ay or data.y_times[i].max() > by:
            raise ValueError(f"curve {i}: y times outside basis domain [{ay}, {by}]")


def _pooled_mean(designs, values, dim):
    normal = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    for design, v in zip(designs, values):
        normal += design.T @ design
        rhs += design.T @ v
    ridge = 1e-8 * max(np.trace(normal) / dim, 1.0)
    return np.linalg.solve(normal + ridge * np.eye(dim), rhs)


def _initial_side(spline, metric, designs, values, n_comp):
    """Pooled mean, leading metric-orthonormal components of the shrunken
    per-curve coefficient covariance, the implied scores, and a noise
    variance estimate."""
    q = spline.dim
    mean_coef = _pooled_mean(designs, values, q)
    coefs = []
    sse, n_obs = 0.0, 0
    for design, v in zip(designs, values):
        normal = design.T @ design
        lam = 1e-2 * max(np.trace(normal) / q, 1e-8)
        dev = np.linalg.solve(normal + lam * np.eye(q), design.T @ (v - design @ mean_coef))
        coefs.append(dev)
        resid = v - design @ (mean_coef + dev)
        sse += resid @ resid
        n_obs += v.size
    coefs = np.array(coefs)
    noise_var = max(sse / n_obs, _VAR_FLOOR)
    if n_comp == 0:
        return mean_coef, np.zeros((q, 0)), np.zeros((len(values), 0)), np.zeros(0), noise_var
    cov = coefs.T @ coefs / len(values)
    evals_m, evecs_m = np.linalg.eigh(metric)
    half = (evecs_m * np.sqrt(np.maximum(evals_m, 0))) @ evecs_m.T
    evals, evecs = np.linalg.eigh(half @ cov @ half)
    order = np.argsort(evals)[::-1][:n_comp]
    comp = np.linalg.solve(half, evecs[:, order])
    variances = np.maximum(evals[order], 1e-6 * max(evals.max(), 1e-8))
    scores = coefs @ metric @ comp
    return mean_coef, comp, scores, variances, noise_var


def initialize(config: ModelConfig, data: CurveDataset) -> ModelParams:
    """Starting values from spline ridge regressions and a metric PCA of
    the per-curve coefficient estimates, with warp effects at identity."""
    if data.n < 2:
        raise DegeneracyError("need at least two curves")
    _validate_dataset(config, data)
    tot_x = sum(t.size for t in data.x_times)
    tot_y = sum(t.size for t in data.y_times)
    if tot_x < config.x_basis.dim or tot_y < config.y_basis.dim:
        raise DegeneracyError("fewer pooled observations than basis dimension")
    designs_x = [bs.eval_matrix(config.x_basis, t) for t in data.x_times]
    designs_y = [bs.eval_matrix(config.y_basis, t) for t in data.y_times]
    mean_x, comp_x, scores_x, var_x, noise_x = _initial_side(
        config.x_basis, config.gram_x, designs_x, data.x_values, config.n_comp_x
    )
    mean_y, comp_y, scores_y, var_y, noise_y = _initial_side(
        config.y_basis, config.gram_y, designs_y, data.y_values, config.n_comp_y
    )
    p1, p2 = config.n_comp_x, config.n_comp_y
    r1, r2 = config.n_warp_x, config.n_warp_y
    d1, d2 = config.dim_x, config.dim_y
    theta_var = 0.1**2
    effect_cov = np.zeros((d1, d1))
    if p1:
        effect_cov[:p1, :p1] = np.diag(var_x)
    effect_cov[p1:, p1:] = theta_var * np.eye(r1)
    reg = np.zeros((d2, d1))
    resid_var = np.full(d2, theta_var)
    if p1 and p2:
        gramm = scores_x.T @ scores_x
        ridge = 1e-8 * max(np.trace(gramm) / p1, 1.0)
        a11 = np.linalg.solve(gramm + ridge * np.eye(p1), scores_x.T @ scores_y).T
        reg[:p2, :p1] = a11
        resid = scores_y - scores_x @ a11.T
        resid_var[:p2] = np.maximum(resid.var(axis=0), _VAR_FLOOR)
    elif p2:
        resid_var[:p2] = np.maximum(scores_y.var(axis=0), _VAR_FLOOR)
    params = ModelParams(
        config=config,
        reg_matrix=reg,
        reg_resid_var=resid_var,
        effect_cov=effect_cov,
        mean_coef_x=mean_x,
        mean_coef_y=mean_y,
        comp_coef_x=comp_x,
        comp_coef_y=comp_y,
        noise_var_x=noise_x,
        noise_var_y=noise_y,
    )
    return enforce_constraints(params)


def e_step(params: ModelParams, data: CurveDataset, warm=None, gtol=1e-6):
    """Laplace posteriors for every curve; returns (moments, total loglik).

    ``warm`` supplies previous posterior modes as starting points, which
    skips the multi-start search.
    """
    moments = []
    total = 0.0
    for i in range(data.n):
        xt, xv, yt, yv = data.curve(i)
        init = None if warm is None else warm[i].posterior.mode
        try:
            mom = laplace_moments(params, xt, xv, yt, yv, init=init, gtol=gtol)
        except ModeSearchError:
            # extremely stiff curves (tiny noise floors) cannot always hit
            # the absolute gradient tolerance; retry relaxed before giving up
            mom = laplace_moments(params, xt, xv, yt, yv, init=init, gtol=1e3 * gtol)
        moments.append(mom)
        total += mom.posterior.loglik
    return moments, total


def _design_at_mode(spline, warp_spec, theta, times):
    if warp_spec is None:
        return bs.eval_matrix(spline, times)
    w = wp.make_warp(warp_spec, wp.jupp_inv(warp_spec, theta))
    return bs.eval_matrix(spline, wp.warp_invert(w, times))


def _orthonormalize_with_transform(coef, metric):
    """Symmetric-inverse-square-root orthonormalization plus the implied
    score transformation ``T`` (new scores = T old scores)."""
    inner = coef.T @ metric @ coef
    evals, evecs = np.linalg.eigh(0.5 * (inner + inner.T))
    if evals.min() <= 1e-12 * max(evals.max(), 1.0):
        raise DegeneracyError("component update lost rank")
    half = (evecs * np.sqrt(evals)) @ evecs.T
    inv_half = (evecs / np.sqrt(evals)) @ evecs.T
    return coef @ inv_half, half


def _gls_side(designs, values, means, covs, q, n_comp):
    """Penalized GLS for (mean, components) with frozen designs and
    posterior score moments as weights."""
    k = 1 + n_comp
    normal = np.zeros((q * k, q * k))
    rhs = np.zeros((q, k))
    for design, v, mu, cov in zip(designs, values, means, covs):
        gmat = np.empty((k, k))
        gmat[0, 0] = 1.0
        gmat[0, 1:] = mu
        gmat[1:, 0] = mu
        gmat[1:, 1:] = cov + np.outer(mu, mu)
        kern = design.T @ design
        normal += np.kron(gmat, kern)
        rhs += np.outer(design.T @ v, np.concatenate([[1.0], mu]))
    ridge = 1e-8 * max(np.trace(normal) / (q * k), 1.0)
    normal += ridge * np.eye(q * k)
    sol = np.linalg.solve(normal, rhs.ravel(order="F"))
    theta = sol.reshape((q, k), order="F")
    return theta[:, 0], theta[:, 1:]


def _expected_sse(designs, values, mean_coef, comp_coef, means, covs):
    sse, count = 0.0, 0
    for design, v, mu, cov in zip(designs, values, means, covs):
        fitted = design @ (mean_coef + (comp_coef @ mu if mu.size else 0.0))
        resid = v - fitted
        sse += resid @ resid
        if mu.size:
            dc = design @ comp_coef
            sse += np.einsum("ij,jk,ik->", dc, cov, dc)
        count += v.size
    return sse, count


def _m_step(params: ModelParams, data: CurveDataset, moments) -> ModelParams:
    cfg = params.config
    p1, p2 = cfg.n_comp_x, cfg.n_comp_y
    d1, d2 = cfg.dim_x, cfg.dim_y
    n = data.n
    mu_w, mu_z = params.effect_mean_x, params.effect_mean_y

    sum_ww = np.zeros((d1, d1))
    sum_wz = np.zeros((d1, d2))
    sum_zz = np.zeros((d2, d2))
    for mom in moments:
        sum_ww += mom.ww
        sum_wz += mom.wz
        sum_zz += mom.zz

    # effect regression and residual covariance (closed forms)
    reg = np.linalg.solve(sum_ww, sum_wz).T
    resid_mat = (sum_zz - reg @ sum_wz - sum_wz.T @ reg.T + reg @ sum_ww @ reg.T) / n
    resid_var = np.maximum(np.diag(resid_mat), _VAR_FLOOR)
    effect_cov = sum_ww / n

    # spline coefficients against designs frozen at the posterior modes
    designs_x, designs_y = [], []
    means_u, covs_u, means_v, covs_v = [], [], [], []
    for i, mom in enumerate(moments):
        mode, cov = mom.posterior.mode, mom.posterior.cov
        designs_x.append(
            _design_at_mode(cfg.x_basis, cfg.x_warp, mode[p1:d1], data.x_times[i])
        )
        designs_y.append(
            _design_at_mode(cfg.y_basis, cfg.y_warp, mode[d1 + p2 :], data.y_times[i])
        )
        means_u.append(mode[:p1])
        covs_u.append(cov[:p1, :p1])
        means_v.append(mode[d1 : d1 + p2])
        covs_v.append(cov[d1 : d1 + p2, d1 : d1 + p2])

    mean_x, comp_x_raw = _gls_side(
        designs_x, data.x_values, means_u, covs_u, cfg.x_basis.dim, p1
    )
    mean_y, comp_y_raw = _gls_side(
        designs_y, data.y_values, means_v, covs_v, cfg.y_basis.dim, p2
    )

    # restore orthonormality; propagate the score reparameterizations
    if p1:
        comp_x, t_u = _orthonormalize_with_transform(comp_x_raw, cfg.gram_x)
        t_w = np.eye(d1)
        t_w[:p1, :p1] = t_u
        effect_cov = t_w @ effect_cov @ t_w.T
        reg = reg @ np.linalg.inv(t_w)
        means_u = [t_u @ mu for mu in means_u]
        covs_u = [t_u @ c @ t_u.T for c in covs_u]
    else:
        comp_x = comp_x_raw
    if p2:
        comp_y, t_v = _orthonormalize_with_transform(comp_y_raw, cfg.gram_y)
        reg[:p2, :] = t_v @ reg[:p2, :]
        sigma_e11 = t_v @ np.diag(resid_var[:p2]) @ t_v.T
        resid_var = resid_var.copy()
        resid_var[:p2] = np.maximum(np.diag(sigma_e11), _VAR_FLOOR)
        means_v = [t_v @ mu for mu in means_v]
        covs_v = [t_v @ c @ t_v.T for c in covs_v]
    else:
        comp_y = comp_y_raw

    sse_x, count_x = _expected_sse(designs_x, data.x_values, mean_x, comp_x, means_u, covs_u)
    sse_y, count_y = _expected_sse(designs_y, data.y_values, mean_y, comp_y, means_v, covs_v)

    out = replace(
        params,
        reg_matrix=reg,
        reg_resid_var=resid_var,
        effect_cov=0.5 * (effect_cov + effect_cov.T),
        mean_coef_x=mean_x,
        mean_coef_y=mean_y,
        comp_coef_x=comp_x,
        comp_coef_y=comp_y,
        noise_var_x=max(sse_x / count_x, _VAR_FLOOR),
        noise_var_y=max(sse_y / count_y, _VAR_FLOOR),
    )
    return enforce_constraints(out)


def em_step(params: ModelParams, data: CurveDataset, warm=None, gtol=1e-6):
    """One E+M cycle; returns (updated params, log likelihood at the
    entry parameters, posterior moments at the entry parameters)."""
    moments, loglik = e_step(params, data, warm=warm, gtol=gtol)
    try:
        updated = _m_step(params, data, moments)
    except (np.linalg.LinAlgError, DegeneracyError) as exc:
        raise DegeneracyError(f"M-step failed: {exc}") from exc
    return updated, loglik, moments


def fit(config: ModelConfig, data: CurveDataset, fit_config: FitConfig | None = None,
        init_params: ModelParams | None = None) -> FitResult:
    """Fit all parameters by EM until the log-likelihood stabilizes.

    Non-convergence within ``max_iter`` is reported through the
    ``converged`` flag, not an exception.  ``init_params`` warm-starts
    the loop (used by the bootstrap).
    """
    fc = fit_config or FitConfig()
    _validate_dataset(config, data)
    params = initialize(config, data) if init_params is None else init_params
    trace = []
    warm = None
    moments = None
    converged = False
    iterations = 0
    for it in range(fc.max_iter):
        moments, loglik = e_step(params, data, warm=warm, gtol=fc.mode_gtol)
        trace.append(loglik)
        warm = moments
        if it > 0 and abs(trace[-1] - trace[-2]) <= fc.rel_tol * max(1.0, abs(trace[-2])):
            converged = True
            break
        try:
            params = _m_step(params, data, moments)
        except (DegeneracyError, np.linalg.LinAlgError):
            if not trace:
                raise
            break  # keep the last coherent parameters; converged stays False
        iterations += 1
    else:
        moments, loglik = e_step(params, data, warm=warm, gtol=fc.mode_gtol)
        trace.append(loglik)
    return FitResult(
        params=params,
        loglik_trace=np.asarray(trace),
        moments=moments,
        converged=converged,
        iterations=iterations,
    )
