"""Shared test utilities: model factories, data sampling, and independent
closed-form oracles for the linear-Gaussian (no-warp) special case."""

import numpy as np

from warpreg.basis import SplineBasis, eval_matrix, gram, orthonormalize
from warpreg.model import CurveDataset, ModelConfig, ModelParams, enforce_constraints
from warpreg.warp import WarpSpec, jupp_inv, make_warp, warp_invert

X_KNOTS = {1: (0.4,), 2: (0.3, 0.7)}
Y_KNOTS = {1: (0.55,), 2: (0.35, 0.75)}


def gl_quadrature(breaks, n_nodes=8):
    """Gauss-Legendre points/weights per interval of a partition; exact for
    piecewise polynomials of degree < 2 * n_nodes."""
    breaks = np.asarray(breaks, dtype=float)
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    mid = 0.5 * (breaks[1:] + breaks[:-1])
    half = 0.5 * (breaks[1:] - breaks[:-1])
    pts = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    wts = (half[:, None] * weights[None, :]).ravel()
    return pts, wts


def make_params(p1=1, p2=1, r1=0, r2=0, seed=0, n_interior=4, score_sd=None):
    """A valid random ModelParams for testing."""
    rng = np.random.default_rng(seed)
    x_basis = SplineBasis.uniform((0.0, 1.0), n_interior)
    y_basis = SplineBasis.uniform((0.0, 1.0), n_interior)
    config = ModelConfig(
        x_basis=x_basis,
        y_basis=y_basis,
        n_comp_x=p1,
        n_comp_y=p2,
        x_warp=WarpSpec((0.0, 1.0), X_KNOTS[r1]) if r1 else None,
        y_warp=WarpSpec((0.0, 1.0), Y_KNOTS[r2]) if r2 else None,
    )
    d1, d2 = config.dim_x, config.dim_y
    comp_x = orthonormalize(rng.normal(size=(x_basis.dim, p1)), config.gram_x)
    comp_y = orthonormalize(rng.normal(size=(y_basis.dim, p2)), config.gram_y)
    if score_sd is None:
        score_sd = np.concatenate([np.linspace(0.5, 0.3, p1), np.full(r1, 0.1)])
    effect_cov = np.diag(np.asarray(score_sd, dtype=float) ** 2)
    reg = 0.4 * rng.normal(size=(d2, d1))
    params = ModelParams(
        config=config,
        reg_matrix=reg,
        reg_resid_var=np.full(d2, 0.07**2),
        effect_cov=effect_cov,
        mean_coef_x=rng.normal(0, 0.5, size=x_basis.dim),
        mean_coef_y=rng.normal(0, 0.5, size=y_basis.dim),
        comp_coef_x=comp_x,
        comp_coef_y=comp_y,
        noise_var_x=0.05**2,
        noise_var_y=0.05**2,
    )
    return enforce_constraints(params)


def sample_effects(params, n, rng):
    """Draw latent effects from the model."""
    cfg = params.config
    mu_w, mu_z = params.effect_mean_x, params.effect_mean_y
    chol = np.linalg.cholesky(params.effect_cov)
    w = mu_w + rng.normal(size=(n, cfg.dim_x)) @ chol.T
    e = rng.normal(size=(n, cfg.dim_y)) * np.sqrt(params.reg_resid_var)
    z = mu_z + (w - mu_w) @ params.reg_matrix.T + e
    return w, z


def curve_values(params, side, scores, theta, grid):
    """Noiseless curve for given effects (independent of the package's
    reconstruct_curve: assembles the expansion by hand)."""
    cfg = params.config
    if side == "x":
        spline, spec = cfg.x_basis, cfg.x_warp
        coef = params.mean_coef_x + (params.comp_coef_x @ scores if len(scores) else 0.0)
    else:
        spline, spec = cfg.y_basis, cfg.y_warp
        coef = params.mean_coef_y + (params.comp_coef_y @ scores if len(scores) else 0.0)
    pts = np.asarray(grid, dtype=float)
    if spec is not None:
        warp = make_warp(spec, jupp_inv(spec, np.asarray(theta)))
        pts = warp_invert(warp, pts)
    return eval_matrix(spline, pts) @ coef


def sample_dataset(params, n, rng, n_obs=(10, 20)):
    """Simulate a paired dataset from the model on random irregular grids."""
    cfg = params.config
    p1, p2 = cfg.n_comp_x, cfg.n_comp_y
    w, z = sample_effects(params, n, rng)
    xt, xv, yt, yv = [], [], [], []
    for i in range(n):
        n1 = int(rng.integers(n_obs[0], n_obs[1] + 1))
        n2 = int(rng.integers(n_obs[0], n_obs[1] + 1))
        sx = np.sort(rng.uniform(0, 1, n1))
        sy = np.sort(rng.uniform(0, 1, n2))
        fx = curve_values(params, "x", w[i, :p1], w[i, p1:], sx)
        fy = curve_values(params, "y", z[i, :p2], z[i, p2:], sy)
        xt.append(sx)
        xv.append(fx + rng.normal(0, np.sqrt(params.noise_var_x), n1))
        yt.append(sy)
        yv.append(fy + rng.normal(0, np.sqrt(params.noise_var_y), n2))
    return CurveDataset(xt, xv, yt, yv), w, z


# ---------------------------------------------------------------------------
# closed-form oracle for the no-warp case


def gaussian_joint(params, x_t, y_t):
    """Mean/covariance pieces of the exact Gaussian joint for r1=r2=0.

    Returns (offset, lin, prior_mean, prior_cov, noise_diag) so that
    data = offset + lin @ effects + noise with effects ~ N(prior_mean, prior_cov).
    """
    cfg = params.config
    assert cfg.n_warp_x == 0 and cfg.n_warp_y == 0
    bx = eval_matrix(cfg.x_basis, x_t)
    by = eval_matrix(cfg.y_basis, y_t)
    offset = np.concatenate([bx @ params.mean_coef_x, by @ params.mean_coef_y])
    d1, d2 = cfg.dim_x, cfg.dim_y
    lin = np.zeros((len(x_t) + len(y_t), d1 + d2))
    lin[: len(x_t), :d1] = bx @ params.comp_coef_x
    lin[len(x_t) :, d1:] = by @ params.comp_coef_y
    a = params.reg_matrix
    sw = params.effect_cov
    prior_cov = np.block([[sw, sw @ a.T], [a @ sw, a @ sw @ a.T + np.diag(params.reg_resid_var)]])
    prior_mean = np.concatenate([params.effect_mean_x, params.effect_mean_y])
    noise = np.concatenate(
        [np.full(len(x_t), params.noise_var_x), np.full(len(y_t), params.noise_var_y)]
    )
    return offset, lin, prior_mean, prior_cov, noise


def exact_posterior(params, x_t, x_v, y_t, y_v):
    """Exact conditional mean/covariance of the effects and the exact
    marginal log likelihood (no-warp case), by normal equations."""
    offset, lin, prior_mean, prior_cov, noise = gaussian_joint(params, x_t, y_t)
    obs = np.concatenate([np.asarray(x_v), np.asarray(y_v)])
    prec = np.linalg.inv(prior_cov) + lin.T @ (lin / noise[:, None])
    cov = np.linalg.inv(prec)
    resid = obs - offset - lin @ prior_mean
    mean = prior_mean + cov @ (lin.T @ (resid / noise))
    marg_cov = lin @ prior_cov @ lin.T + np.diag(noise)
    sign, logdet = np.linalg.slogdet(marg_cov)
    assert sign > 0
    loglik = -0.5 * (obs.size * np.log(2 * np.pi) + logdet + resid @ np.linalg.solve(marg_cov, resid))
    return mean, cov, loglik


def exact_covariate_posterior(params, x_t, x_v):
    """Exact conditional of covariate effects given x only (no warp)."""
    cfg = params.config
    bx = eval_matrix(cfg.x_basis, x_t)
    lin = bx @ params.comp_coef_x
    resid = np.asarray(x_v) - bx @ params.mean_coef_x
    prec = np.linalg.inv(params.effect_cov) + lin.T @ lin / params.noise_var_x
    cov = np.linalg.inv(prec)
    mean = params.effect_mean_x + cov @ (lin.T @ resid) / params.noise_var_x
    return mean, cov
