"""Causal forest with separate prognostic and effect ensembles.

E[Y | x, z] = mu(x, pi_hat(x)) + tau(x) * z.  The prognostic forest sees the
estimated treatment probability as an extra covariate; the effect forest is
smaller and more strongly regularized (fewer trees, rarer and shallower
splits) and its rows enter the likelihood scaled by z, so only treated rows
inform the effect surface when z is binary.  The leaf scales of the two
forests get their own hyperpriors, half-Cauchy for the prognostic part and
half-Normal for the effect part, updated by Gibbs steps over a log-spaced
grid of candidate scales.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .bart import BartConfig, ForestState, bin_with_grids, build_grids
from .data import Dataset
from .errors import DegenerateDataError
from .learners import PropensityLike, _resolve_propensity
from .propensity import PropensityConfig
from .reports import EffectReport, report_from_draws
from .seeding import child_seed

# the half-normal median sits at this multiple of its scale parameter
_HALF_NORMAL_MEDIAN = float(stats.norm.ppf(0.75))


def _default_mu_forest() -> BartConfig:
    return BartConfig(m=200, alpha=0.95, beta=2.0)


def _default_tau_forest() -> BartConfig:
    return BartConfig(m=50, alpha=0.25, beta=3.0)


@dataclass
class BcfConfig:
    mu_forest: BartConfig = field(default_factory=_default_mu_forest)
    tau_forest: BartConfig = field(default_factory=_default_tau_forest)
    burn_in: int = 1000
    n_draws: int = 1000
    thinning: int = 1
    nu: float = 3.0
    q: float = 0.90
    mu_scale_median: float = 2.0    # half-Cauchy median, in SD(y) units
    tau_scale_median: float = 1.0   # half-Normal median, in SD(y) units
    scale_grid_size: int = 64
    scale_grid_span: tuple = (1e-3, 10.0)
    tau_scale_fixed: Optional[float] = None  # diagnostic; 0 collapses tau
    keep_component_draws: bool = True

    def __post_init__(self):
        if self.mu_scale_median <= 0 or self.tau_scale_median <= 0:
            raise ValueError("scale medians must be > 0")
        if self.burn_in < 1 or self.n_draws < 1 or self.thinning < 1:
            raise ValueError("burn_in, n_draws and thinning must be >= 1")


def _log_half_cauchy(s_grid: np.ndarray, scale: float) -> np.ndarray:
    return np.log(2.0 / (np.pi * scale)) - np.log1p((s_grid / scale) ** 2)


def _log_half_normal(s_grid: np.ndarray, scale: float) -> np.ndarray:
    return (0.5 * np.log(2.0 / np.pi) - np.log(scale)
            - s_grid ** 2 / (2.0 * scale ** 2))


def _grid_gibbs_scale(leaves: np.ndarray, m: int, s_grid: np.ndarray,
                      log_prior: np.ndarray, rng) -> float:
    """Sample the function-level scale S given current leaf values, which are
    modelled as N(0, S^2/m) a priori."""
    k = leaves.size
    ss = float(leaves @ leaves)
    leaf_var = s_grid ** 2 / m
    loglik = -0.5 * k * np.log(2.0 * np.pi * leaf_var) - ss / (2.0 * leaf_var)
    logpost = loglik + log_prior
    logpost -= logpost.max()
    w = np.exp(logpost)
    w /= w.sum()
    return float(s_grid[np.searchsorted(np.cumsum(w), rng.random())])


def bcf_fit(dataset: Dataset, config: Optional[BcfConfig] = None,
            seed: int = 0, propensity: PropensityLike = None,
            propensity_config: Optional[PropensityConfig] = None
            ) -> EffectReport:
    """Alternating backfitting over the two forests; effect draws come from
    the effect forest directly (no arm differencing)."""
    t0 = time.perf_counter()
    config = config or BcfConfig()
    x, y, z = dataset.x, dataset.y, dataset.z
    n = dataset.n
    if z.sum() in (0, n):
        raise DegenerateDataError(
            "effect forest is unidentified when all units share one arm")
    rng = np.random.default_rng(seed)

    if propensity_config is None:
        propensity_config = PropensityConfig(bart=replace(
            config.mu_forest, burn_in=config.burn_in, n_draws=config.n_draws))
    pi_hat = _resolve_propensity(dataset, propensity, propensity_config,
                                 config.mu_forest, child_seed(seed, 20))

    y_mean = float(y.mean())
    s_y = float(np.std(y, ddof=1))
    if s_y == 0:
        raise DegenerateDataError("constant outcome")
    ys = (y - y_mean) / s_y

    x_mu = np.column_stack([x, pi_hat])
    grids_mu = build_grids(x_mu, config.mu_forest.n_cutpoints)
    grids_tau = build_grids(x, config.tau_forest.n_cutpoints)
    mu_cfg, tau_cfg = config.mu_forest, config.tau_forest

    mu_scale = config.mu_scale_median            # SD(ys) = 1
    mu_state = ForestState(
        bin_with_grids(x_mu, grids_mu),
        np.array([len(g) for g in grids_mu], np.int32), mu_cfg.m,
        mu_cfg.alpha, mu_cfg.beta, (mu_scale / np.sqrt(mu_cfg.m)) ** 2,
        mu_cfg.min_node_size, mu_cfg.max_depth, mu_cfg.proposal_probs)

    tau_fixed = config.tau_scale_fixed
    tau_scale = (config.tau_scale_median if tau_fixed is None
                 else float(tau_fixed))
    tau_state = ForestState(
        bin_with_grids(x, grids_tau),
        np.array([len(g) for g in grids_tau], np.int32), tau_cfg.m,
        tau_cfg.alpha, tau_cfg.beta, (tau_scale / np.sqrt(tau_cfg.m)) ** 2,
        tau_cfg.min_node_size, tau_cfg.max_depth, tau_cfg.proposal_probs)

    lo, hi = config.scale_grid_span
    grid_mu = np.geomspace(lo * config.mu_scale_median,
                           hi * config.mu_scale_median, config.scale_grid_size)
    prior_mu = _log_half_cauchy(grid_mu, config.mu_scale_median)
    grid_tau = np.geomspace(lo * config.tau_scale_median,
                            hi * config.tau_scale_median, config.scale_grid_size)
    prior_tau = _log_half_normal(
        grid_tau, config.tau_scale_median / _HALF_NORMAL_MEDIAN)

    lam = stats.chi2.ppf(1.0 - config.q, config.nu) / config.nu  # sd(ys)=1
    sigma2 = 1.0
    ones = np.ones(n)

    kept = 0
    tau_draws = np.empty((config.n_draws, n))
    mu_draws = np.empty((config.n_draws, n)) if config.keep_component_draws else None
    sigma2_draws = np.empty(config.n_draws)
    depth_mu = np.empty((config.n_draws, mu_cfg.m), np.int32)
    depth_tau = np.empty((config.n_draws, tau_cfg.m), np.int32)
    scale_draws = np.empty((config.n_draws, 2))

    total_iters = config.burn_in + config.n_draws * config.thinning
    for it in range(total_iters):
        mu_state.sweep(ys - z * tau_state.total_fit, ones, sigma2, rng)
        tau_state.sweep(ys - mu_state.total_fit, z, sigma2, rng)
        mu_scale = _grid_gibbs_scale(mu_state.leaf_values(), mu_cfg.m,
                                     grid_mu, prior_mu, rng)
        mu_state.sigma_mu2 = (mu_scale / np.sqrt(mu_cfg.m)) ** 2
        if tau_fixed is None:
            tau_scale = _grid_gibbs_scale(tau_state.leaf_values(), tau_cfg.m,
                                          grid_tau, prior_tau, rng)
            tau_state.sigma_mu2 = (tau_scale / np.sqrt(tau_cfg.m)) ** 2
        resid = ys - mu_state.total_fit - z * tau_state.total_fit
        shape = 0.5 * (config.nu + n)
        rate = 0.5 * (config.nu * lam + float(resid @ resid))
        sigma2 = rate / rng.standard_gamma(shape)
        if it >= config.burn_in and (it - config.burn_in + 1) % config.thinning == 0:
            tau_draws[kept] = tau_state.total_fit * s_y
            if mu_draws is not None:
                mu_draws[kept] = mu_state.total_fit * s_y + y_mean
            sigma2_draws[kept] = sigma2 * s_y ** 2
            depth_mu[kept] = mu_state.tdepth
            depth_tau[kept] = tau_state.tdepth
            scale_draws[kept] = (mu_scale, tau_scale)
            kept += 1

    diagnostics = {
        "runtime_s": time.perf_counter() - t0,
        "n_draws": kept,
        "pi_hat": pi_hat,
        "sigma2_draws": sigma2_draws,
        "scale_draws": scale_draws,
        "mu_depth_median": float(np.median(depth_mu)),
        "tau_depth_median": float(np.median(depth_tau)),
    }
    if mu_draws is not None:
        diagnostics["mu_draws"] = mu_draws
        diagnostics["tau_draws"] = tau_draws
    rep = report_from_draws("bcf", tau_draws, diagnostics=diagnostics)
    rep.check()
    return rep
