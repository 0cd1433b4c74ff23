"""Benchmark meta-learners built on the tree-ensemble sampler.

Every learner returns an :class:`~causalbart.reports.EffectReport` whose ATE
draws are the per-draw means of the unit-level effect draws.
"""

from __future__ import annotations

import time
from typing import Optional, Union

import numpy as np

from .bart import BartConfig, fit
from .data import Dataset
from .errors import DegenerateDataError
from .folds import make_folds
from .propensity import PropensityConfig, PropensityEstimate, estimate_propensity, fit_probit
from .reports import EffectReport, report_from_draws
from .seeding import child_seed

PropensityLike = Union[PropensityEstimate, np.ndarray, None]


def _resolve_propensity(dataset: Dataset, propensity: PropensityLike,
                        propensity_config: Optional[PropensityConfig],
                        config: BartConfig, seed: int) -> np.ndarray:
    """Injected values win; otherwise fit the probit model in-sample."""
    if isinstance(propensity, PropensityEstimate):
        return propensity.pi_hat
    if propensity is not None:
        return np.asarray(propensity, float)
    pcfg = propensity_config or PropensityConfig(bart=config)
    return estimate_propensity(dataset.x, dataset.z, pcfg, seed).pi_hat


def _check_arms(dataset: Dataset, min_size: int = 2) -> None:
    n1 = dataset.n_treated
    n0 = dataset.n - n1
    if n1 < min_size:
        raise DegenerateDataError(f"treated arm has {n1} units (< {min_size})")
    if n0 < min_size:
        raise DegenerateDataError(f"control arm has {n0} units (< {min_size})")


def s_learner(dataset: Dataset, config: BartConfig, seed: int) -> EffectReport:
    """Single fit on (x, z); effect draws are f(x,1) - f(x,0) per draw."""
    t0 = time.perf_counter()
    x_aug = np.column_stack([dataset.x, dataset.z])
    post = fit(x_aug, dataset.y, config, child_seed(seed, 0))
    x1 = x_aug.copy()
    x1[:, -1] = 1.0
    x0 = x_aug.copy()
    x0[:, -1] = 0.0
    tau_draws = post.predict_draws(x1) - post.predict_draws(x0)
    rep = report_from_draws("s_learner", tau_draws, diagnostics={
        "runtime_s": time.perf_counter() - t0, "n_draws": post.n_draws})
    rep.check()
    return rep


def bart_f0_f1(dataset: Dataset, config: BartConfig, seed: int) -> EffectReport:
    """Separate fits per arm; effect draws paired by draw index."""
    t0 = time.perf_counter()
    _check_arms(dataset)
    treated = dataset.z == 1
    post_t = fit(dataset.x[treated], dataset.y[treated], config,
                 child_seed(seed, 1))
    post_c = fit(dataset.x[~treated], dataset.y[~treated], config,
                 child_seed(seed, 2))
    tau_draws = post_t.predict_draws(dataset.x) - post_c.predict_draws(dataset.x)
    rep = report_from_draws("bart_f0_f1", tau_draws, diagnostics={
        "runtime_s": time.perf_counter() - t0, "n_draws": post_t.n_draws})
    rep.check()
    return rep


def ps_bart(dataset: Dataset, config: BartConfig, seed: int,
            propensity: PropensityLike = None,
            propensity_config: Optional[PropensityConfig] = None
            ) -> EffectReport:
    """Single fit on (x, z, pi_hat): the estimated treatment probability is
    just another covariate."""
    t0 = time.perf_counter()
    pi_hat = _resolve_propensity(dataset, propensity, propensity_config,
                                 config, child_seed(seed, 3))
    x_aug = np.column_stack([dataset.x, dataset.z, pi_hat])
    post = fit(x_aug, dataset.y, config, child_seed(seed, 4))
    x1 = x_aug.copy()
    x1[:, -2] = 1.0
    x0 = x_aug.copy()
    x0[:, -2] = 0.0
    tau_draws = post.predict_draws(x1) - post.predict_draws(x0)
    rep = report_from_draws("ps_bart", tau_draws, diagnostics={
        "runtime_s": time.perf_counter() - t0, "n_draws": post.n_draws})
    rep.check()
    return rep


def dr_pseudo_outcomes(y, z, pi_hat, y0_hat, y1_hat) -> np.ndarray:
    """Augmented inverse-weighted effect scores.

    (z - pi)/(pi (1-pi)) * (y - yhat_z) + (y1_hat - y0_hat), where yhat_z is
    the prediction for the arm actually received.
    """
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    pi_hat = np.asarray(pi_hat, float)
    y0_hat = np.asarray(y0_hat, float)
    y1_hat = np.asarray(y1_hat, float)
    if (pi_hat <= 0.0).any() or (pi_hat >= 1.0).any():
        raise ValueError("pi_hat must be clipped strictly inside (0,1)")
    y_received = np.where(z == 1, y1_hat, y0_hat)
    return ((z - pi_hat) / (pi_hat * (1.0 - pi_hat)) * (y - y_received)
            + (y1_hat - y0_hat))


def dr_learner(dataset: Dataset, config: BartConfig, seed: int,
               n_folds: int = 5,
               propensity_config: Optional[PropensityConfig] = None
               ) -> EffectReport:
    """Cross-fitted outcome and propensity models feed pseudo-outcomes; a
    final regression of the pseudo-outcomes on x yields the effect draws."""
    t0 = time.perf_counter()
    _check_arms(dataset)
    pcfg = propensity_config or PropensityConfig(bart=config)
    x, z, y = dataset.x, dataset.z, dataset.y
    n = dataset.n
    folds = make_folds(n, n_folds, child_seed(seed, 5))
    y0_hat = np.empty(n)
    y1_hat = np.empty(n)
    pi_hat = np.empty(n)
    for k, train, test in folds.iter_folds():
        tr_treated = train[z[train] == 1]
        tr_control = train[z[train] == 0]
        if len(tr_treated) < 2 or len(tr_control) < 2:
            raise DegenerateDataError(
                f"fold {k}: a training arm is empty; use fewer folds")
        post1 = fit(x[tr_treated], y[tr_treated], config, child_seed(seed, 6, k))
        post0 = fit(x[tr_control], y[tr_control], config, child_seed(seed, 7, k))
        prob = fit_probit(x[train], z[train], pcfg.bart, child_seed(seed, 8, k))
        y1_hat[test] = post1.predict_draws(x[test]).mean(axis=0)
        y0_hat[test] = post0.predict_draws(x[test]).mean(axis=0)
        pi_hat[test] = np.clip(prob.prob_mean(x[test]), pcfg.clip_epsilon,
                               1.0 - pcfg.clip_epsilon)
    pseudo = dr_pseudo_outcomes(y, z, pi_hat, y0_hat, y1_hat)
    post = fit(x, pseudo, config, child_seed(seed, 9))
    tau_draws = post.predict_draws(x)
    rep = report_from_draws("dr_learner", tau_draws, diagnostics={
        "runtime_s": time.perf_counter() - t0, "n_draws": post.n_draws})
    rep.check()
    return rep


def x_learner(dataset: Dataset, config: BartConfig, seed: int,
              propensity: PropensityLike = None,
              propensity_config: Optional[PropensityConfig] = None
              ) -> EffectReport:
    """Impute each arm's counterfactual from the other arm's fit, regress the
    imputed effects on x per arm, then blend the two effect surfaces with
    propensity weights."""
    t0 = time.perf_counter()
    _check_arms(dataset)
    x, z, y = dataset.x, dataset.z, dataset.y
    treated = z == 1
    post_t = fit(x[treated], y[treated], config, child_seed(seed, 10))
    post_c = fit(x[~treated], y[~treated], config, child_seed(seed, 11))
    d_treated = y[treated] - post_c.predict_draws(x[treated]).mean(axis=0)
    d_control = post_t.predict_draws(x[~treated]).mean(axis=0) - y[~treated]
    eff_t = fit(x[treated], d_treated, config, child_seed(seed, 12))
    eff_c = fit(x[~treated], d_control, config, child_seed(seed, 13))
    tau_t = eff_t.predict_draws(x)
    tau_c = eff_c.predict_draws(x)
    pi_hat = _resolve_propensity(dataset, propensity, propensity_config,
                                 config, child_seed(seed, 14))
    tau_draws = tau_t * (1.0 - pi_hat) + tau_c * pi_hat
    rep = report_from_draws("x_learner", tau_draws, diagnostics={
        "runtime_s": time.perf_counter() - t0, "n_draws": eff_t.n_draws})
    rep.check()
    return rep
