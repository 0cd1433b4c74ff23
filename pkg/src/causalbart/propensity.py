"""Treatment-probability estimation with a probit-link tree ensemble.

Binary outcomes are handled by latent-variable augmentation: given the
treatment indicator, a truncated-normal latent is drawn around the current
forest value, and the forest is updated against the latents with unit error
variance. Posterior-mean probabilities are clipped away from 0 and 1 so
downstream inverse weighting stays bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from .bart import (BartConfig, BartPosterior, ForestState, LeafPrior,
                   bin_with_grids, build_grids)
from .errors import DegenerateDataError
from .folds import make_folds

_EPS = 1e-15


@dataclass
class PropensityConfig:
    bart: BartConfig = field(default_factory=BartConfig)
    clip_epsilon: float = 0.025
    cross_fit: bool = False
    n_folds: int = 5

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 0.5:
            raise ValueError("clip_epsilon must lie in (0, 0.5)")


class ProbitPosterior:
    """Latent-scale forest draws plus the probit link."""

    def __init__(self, posterior: BartPosterior):
        self._post = posterior

    @property
    def n_draws(self) -> int:
        return self._post.n_draws

    def latent_draws(self, x: np.ndarray) -> np.ndarray:
        return self._post.predict_draws(x)

    def prob_draws(self, x: np.ndarray) -> np.ndarray:
        return ndtr(self._post.predict_draws(x))

    def prob_mean(self, x: np.ndarray) -> np.ndarray:
        return self.prob_draws(x).mean(axis=0)


def _draw_latents(f: np.ndarray, z01: np.ndarray, rng) -> np.ndarray:
    """Truncated-normal latents: positive where treated, nonpositive where
    not; inverse-CDF sampling with tail-safe clamping."""
    u = rng.random(f.shape[0])
    p_neg = ndtr(-f)  # P(latent <= 0)
    arg = np.where(z01 > 0, p_neg + u * (1.0 - p_neg), u * p_neg)
    return f + ndtri(np.clip(arg, _EPS, 1.0 - _EPS))


def fit_probit(x: np.ndarray, z: np.ndarray, config: BartConfig, seed: int
               ) -> ProbitPosterior:
    """Probit-link fit of a binary indicator on covariates."""
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    n = z.shape[0]
    if z.sum() in (0, n):
        raise DegenerateDataError("both treatment classes must be present")
    rng = np.random.default_rng(seed)

    zbar = float(np.clip(z.mean(), 1.0 / (n + 1), n / (n + 1.0)))
    offset = float(ndtri(zbar))
    sigma_mu = 3.0 / (config.k * np.sqrt(max(config.m, 1)))

    grids = build_grids(x, config.n_cutpoints)
    ncuts = np.array([len(g) for g in grids], np.int32)
    codes = bin_with_grids(x, grids)
    state = ForestState(codes, ncuts, config.m, config.alpha, config.beta,
                        sigma_mu ** 2, config.min_node_size, config.max_depth,
                        config.proposal_probs)
    weights = np.ones(n)

    snaps = []
    total_iters = config.burn_in + config.n_draws * config.thinning
    for it in range(total_iters):
        f = offset + state.total_fit
        latent = _draw_latents(f, z, rng)
        try:
            state.sweep(latent - offset, weights, 1.0, rng)
        except FloatingPointError as exc:
            raise RuntimeError(
                f"probit sampler aborted at iteration {it}: {exc}") from exc
        if config.debug_validate:
            state.validate()
        if it >= config.burn_in and (it - config.burn_in + 1) % config.thinning == 0:
            snaps.append(state.snapshot())

    post = BartPosterior(snaps, np.ones(len(snaps)), grids, config.m,
                         scale=1.0, offset=offset)
    return ProbitPosterior(post)


@dataclass
class PropensityEstimate:
    """Clipped treatment probabilities for the training units plus a
    predictor for new covariates."""

    pi_hat: np.ndarray
    clip_epsilon: float
    _models: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        lo, hi = self.clip_epsilon, 1.0 - self.clip_epsilon
        if (self.pi_hat < lo).any() or (self.pi_hat > hi).any():
            raise ValueError("pi_hat escapes the clipping bounds")

    def predict(self, x_new: np.ndarray) -> np.ndarray:
        if not self._models:
            raise ValueError("no fitted model attached")
        probs = np.mean([mdl.prob_mean(x_new) for mdl in self._models], axis=0)
        return np.clip(probs, self.clip_epsilon, 1.0 - self.clip_epsilon)


def estimate_propensity(x: np.ndarray, z: np.ndarray,
                        config: Optional[PropensityConfig] = None,
                        seed: int = 0) -> PropensityEstimate:
    """Probit tree-ensemble propensities; optionally cross-fitted so no unit
    is scored by a model that saw it."""
    config = config or PropensityConfig()
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    n = z.shape[0]
    if z.sum() in (0, n):
        raise DegenerateDataError("both treatment classes must be present")
    lo, hi = config.clip_epsilon, 1.0 - config.clip_epsilon

    if not config.cross_fit:
        model = fit_probit(x, z, config.bart, seed)
        pi_hat = np.clip(model.prob_mean(x), lo, hi)
        return PropensityEstimate(pi_hat, config.clip_epsilon, [model])

    folds = make_folds(n, config.n_folds, seed)
    pi_hat = np.empty(n)
    models = []
    for k, train, test in folds.iter_folds():
        mdl = fit_probit(x[train], z[train], config.bart,
                         int(np.random.SeedSequence((seed, k)).generate_state(1)[0]))
        pi_hat[test] = mdl.prob_mean(x[test])
        models.append(mdl)
    return PropensityEstimate(np.clip(pi_hat, lo, hi), config.clip_epsilon,
                              models)
