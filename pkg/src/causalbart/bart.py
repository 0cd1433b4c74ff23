"""Sum-of-trees Bayesian regression: priors, MCMC fitting, prediction.

The sampler runs Bayesian backfitting: each tree is updated against the
partial residual of the others with a Metropolis-Hastings move on its
structure (leaf values integrated out), leaf values are then drawn from
their normal full conditionals, and the error variance from its inverse-gamma
full conditional.  Everything is deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import _tree_kernel as tk
from .errors import CalibrationError, SchemaError
from .reports import IntervalSummary

__all__ = [
    "BartConfig", "LeafPrior", "SigmaPrior", "BartPosterior",
    "calibrate_priors", "split_prior_prob", "fit", "predict_draws",
    "summarize",
]


@dataclass
class BartConfig:
    """Hyperparameters and run lengths for one sum-of-trees fit.

    ``m=0`` is a diagnostic mode that samples only the error variance.
    ``proposal_probs`` of all zeros freezes tree structures (leaf values and
    sigma still update), which the conjugacy tests rely on.
    """

    m: int = 200
    alpha: float = 0.95
    beta: float = 2.0
    k: float = 2.0
    nu: float = 3.0
    q: float = 0.90
    sigma_hat_mode: str = "naive"  # or "linear_model"
    burn_in: int = 1000
    n_draws: int = 1000
    thinning: int = 1
    min_node_size: int = 5
    proposal_probs: tuple = (0.25, 0.25, 0.40, 0.10)
    n_cutpoints: int = 100
    max_depth: int = 10
    standardize_y: bool = True
    sigma2_fixed: Optional[float] = None
    debug_validate: bool = False

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0,1)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.nu <= 0:
            raise ValueError("nu must be > 0")
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie in (0,1)")
        if self.burn_in < 1 or self.n_draws < 1:
            raise ValueError("burn_in and n_draws must be >= 1")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if len(self.proposal_probs) != 4 or any(p < 0 for p in self.proposal_probs):
            raise ValueError("proposal_probs must be 4 nonnegative numbers")
        if not 1 <= self.n_cutpoints <= 32767:
            raise ValueError("n_cutpoints out of range")
        if self.sigma_hat_mode not in ("naive", "linear", "linear_model"):
            raise ValueError("sigma_hat_mode must be 'naive' or 'linear_model'")


@dataclass(frozen=True)
class LeafPrior:
    mu_mu: float
    sigma_mu: float

    def __post_init__(self):
        if self.sigma_mu <= 0:
            raise ValueError("sigma_mu must be > 0")


@dataclass(frozen=True)
class SigmaPrior:
    nu: float
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be > 0")


def split_prior_prob(depth: int, alpha: float = 0.95, beta: float = 2.0) -> float:
    """Probability that a node at the given depth is internal."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    return alpha * (1.0 + depth) ** (-beta)


def _sigma_hat(x, y, mode: str) -> float:
    if mode == "naive":
        return float(np.std(y, ddof=1))
    n, p = x.shape
    if n <= p + 1:
        return float(np.std(y, ddof=1))
    design = np.column_stack([np.ones(n), x])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = n - rank
    if dof <= 0:
        return float(np.std(y, ddof=1))
    return float(np.sqrt(resid @ resid / dof))


def calibrate_priors(x, y, config: BartConfig) -> tuple[LeafPrior, SigmaPrior]:
    """Leaf-mean prior from the outcome range, sigma prior from a quantile
    condition on a rough overestimate of the noise scale."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if y.size < 2:
        raise CalibrationError("need at least 2 observations")
    if config.m < 1:
        raise CalibrationError("leaf prior undefined for m=0")
    y_min, y_max = float(y.min()), float(y.max())
    if y_max == y_min:
        raise CalibrationError("constant outcome: leaf and sigma priors undefined")
    m, k = config.m, config.k
    mu_mu = (y_min + y_max) / (2.0 * m)
    sigma_mu = (y_max - y_min) / (2.0 * k * math.sqrt(m))
    sig_hat = _sigma_hat(x, y, config.sigma_hat_mode)
    if sig_hat <= 0:
        raise CalibrationError("zero noise-scale estimate")
    # q-quantile of the inverse-gamma prior on sigma^2 pinned at sig_hat^2
    lam = sig_hat ** 2 * stats.chi2.ppf(1.0 - config.q, config.nu) / config.nu
    return LeafPrior(mu_mu, sigma_mu), SigmaPrior(config.nu, lam)


def build_grids(x: np.ndarray, n_cutpoints: int) -> list[np.ndarray]:
    """Per-column cutpoint grids: all distinct-value splits when few, else
    quantile-based cutpoints. The column maximum is never a cutpoint."""
    grids = []
    for jcol in range(x.shape[1]):
        vals = x[:, jcol]
        uniq = np.unique(vals)
        if uniq.size <= 1:
            grids.append(np.empty(0))
            continue
        if uniq.size - 1 <= n_cutpoints:
            grids.append(uniq[:-1].astype(float))
        else:
            probs = (np.arange(n_cutpoints) + 1.0) / (n_cutpoints + 1.0)
            g = np.unique(np.quantile(vals, probs))
            g = g[g < uniq[-1]]
            grids.append(g.astype(float))
    return grids


def bin_with_grids(x: np.ndarray, grids: Sequence[np.ndarray]) -> np.ndarray:
    """Map values to bin codes so that code <= c iff value <= grid[c]."""
    n, d = x.shape
    codes = np.empty((n, d), np.int32)
    for jcol in range(d):
        codes[:, jcol] = np.searchsorted(grids[jcol], x[:, jcol], side="left")
    return codes


class ForestState:
    """Mutable sampler state for one forest; shared by BART, probit BART and
    the causal-forest sampler."""

    def __init__(self, codes: np.ndarray, ncuts: np.ndarray, m: int,
                 alpha: float, beta: float, sigma_mu2: float, min_node: int,
                 max_depth: int, proposal_probs) -> None:
        n = codes.shape[0]
        H = (1 << (max_depth + 1)) - 1
        self.codes = np.ascontiguousarray(codes, np.int32)
        self.ncuts = np.ascontiguousarray(ncuts, np.int32)
        self.m = m
        self.H = H
        self.alpha = alpha
        self.beta = beta
        self.sigma_mu2 = sigma_mu2
        self.min_node = min_node
        self.max_depth = max_depth
        total = float(sum(proposal_probs))
        if total > 0:
            self.pcum = np.cumsum(np.asarray(proposal_probs, float) / total)
        else:
            self.pcum = np.zeros(4)
        self.var = np.full((m, H), tk.UNUSED, np.int32)
        self.var[:, 0] = tk.LEAF
        self.cut = np.zeros((m, H), np.int32)
        self.leafval = np.zeros((m, H))
        self.node_of = np.zeros((m, n), np.int32)
        self.tdepth = np.zeros(m, np.int32)
        self.total_fit = np.zeros(n)
        # scratch buffers reused across sweeps
        self._r = np.empty(n)
        self._gold = np.empty(n)
        self._cnt = np.zeros(H, np.int64)
        self._Wb = np.zeros(H)
        self._Sb = np.zeros(H)
        self._cnt2 = np.zeros(H, np.int64)
        self._W2 = np.zeros(H)
        self._S2 = np.zeros(H)
        self._aff_u = np.empty(n, np.int32)
        self._aff_n = np.empty(n, np.int32)
        self._nodemin = np.zeros(H, np.int32)
        self._nodemax = np.zeros(H, np.int32)
        self._leaves = np.empty(H, np.int32)
        self._prun = np.empty(H, np.int32)
        self._internal = np.empty(H, np.int32)
        self._pair_p = np.empty(H, np.int32)
        self._pair_c = np.empty(H, np.int32)

    def sweep(self, target: np.ndarray, weights: np.ndarray, sigma2: float,
              rng: np.random.Generator) -> None:
        if self.m == 0:
            return
        bad = tk.run_sweep(
            self.var, self.cut, self.leafval, self.node_of, self.tdepth,
            self.total_fit, self.codes, self.ncuts, target, weights,
            float(sigma2), float(self.sigma_mu2), self.alpha, self.beta,
            self.min_node, self.max_depth, self.pcum, rng, self._r,
            self._gold, self._cnt, self._Wb, self._Sb, self._cnt2, self._W2,
            self._S2, self._aff_u, self._aff_n, self._nodemin, self._nodemax,
            self._leaves, self._prun, self._internal, self._pair_p,
            self._pair_c)
        if bad >= 0:
            raise FloatingPointError(f"non-finite leaf value in tree {bad}")

    def snapshot(self):
        return tk.snapshot_trees(self.var, self.cut, self.leafval, self.tdepth)

    def leaf_values(self) -> np.ndarray:
        """All active leaf values across trees (for scale updates)."""
        mask = self.var == tk.LEAF
        return self.leafval[mask]

    def validate(self) -> None:
        """Structural invariants: proper binary trees, occupied leaves of at
        least min_node rows, cutpoints inside each variable's grid."""
        for j in range(self.m):
            counts = np.bincount(self.node_of[j], minlength=self.H)
            for h in range(self.H):
                v = self.var[j, h]
                if v == tk.UNUSED:
                    if counts[h]:
                        raise AssertionError(f"rows assigned to unused slot {h}")
                    continue
                if h > 0 and self.var[j, (h - 1) >> 1] < 0:
                    raise AssertionError(f"dangling node {h} in tree {j}")
                if v >= 0:
                    if (self.var[j, 2 * h + 1] == tk.UNUSED
                            or self.var[j, 2 * h + 2] == tk.UNUSED):
                        raise AssertionError(f"internal node {h} lacks children")
                    if not 0 <= self.cut[j, h] < self.ncuts[v]:
                        raise AssertionError(f"cut outside grid at node {h}")
                    if counts[h]:
                        raise AssertionError(f"rows stuck at internal node {h}")
                else:
                    if counts[h] < self.min_node:
                        raise AssertionError(
                            f"leaf {h} in tree {j} holds {counts[h]} rows")


class BartPosterior:
    """Kept draws of a fitted forest: compact tree snapshots, sigma draws and
    the training-schema metadata needed to score new covariates."""

    def __init__(self, snaps, sigma2_draws_internal, grids, m, scale, offset,
                 columns=None):
        s_var, s_cut, s_left, s_leaf, tree_start = [], [], [], [], []
        base = 0
        for sv, sc, sl, slf, ts in snaps:
            s_var.append(sv)
            s_cut.append(sc)
            s_left.append(sl)
            s_leaf.append(slf)
            tree_start.append(ts[:-1] + base)
            base += len(sv)
        self.s_var = np.concatenate(s_var) if snaps else np.empty(0, np.int16)
        self.s_cut = np.concatenate(s_cut) if snaps else np.empty(0, np.int16)
        self.s_left = np.concatenate(s_left) if snaps else np.empty(0, np.int32)
        self.s_leaf = np.concatenate(s_leaf) if snaps else np.empty(0)
        if snaps:
            self.tree_start = np.concatenate(tree_start + [np.array([base])])
        else:
            self.tree_start = np.zeros(1, np.int64)
        self.sigma2_internal = np.asarray(sigma2_draws_internal)
        self.n_draws = len(self.sigma2_internal)
        self.grids = [np.asarray(g, float) for g in grids]
        self.m = m
        self.scale = float(scale)
        self.offset = float(offset)
        self.columns = list(columns) if columns is not None else None
        if (self.sigma2_internal <= 0).any():
            raise ValueError("sigma draws must be positive")

    @property
    def n_features(self) -> int:
        return len(self.grids)

    @property
    def sigma_draws(self) -> np.ndarray:
        """Error-scale draws on the original outcome scale."""
        return np.sqrt(self.sigma2_internal) * self.scale

    def _check_schema(self, x_new: np.ndarray) -> None:
        if x_new.ndim != 2 or x_new.shape[1] != self.n_features:
            got = x_new.shape[1] if x_new.ndim == 2 else None
            if self.columns is not None and got is not None and got < self.n_features:
                missing = self.columns[got]
                raise SchemaError(
                    f"covariate matrix lacks column '{missing}': expected "
                    f"{self.n_features} columns, got {got}")
            raise SchemaError(
                f"expected {self.n_features} covariate columns, got {got}")

    def predict_draws(self, x_new: np.ndarray) -> np.ndarray:
        """Per-draw predictions at new covariates, shape (n_draws, n_new)."""
        x_new = np.asarray(x_new, float)
        self._check_schema(x_new)
        codes = bin_with_grids(x_new, self.grids)
        out = np.zeros((self.n_draws, x_new.shape[0]))
        if self.m > 0:
            tk.predict_from_snapshots(self.s_var, self.s_cut, self.s_left,
                                      self.s_leaf, self.tree_start, self.m,
                                      self.n_draws, codes, out)
        return out * self.scale + self.offset

    def tree_contributions(self, x_new: np.ndarray, draw: int) -> np.ndarray:
        """Per-tree additive contributions for one draw, shape (m, n_new);
        the draw's prediction equals offset + contributions.sum(axis=0)."""
        x_new = np.asarray(x_new, float)
        self._check_schema(x_new)
        codes = bin_with_grids(x_new, self.grids)
        out = np.zeros((self.m, x_new.shape[0]))
        for j in range(self.m):
            tk.tree_predict_one(self.s_var, self.s_cut, self.s_left,
                                self.s_leaf, self.tree_start[draw * self.m + j],
                                codes, out[j])
        return out * self.scale

    def tree_depths(self) -> np.ndarray:
        """Max leaf depth of every kept tree, shape (n_draws, m)."""
        out = np.zeros((self.n_draws, self.m), np.int32)
        if self.m > 0:
            tk.snapshot_depths(self.s_var, self.s_left, self.tree_start,
                               self.m, self.n_draws, out)
        return out

    def save(self, path) -> None:
        grid_ptr = np.cumsum([0] + [len(g) for g in self.grids])
        np.savez_compressed(
            path, s_var=self.s_var, s_cut=self.s_cut, s_left=self.s_left,
            s_leaf=self.s_leaf, tree_start=self.tree_start,
            sigma2=self.sigma2_internal, grid_vals=np.concatenate(
                [np.empty(0)] + [np.asarray(g, float) for g in self.grids]),
            grid_ptr=grid_ptr,
            meta=np.array([self.m, self.scale, self.offset]),
            columns=np.array(self.columns if self.columns else [], dtype=str))

    @classmethod
    def load(cls, path) -> "BartPosterior":
        z = np.load(path, allow_pickle=False)
        grid_ptr = z["grid_ptr"]
        grids = [z["grid_vals"][grid_ptr[i]:grid_ptr[i + 1]]
                 for i in range(len(grid_ptr) - 1)]
        post = cls.__new__(cls)
        post.s_var = z["s_var"]
        post.s_cut = z["s_cut"]
        post.s_left = z["s_left"]
        post.s_leaf = z["s_leaf"]
        post.tree_start = z["tree_start"]
        post.sigma2_internal = z["sigma2"]
        post.n_draws = len(post.sigma2_internal)
        post.grids = grids
        post.m = int(z["meta"][0])
        post.scale = float(z["meta"][1])
        post.offset = float(z["meta"][2])
        cols = list(z["columns"])
        post.columns = cols if cols else None
        return post


def _draw_sigma2(rng, nu, lam, n, ssr) -> float:
    shape = 0.5 * (nu + n)
    rate = 0.5 * (nu * lam + ssr)
    return rate / rng.standard_gamma(shape)


def fit(x, y, config: BartConfig, seed: int,
        columns: Optional[Sequence[str]] = None,
        leaf_prior: Optional[LeafPrior] = None,
        sigma_prior: Optional[SigmaPrior] = None) -> BartPosterior:
    """Run the backfitting sampler on (x, y) and keep ``n_draws`` states.

    Explicit ``leaf_prior`` / ``sigma_prior`` skip data-based calibration;
    both are interpreted on the (possibly standardized) training scale.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be (n, d) and y (n,) with matching n")
    n = y.shape[0]
    rng = np.random.default_rng(seed)

    if config.standardize_y:
        y_min, y_max = float(y.min()), float(y.max())
        if y_max == y_min:
            raise CalibrationError("constant outcome")
        scale = y_max - y_min
        ys = (y - y_min) / scale - 0.5
        shift = y_min + 0.5 * scale
    else:
        scale = 1.0
        ys = y.astype(float)
        shift = 0.0

    if leaf_prior is None or sigma_prior is None:
        if config.m > 0:
            cal_leaf, cal_sigma = calibrate_priors(x, ys, config)
        else:
            sig_hat = _sigma_hat(x, ys, config.sigma_hat_mode)
            if sig_hat <= 0:
                raise CalibrationError("zero noise-scale estimate")
            lam = (sig_hat ** 2
                   * stats.chi2.ppf(1.0 - config.q, config.nu) / config.nu)
            cal_leaf, cal_sigma = None, SigmaPrior(config.nu, lam)
        leaf_prior = leaf_prior or cal_leaf
        sigma_prior = sigma_prior or cal_sigma

    if config.m > 0:
        center = config.m * leaf_prior.mu_mu
        sigma_mu2 = leaf_prior.sigma_mu ** 2
    else:
        center = 0.0
        sigma_mu2 = 0.0

    target = ys - center
    weights = np.ones(n)
    grids = build_grids(x, config.n_cutpoints)
    ncuts = np.array([len(g) for g in grids], np.int32)
    codes = bin_with_grids(x, grids)
    state = ForestState(codes, ncuts, config.m, config.alpha, config.beta,
                        sigma_mu2, config.min_node_size, config.max_depth,
                        config.proposal_probs)

    if config.sigma2_fixed is not None:
        sigma2 = float(config.sigma2_fixed)
    elif ys.max() > ys.min():
        sigma2 = _sigma_hat(x, ys, config.sigma_hat_mode) ** 2
    else:
        sigma2 = sigma_prior.lam

    snaps = []
    sigma2_draws = np.empty(config.n_draws)
    kept = 0
    total_iters = config.burn_in + config.n_draws * config.thinning
    for it in range(total_iters):
        try:
            state.sweep(target, weights, sigma2, rng)
        except FloatingPointError as exc:
            raise RuntimeError(
                f"sampler aborted at iteration {it}: {exc}") from exc
        if config.sigma2_fixed is None:
            resid = target - state.total_fit
            sigma2 = _draw_sigma2(rng, sigma_prior.nu, sigma_prior.lam, n,
                                  float(resid @ resid))
        if config.debug_validate:
            state.validate()
        if it >= config.burn_in and (it - config.burn_in + 1) % config.thinning == 0:
            snaps.append(state.snapshot())
            sigma2_draws[kept] = sigma2
            kept += 1

    offset = shift + scale * center
    return BartPosterior(snaps, sigma2_draws[:kept], grids, config.m, scale,
                         offset, columns)


def predict_draws(posterior: BartPosterior, x_new) -> np.ndarray:
    """Module-level alias for :meth:`BartPosterior.predict_draws`."""
    return posterior.predict_draws(x_new)


def summarize(draws, level: float = 0.95) -> IntervalSummary:
    """Mean and equal-tailed percentile interval per target column."""
    draws = np.asarray(draws, float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0,1)")
    if draws.shape[0] < 2:
        raise ValueError("need at least 2 draws")
    tail = (1.0 - level) / 2.0 * 100.0
    lower, upper = np.percentile(draws, [tail, 100.0 - tail], axis=0)
    return IntervalSummary(draws.mean(axis=0), lower, upper)
