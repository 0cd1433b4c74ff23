"""Synthetic benchmark generators with full oracle ground truth.

Two response forms (linear / nonlinear) cross two effect forms
(homogeneous / heterogeneous), plus a semi-synthetic surrogate whose
control surface is exponential and whose treated-group mean effect is
calibrated exactly to a target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .data import Dataset, GroundTruth, one_hot
from .errors import CalibrationError, DegenerateDataError

RESPONSE_FORMS = ("linear", "nonlinear")
EFFECT_FORMS = ("homogeneous", "heterogeneous")

# level effects for the unordered 3-level covariate x4
_G_LEVELS = {1: 2.0, 2: -1.0, 3: -4.0}


@dataclass(frozen=True)
class SyntheticScenario:
    response_form: str
    effect_form: str
    n: int
    noise_sd: float = 1.0
    x4_encoding: str = "one_hot"  # or "integer"

    def __post_init__(self):
        if self.response_form not in RESPONSE_FORMS:
            raise ValueError(f"response_form must be one of {RESPONSE_FORMS}")
        if self.effect_form not in EFFECT_FORMS:
            raise ValueError(f"effect_form must be one of {EFFECT_FORMS}")
        if self.n < 10:
            raise ValueError("n must be >= 10")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be > 0")

    @property
    def name(self) -> str:
        return f"{self.response_form}_{self.effect_form}"


def scenario_from_name(name: str, n: int, noise_sd: float = 1.0
                       ) -> SyntheticScenario:
    response, effect = name.split("_")
    return SyntheticScenario(response, effect, n, noise_sd)


def _g_of_x4(x4: np.ndarray) -> np.ndarray:
    x4 = np.asarray(x4)
    if not np.isin(x4, (1, 2, 3)).all():
        raise ValueError("x4 must take values in {1, 2, 3}")
    out = np.empty(x4.shape[0])
    for lev, val in _G_LEVELS.items():
        out[x4 == lev] = val
    return out


def gen_mu(scenario: SyntheticScenario, raw_x: np.ndarray) -> np.ndarray:
    """Prognostic surface on raw covariates (columns x1..x5, x4 in {1,2,3})."""
    raw_x = np.asarray(raw_x, float)
    x1, x3, x4 = raw_x[:, 0], raw_x[:, 2], raw_x[:, 3].astype(int)
    g = _g_of_x4(x4)
    if scenario.response_form == "linear":
        return 1.0 + g + x1 * x3
    return -6.0 + g + 6.0 * np.abs(x3 - 1.0)


def gen_tau(scenario: SyntheticScenario, raw_x: np.ndarray) -> np.ndarray:
    """Treatment-effect surface: constant 3, or 1 + 2*x2*x5."""
    raw_x = np.asarray(raw_x, float)
    if scenario.effect_form == "homogeneous":
        return np.full(raw_x.shape[0], 3.0)
    return 1.0 + 2.0 * raw_x[:, 1] * raw_x[:, 4]


def gen_propensity(mu: np.ndarray, x1: np.ndarray, rng) -> np.ndarray:
    """Confounded assignment probabilities, strictly inside (0.05, 0.95)."""
    mu = np.asarray(mu, float)
    s = float(np.std(mu))
    if s == 0.0:
        raise DegenerateDataError(
            "prognostic surface is constant; propensity scale undefined")
    u = rng.random(mu.shape[0])
    return 0.8 * ndtr(3.0 * mu / s - 0.5 * np.asarray(x1, float)) + 0.05 + u / 10.0


def gen_synthetic(scenario: SyntheticScenario, seed: int
                  ) -> tuple[Dataset, GroundTruth]:
    """Draw covariates, assignment and outcome; deterministic given seed."""
    rng = np.random.default_rng(seed)
    n = scenario.n
    x123 = rng.normal(size=(n, 3))
    x4 = rng.integers(1, 4, size=n)
    x5 = rng.integers(0, 2, size=n).astype(float)
    raw_x = np.column_stack([x123, x4.astype(float), x5])

    mu = gen_mu(scenario, raw_x)
    tau = gen_tau(scenario, raw_x)
    pi = gen_propensity(mu, raw_x[:, 0], rng)
    z = (rng.random(n) < pi).astype(float)
    if z.sum() in (0, n):
        z = (rng.random(n) < pi).astype(float)
        if z.sum() in (0, n):
            raise DegenerateDataError(
                "treatment draw degenerate twice; increase n")
    y = mu + tau * z + rng.normal(scale=scenario.noise_sd, size=n)

    if scenario.x4_encoding == "one_hot":
        x = np.column_stack([x123, one_hot(x4, (1, 2, 3)), x5])
        cols = ("x1", "x2", "x3", "x4_1", "x4_2", "x4_3", "x5")
    else:
        x = raw_x
        cols = ("x1", "x2", "x3", "x4", "x5")
    return (Dataset(x, z, y, columns=cols),
            GroundTruth(mu, mu + tau, tau, pi))


@dataclass(frozen=True)
class IhdpSurrogateParams:
    """Drawn response-surface parameters of one surrogate realization."""

    beta: np.ndarray
    offset_A: float
    omega: float
    target_att: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, float))
        if not np.isin(self.beta, (0.0, 0.1, 0.2, 0.3, 0.4)).all():
            raise ValueError("beta entries must lie in {0, 0.1, 0.2, 0.3, 0.4}")
        if not np.isfinite(self.omega):
            raise ValueError("omega must be finite")


BETA_VALUES = np.array([0.0, 0.1, 0.2, 0.3, 0.4])
BETA_PROBS = np.array([0.6, 0.1, 0.1, 0.1, 0.1])


def draw_beta(d: int, rng) -> np.ndarray:
    return rng.choice(BETA_VALUES, p=BETA_PROBS, size=d)


def calibrate_omega(x: np.ndarray, beta: np.ndarray, offset_A: float,
                    treated_mask: np.ndarray, target_att: float = 4.0) -> float:
    """Shift the treated surface so the mean effect over treated units hits
    target_att exactly."""
    treated_mask = np.asarray(treated_mask, bool)
    if not treated_mask.any():
        raise DegenerateDataError("no treated units to calibrate against")
    lin = x @ beta
    arg = (x + offset_A) @ beta
    if arg.max() > 700.0:
        raise CalibrationError(
            "exp overflow in the control surface; standardize the covariates")
    exp_surface = np.exp(arg)
    return float(np.mean(lin[treated_mask] - exp_surface[treated_mask])
                 - target_att)


def gen_ihdp_surrogate(x: np.ndarray, z: np.ndarray, seed: int,
                       offset_A: float = 0.5, target_att: float = 4.0,
                       noise_sd: float = 1.0
                       ) -> tuple[GroundTruth, np.ndarray, IhdpSurrogateParams]:
    """Draw one response surface over fixed covariates and treatment:
    exponential control mean, linear treated mean, exact mean-effect-on-treated
    calibration. Returns (ground truth, simulated outcome, drawn parameters).
    """
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    rng = np.random.default_rng(seed)
    beta = draw_beta(x.shape[1], rng)
    omega = calibrate_omega(x, beta, offset_A, z == 1, target_att)
    mu0 = np.exp((x + offset_A) @ beta)
    mu1 = x @ beta - omega
    tau = mu1 - mu0
    y = np.where(z == 1, mu1, mu0) + rng.normal(scale=noise_sd, size=x.shape[0])
    params = IhdpSurrogateParams(beta, offset_A, omega, target_att)
    return GroundTruth(mu0, mu1, tau), y, params


def gen_surrogate_covariates(seed: int, n: int = 747, d: int = 25,
                             n_treated: int = 139
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Fixed covariate matrix (6 standardized continuous + binary rest) and a
    confounded treatment with exactly n_treated treated units."""
    rng = np.random.default_rng(seed)
    n_cont = min(6, d)
    x_cont = rng.normal(size=(n, n_cont))
    probs = rng.uniform(0.1, 0.7, size=d - n_cont)
    x_bin = (rng.random((n, d - n_cont)) < probs).astype(float)
    x = np.column_stack([x_cont, x_bin])
    # targeted-selection flavour: treat the units scoring highest
    score = (0.8 * x[:, 0] - 0.5 * x[:, 1] + 0.4 * x[:, min(6, d - 1)]
             + rng.normal(scale=1.0, size=n))
    z = np.zeros(n)
    z[np.argsort(score)[-n_treated:]] = 1.0
    return x, z


def gen_surrogate_realizations(n_realizations: int, seed: int, n: int = 747,
                               d: int = 25, n_treated: int = 139,
                               offset_A: float = 0.5, target_att: float = 4.0,
                               noise_sd: float = 1.0,
                               ) -> list[tuple[Dataset, GroundTruth]]:
    """Shared covariates and treatment, one fresh response surface per
    realization (the semi-synthetic benchmark convention)."""
    x, z = gen_surrogate_covariates(seed, n, d, n_treated)
    cols = tuple(f"x{i + 1}" for i in range(d))
    out = []
    for r in range(n_realizations):
        sub = int(np.random.SeedSequence((seed, r)).generate_state(1)[0])
        gt, y, _ = gen_ihdp_surrogate(x, z, sub, offset_A, target_att, noise_sd)
        out.append((Dataset(x, z, y, columns=cols), gt))
    return out
