"""Tree-ensemble causal effect estimation and benchmarking."""

__version__ = "0.1.0"

from .bart import (BartConfig, BartPosterior, LeafPrior, SigmaPrior,
                   calibrate_priors, fit, predict_draws, split_prior_prob,
                   summarize)
from .bcf import BcfConfig, bcf_fit
from .data import (CategoricalEncoding, Dataset, GroundTruth,
                   load_dataset, load_ihdp_realizations, save_dataset,
                   validate)
from .dgp import (IhdpSurrogateParams, SyntheticScenario, calibrate_omega,
                  gen_ihdp_surrogate, gen_mu, gen_propensity, gen_synthetic,
                  gen_tau)
from .folds import FoldAssignment, make_folds
from .kfold import (AblationConfig, DmlAteResult, ate_dml, cate_stage1,
                    cate_stage2, kfold_causal_bart)
from .learners import (bart_f0_f1, dr_learner, dr_pseudo_outcomes, ps_bart,
                       s_learner, x_learner)
from .metrics import (MetricsRow, aggregate, percentile_report,
                      score_replication)
from .propensity import (PropensityConfig, PropensityEstimate,
                         estimate_propensity)
from .reports import EffectReport, IntervalEstimate
from .runner import ExperimentConfig, ablate, run
