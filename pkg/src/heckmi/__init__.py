"""Multilevel multiple imputation for outcomes missing not at random.

Cluster-level selection models are fitted by maximum likelihood, pooled
by random-effects meta-analysis and used to draw imputations.
"""

from .errors import HeckmiError, ImputationError, NonEstimable, PoolingError, SpecError
from .heckman import ClusterData, ClusterFit, HeckmanParams, fit_cluster, loglik_binary, loglik_continuous
from .meta import MetaFit, pool_heckman, reml_multivariate, reml_univariate
from .draw import draw_cluster, draw_marginal, impute_binary, impute_continuous
from .mice import ImputationSpec, MIDataset, impute_chained, impute_univariate
from .numerics import RngStream

__version__ = "0.1.0"
