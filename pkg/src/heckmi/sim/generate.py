"""Clustered selection-model data generators."""

import math
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from ..heckman import BINARY, CONTINUOUS, FAMILIES
from ..numerics import draw_bvn_skew_t, draw_mvnormal

ERROR_MODELS = ("bvn", "skew_t", "explicit")
ALL_METHODS = ("cca", "heckman_1l", "mar_2l", "heckman_2l")


@dataclass(frozen=True)
class TrueParams:
    beta_o: tuple = (0.3, 1.0, 1.0)
    beta_s: tuple = (-0.8, 1.3, -0.7, 1.2)
    psi_diag: float = 0.4
    psi_erv: float = 0.2
    log_sigma_var: float = 0.05
    re_cross_factor: float = 0.4
    treatment_prob: float = 0.6
    cluster_mean_cov: tuple = ((0.2, 0.015), (0.015, 0.2))
    x2_var: float = 1.0
    x3_var: float = 0.5
    systematic_fraction: float = 0.2
    skew_alpha: tuple = (-2.0, 6.0)
    skew_df: float = 4.0
    explicit_slope: float = 0.3

    def re_cross_corr(self, rho):
        return self.re_cross_factor * rho


TRUTH = TrueParams()


@dataclass
class ScenarioConfig:
    family: str = CONTINUOUS
    rho: float = 0.6
    n_clusters: int = 10
    cluster_size: int = 1000
    error_model: str = "bvn"
    n_reps: int = 100
    seed: int = 2023
    methods: tuple = ALL_METHODS
    m: int = 5
    name: str = None
    psi_structure: str = "full"
    truth: TrueParams = field(default_factory=TrueParams)

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if self.name is None:
            self.name = f"{self.family}_rho{self.rho:g}_N{self.n_clusters}_n{self.cluster_size}_{self.error_model}"

    def validate(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie strictly inside (-1, 1), got {self.rho}")
        if self.n_clusters < 2:
            raise ValueError("n_clusters must be at least 2")
        if self.cluster_size < 1:
            raise ValueError("cluster_size must be at least 1")
        if self.error_model not in ERROR_MODELS:
            raise ValueError(f"error_model must be one of {ERROR_MODELS}")
        if self.family == BINARY and self.error_model != "bvn":
            raise ValueError("binary scenarios support only the bvn error model")
        bad = [mt for mt in self.methods if mt not in ALL_METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}")
        if self.n_reps < 1 or self.m < 2:
            raise ValueError("n_reps must be >= 1 and m >= 2")
        return self

    def to_dict(self):
        d = asdict(self)
        d["methods"] = list(self.methods)
        d.pop("truth")
        return d


def n_systematic(n_clusters, fraction=TRUTH.systematic_fraction):
    # round() guards against 0.2 * 10 landing a hair above 2 in binary
    return int(math.ceil(round(fraction * n_clusters, 9)))


def generate(config, rng):
    """Simulate one clustered dataset with sporadic and systematic missingness.

    Returns
    -------
    data : pandas.DataFrame
        Columns ``X1, X2, X3, y, r, cluster``; ``y`` is NaN where unobserved.
    truth : dict
        Latent outcomes and selection values, cluster coefficients and the
        indices of systematically missing clusters.
    """
    tp = config.truth
    N, n = config.n_clusters, config.cluster_size
    rho = config.rho
    g = rng.child(0).generator
    c = tp.re_cross_corr(rho)
    beta_o = np.asarray(tp.beta_o)
    beta_s = np.asarray(tp.beta_s)

    # random effects: (b_o_k, b_s_k) pairs for intercept, X1, X2 and an
    # independent effect on the exclusion variable
    pair_cov = tp.psi_diag * np.array([[1.0, c], [c, 1.0]])
    re_pairs = draw_mvnormal(rng.child(1), np.zeros(2), pair_cov, size=(N, 3))
    b_erv = np.sqrt(tp.psi_erv) * g.standard_normal(N)
    b_o = re_pairs[:, :, 0]
    b_s = np.column_stack([re_pairs[:, :, 1], b_erv])
    coef_o = beta_o + b_o
    coef_s = beta_s + b_s
    if config.family == BINARY:
        sigma = np.ones(N)
    else:
        sigma = np.exp(np.sqrt(tp.log_sigma_var) * g.standard_normal(N))
    mu23 = draw_mvnormal(rng.child(2), np.zeros(2), np.asarray(tp.cluster_mean_cov), size=N)

    frames, ystar_all, rstar_all = [], [], []
    for i in range(N):
        gi = rng.child(3, i).generator
        x1 = (gi.random(n) < tp.treatment_prob).astype(float)
        x2 = mu23[i, 0] + np.sqrt(tp.x2_var) * gi.standard_normal(n)
        x3 = mu23[i, 1] + np.sqrt(tp.x3_var) * gi.standard_normal(n)
        xo = np.column_stack([np.ones(n), x1, x2])
        xs = np.column_stack([xo, x3])
        s = sigma[i]
        if config.error_model == "bvn":
            cov = np.array([[s * s, rho * s], [rho * s, 1.0]])
            e = draw_mvnormal(rng.child(4, i), np.zeros(2), cov, size=n)
            ystar = xo @ coef_o[i] + e[:, 0]
            rstar = xs @ coef_s[i] + e[:, 1]
        elif config.error_model == "skew_t":
            scale = np.array([[s * s, rho * s], [rho * s, 1.0]])
            e = draw_bvn_skew_t(rng.child(4, i), scale, np.asarray(tp.skew_alpha), tp.skew_df, size=n)
            ystar = xo @ coef_o[i] + e[:, 0]
            rstar = xs @ coef_s[i] + e[:, 1]
        else:
            e_o = s * gi.standard_normal(n)
            e_s = gi.standard_normal(n)
            ystar = xo @ coef_o[i] + e_o
            rstar = tp.explicit_slope * ystar + e_s
        r = rstar > 0
        y = (ystar > 0).astype(float) if config.family == BINARY else ystar.copy()
        frames.append(pd.DataFrame({"X1": x1, "X2": x2, "X3": x3, "y": y, "r": r.astype(int), "cluster": i + 1}))
        ystar_all.append(ystar)
        rstar_all.append(rstar)
    data = pd.concat(frames, ignore_index=True)
    k = n_systematic(N, tp.systematic_fraction)
    systematic = np.sort(rng.child(5).generator.choice(N, size=k, replace=False)) + 1
    full_y = data["y"].to_numpy().copy()
    sporadic_r = data["r"].to_numpy().copy()
    in_sys = data["cluster"].isin(systematic).to_numpy()
    data.loc[in_sys, "r"] = 0
    data["y"] = np.where(data["r"].to_numpy() == 1, full_y, np.nan)
    truth = {
        "y_full": full_y,
        "ystar": np.concatenate(ystar_all),
        "rstar": np.concatenate(rstar_all),
        "selected": sporadic_r,
        "systematic_clusters": systematic.tolist(),
        "coef_o": coef_o,
        "coef_s": coef_s,
        "sigma": sigma,
    }
    return data, truth


def sporadic_missing_fraction(data, truth):
    """Share of unselected rows among clusters that are not systematically missing."""
    keep = ~data["cluster"].isin(truth["systematic_clusters"]).to_numpy()
    return float(1.0 - truth["selected"][keep].mean())
