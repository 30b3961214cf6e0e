"""Replicate loop for simulation scenarios."""

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..errors import HeckmiError
from ..mice import ImputationSpec, impute_univariate
from ..numerics import RngStream
from .analysis import ReplicateResult, analyze_two_stage, rubin_pool
from .generate import ALL_METHODS, generate, sporadic_missing_fraction
from .metrics import MetricsReport, summarize

logger = logging.getLogger(__name__)

OUTCOME_PREDICTORS = ["X1", "X2"]
SELECTION_PREDICTORS = ["X1", "X2", "X3"]


def method_spec(method, family):
    return ImputationSpec(
        target="y", family=family, outcome_predictors=OUTCOME_PREDICTORS,
        selection_predictors=SELECTION_PREDICTORS, cluster_column="cluster", method=method,
    )


def run_method(method, data, family, m, rng, psi_structure="full"):
    """Apply one method to one incomplete dataset and analyse the result."""
    start = time.perf_counter()
    try:
        if method == "cca":
            res = analyze_two_stage(data, family, method=method, psi_structure=psi_structure)
        else:
            mi = impute_univariate(data, method_spec(method, family), m, rng, psi_structure=psi_structure)
            parts = [analyze_two_stage(t, family, method=method, psi_structure=psi_structure) for t in mi.completed]
            if not all(p.converged for p in parts):
                raise HeckmiError("analysis of a completed dataset failed")
            res = rubin_pool(parts, method=method)
    except (HeckmiError, np.linalg.LinAlgError, ValueError) as exc:
        logger.warning("method %s failed: %s", method, exc)
        res = ReplicateResult.failed(method, reason=str(exc))
    res.seconds = time.perf_counter() - start
    return res


def run_replicate(config, rep):
    """Generate replicate ``rep`` and run every configured method on it."""
    root = RngStream(config.seed, (rep,))
    data, truth = generate(config, root.child(0))
    out = {"rep": rep, "missing_fraction": sporadic_missing_fraction(data, truth), "results": {}}
    for method in config.methods:
        idx = ALL_METHODS.index(method)
        out["results"][method] = run_method(
            method, data, config.family, config.m, root.child(1, idx), config.psi_structure
        )
    return out


def _run_chunk(args):
    config, reps = args
    return [run_replicate(config, r) for r in reps]


def run_replicates(config, workers=1):
    reps = list(range(config.n_reps))
    if workers <= 1 or len(reps) <= 1:
        outs = [run_replicate(config, r) for r in reps]
    else:
        n_chunks = min(len(reps), workers * 4)
        chunks = [reps[i::n_chunks] for i in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = [o for chunk in pool.map(_run_chunk, [(config, c) for c in chunks]) for o in chunk]
    return sorted(outs, key=lambda o: o["rep"])


def run_scenario(config, workers=1):
    """Simulate ``config.n_reps`` replicates and summarise performance.

    Failed replicates are kept and count against the run percentage;
    metrics are computed over the replicates where the method produced
    output. Results are reduced in replicate order, so the report does
    not depend on ``workers``.
    """
    config.validate()
    outs = run_replicates(config, workers=workers)
    tp = config.truth
    by_method = {m: [o["results"][m] for o in outs] for m in config.methods}
    rows = summarize(
        config.name, by_method, np.asarray(tp.beta_o), np.full(3, math.sqrt(tp.psi_diag)), config.n_reps
    )
    report = MetricsReport(rows=rows)
    info = config.to_dict()
    info["mean_sporadic_missing_fraction"] = float(np.mean([o["missing_fraction"] for o in outs]))
    report.scenarios[config.name] = info
    report.timing[config.name] = {
        m: float(np.mean([r.seconds for r in by_method[m]])) for m in config.methods
    }
    report.replicates = outs
    return report


def default_workers():
    return os.cpu_count() or 1
