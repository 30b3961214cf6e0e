"""Multiple-imputation driver.

``impute_univariate`` fills one incomplete column; ``impute_chained``
cycles several column specs in the usual chained-equations fashion.
Stage-1 cluster fits are computed once per (chain, iteration) and reused
for every parameter draw made from them.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .draw import draw_cluster, draw_marginal, impute_binary, impute_continuous, DrawnClusterParams
from .errors import ImputationError, NonEstimable, PoolingError, SpecError
from .heckman import (
    BINARY,
    CONTINUOUS,
    FAMILIES,
    ClusterData,
    HeckmanParams,
    ParamLayout,
    fit_cluster,
    fit_cluster_mar,
    min_observed,
)
from .meta import pool_heckman
from .numerics import draw_mvnormal

logger = logging.getLogger(__name__)

METHODS = ("heckman_2l", "mar_2l", "heckman_1l")


@dataclass
class ImputationSpec:
    target: str
    family: str
    outcome_predictors: list
    selection_predictors: list = field(default_factory=list)
    cluster_column: str = "cluster"
    method: str = "heckman_2l"
    name: str = None

    def __post_init__(self):
        self.outcome_predictors = list(self.outcome_predictors)
        self.selection_predictors = list(self.selection_predictors)
        if self.name is None:
            self.name = self.target

    @property
    def uses_selection(self):
        return self.method != "mar_2l"

    @property
    def exclusion_variables(self):
        return [c for c in self.selection_predictors if c not in self.outcome_predictors]

    def validate(self, columns=None):
        """Raise :class:`SpecError` naming this spec when it is unusable."""
        where = f"spec {self.name!r}"
        if self.family not in FAMILIES:
            raise SpecError(f"{where}: family must be one of {FAMILIES}")
        if self.method not in METHODS:
            raise SpecError(f"{where}: method must be one of {METHODS}")
        if self.target in self.outcome_predictors or self.target in self.selection_predictors:
            raise SpecError(f"{where}: target {self.target!r} cannot predict itself")
        if self.uses_selection and not self.exclusion_variables:
            raise SpecError(
                f"{where}: selection predictors need at least one exclusion restriction "
                "variable that is not an outcome predictor"
            )
        if columns is not None:
            needed = [self.target, self.cluster_column, *self.outcome_predictors, *self.selection_predictors]
            missing = [c for c in needed if c not in columns]
            if missing:
                raise SpecError(f"{where}: columns not found in data: {missing}")
        return self


@dataclass
class MIDataset:
    m: int
    completed: list
    provenance: dict


def _sorted_clusters(values):
    uniq = pd.unique(values)
    try:
        return sorted(uniq)
    except TypeError:
        return sorted(uniq, key=str)


def normalize_binary(series):
    """Map a two-level column to {0, 1}; returns (values, mapping)."""
    obs = series.dropna()
    levels = sorted(pd.unique(obs), key=lambda v: (str(type(v)), v))
    if len(levels) > 2:
        raise SpecError(f"binary column {series.name!r} has more than two levels: {levels}")
    if set(levels) <= {0, 1}:
        return series.astype(float), {0: 0, 1: 1}
    mapping = {lvl: i for i, lvl in enumerate(levels)}
    return series.map(mapping).astype(float), {str(k): v for k, v in mapping.items()}


def _design(frame, columns):
    cols = [np.ones(len(frame))] + [frame[c].to_numpy(dtype=float) for c in columns]
    return np.column_stack(cols)


@dataclass
class _Cluster:
    cid: object
    index: int
    rows: np.ndarray
    missing: np.ndarray
    data: ClusterData


def classify_clusters(data, spec, missing=None):
    """Split clusters into ``estimable`` and ``fallback``.

    A cluster falls back when the target is entirely missing there or when
    it has fewer observed rows than the fitting rule requires.
    """
    spec.validate(data.columns)
    if missing is None:
        missing = data[spec.target].isna().to_numpy()
    layout = _layout(spec)
    labels = data[spec.cluster_column].to_numpy()
    out = {"estimable": [], "fallback": [], "reasons": {}}
    for cid in _sorted_clusters(labels):
        sel = labels == cid
        n_obs = int((~missing[sel]).sum())
        if n_obs == 0:
            out["fallback"].append(cid)
            out["reasons"][cid] = "systematically missing"
        elif n_obs < min_observed(layout):
            out["fallback"].append(cid)
            out["reasons"][cid] = f"{n_obs} observed rows < {min_observed(layout)}"
        else:
            out["estimable"].append(cid)
    if not out["estimable"]:
        raise ImputationError(f"spec {spec.name!r}: no cluster has enough observed data", out)
    return out


def _layout(spec):
    p = len(spec.outcome_predictors) + 1
    q = len(spec.selection_predictors) + 1
    return ParamLayout(p, q if spec.uses_selection else 0, spec.family, selection=spec.uses_selection)


def _check_predictors(data, spec):
    cols = set(spec.outcome_predictors) | set(spec.selection_predictors)
    bad = [c for c in sorted(cols) if data[c].isna().any()]
    if bad:
        raise SpecError(f"spec {spec.name!r}: predictor columns contain missing values: {bad}")


class FittedImputer:
    """Stage-1 fits and pooled model for one spec on one dataset state."""

    def __init__(self, data, spec, missing=None, psi_structure="full"):
        spec.validate(data.columns)
        _check_predictors(data, spec)
        self.spec = spec
        if missing is None:
            missing = data[spec.target].isna().to_numpy()
        self.missing = np.asarray(missing, dtype=bool)
        y = data[spec.target].to_numpy(dtype=float).copy()
        y[self.missing] = np.nan
        if spec.family == BINARY:
            obs = y[~self.missing]
            if not np.all(np.isin(obs, (0.0, 1.0))):
                raise SpecError(f"spec {spec.name!r}: binary target must be coded 0/1")
        xo = _design(data, spec.outcome_predictors)
        xs = _design(data, spec.selection_predictors)
        labels = data[spec.cluster_column].to_numpy()
        self.clusters = []
        for i, cid in enumerate(_sorted_clusters(labels)):
            rows = np.flatnonzero(labels == cid)
            cd = ClusterData(xo[rows], xs[rows], y[rows], ~self.missing[rows], cluster_id=cid)
            self.clusters.append(_Cluster(cid, i, rows, self.missing[rows], cd))
        self.report = {"spec": spec.name, "method": spec.method, "clusters": []}
        if spec.method == "heckman_1l":
            self._fit_single_level(xo, xs, y)
        else:
            self._fit_two_level(psi_structure)

    def _fit_two_level(self, psi_structure):
        spec = self.spec
        layout = _layout(spec)
        self.fits = {}
        for c in self.clusters:
            entry = {"cluster": _jsonable(c.cid), "n_rows": int(c.data.n), "n_observed": c.data.n_observed}
            fit = None
            if c.data.n_observed == 0:
                entry.update(status="fallback", reason="systematically missing")
            elif c.data.n_observed < min_observed(layout):
                entry.update(status="fallback", reason=f"fewer than {min_observed(layout)} observed rows")
            else:
                try:
                    if spec.uses_selection:
                        fit = fit_cluster(c.data, spec.family)
                    else:
                        fit = fit_cluster_mar(c.data, spec.family)
                    entry.update(status="estimable")
                    if layout.has_rho:
                        est, lo, hi = fit.rho_interval()
                        entry.update(rho_hat=est, rho_ci=[lo, hi])
                except NonEstimable as exc:
                    entry.update(status="fallback", reason=f"not estimable: {exc}")
            self.fits[c.cid] = fit
            self.report["clusters"].append(entry)
        try:
            self.model = pool_heckman(list(self.fits.values()), psi_structure=psi_structure)
        except PoolingError as exc:
            raise ImputationError(f"spec {spec.name!r}: {exc}", self.report) from exc
        self.report["pooled"] = {
            name: {"theta_hat": b.theta_hat.tolist(), "psi_hat": b.psi_hat.tolist(), "method": b.method}
            for name, b in self.model.blocks.items()
        }

    def _fit_single_level(self, xo, xs, y):
        spec = self.spec
        data = ClusterData(xo, xs, y, ~self.missing, cluster_id="all")
        try:
            self.pooled_fit = fit_cluster(data, spec.family)
        except NonEstimable as exc:
            raise ImputationError(f"spec {spec.name!r}: single-level fit failed: {exc}", self.report) from exc
        est, lo, hi = self.pooled_fit.rho_interval()
        self.report["clusters"].append(
            {"cluster": "all", "status": "estimable", "n_rows": int(data.n),
             "n_observed": data.n_observed, "rho_hat": est, "rho_ci": [lo, hi]}
        )

    def draw(self, rng, force_rho=None):
        """Imputed target values for every missing row, as a full-length array.

        ``force_rho`` holds the error correlation of every drawn parameter
        set at a fixed value (a sensitivity analysis); all other draws use
        the same streams as without it.
        """
        spec = self.spec
        out = np.full(self.missing.shape[0], np.nan)
        diag = {}
        if spec.method == "heckman_1l":
            fit = self.pooled_fit
            theta = draw_mvnormal(rng.child(0), fit.theta, fit.vcov)
            hp = HeckmanParams.from_vector(theta, fit.layout)
            shared = DrawnClusterParams("all", hp.beta_o, hp.beta_s, hp.sigma, hp.rho)
        else:
            marginal = draw_marginal(self.model, rng.child(0))
            diag["projection"] = marginal.projection
        for c in self.clusters:
            if not c.missing.any():
                continue
            if spec.method == "heckman_1l":
                params = shared
            else:
                params = draw_cluster(self.fits[c.cid], marginal, rng.child(1, c.index), cluster_id=c.cid)
            if force_rho is not None:
                params = replace(params, rho=float(force_rho))
            xo = c.data.x_outcome[c.missing]
            xs = c.data.x_selection[c.missing]
            stream = rng.child(2, c.index)
            if spec.family == CONTINUOUS:
                vals = impute_continuous(xo, xs, params, stream)
            else:
                vals = impute_binary(xo, xs, params, stream)
            out[c.rows[c.missing]] = vals
        return out, diag


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def _prepare(data, spec):
    spec.validate(data.columns)
    mapping = None
    if spec.family == BINARY:
        col, mapping = normalize_binary(data[spec.target])
        if mapping != {0: 0, 1: 1}:
            data = data.copy()
            data[spec.target] = col
    return data, mapping


def impute_univariate(data, spec, m, rng, psi_structure="full"):
    """Multiply impute one incomplete column.

    Parameters
    ----------
    data : pandas.DataFrame
        Input table; missing target cells are NaN.
    spec : ImputationSpec
    m : int
        Number of completed datasets.
    rng : RngStream
        Imputation ``k`` (1-based) uses ``rng.child(k)`` only, so outputs
        permute with the stream indices.
    psi_structure : {"full", "diagonal"}

    Returns
    -------
    MIDataset
    """
    data, mapping = _prepare(data, spec)
    if m < 1:
        raise ValueError("m must be at least 1")
    imputer = FittedImputer(data, spec, psi_structure=psi_structure)
    completed, draws = [], []
    target_missing = imputer.missing
    for k in range(1, m + 1):
        vals, diag = imputer.draw(rng.child(k))
        table = data.copy()
        if target_missing.any():
            col = table[spec.target].to_numpy(dtype=float).copy()
            col[target_missing] = vals[target_missing]
            table[spec.target] = _cast_target(col, spec)
        completed.append(table)
        draws.append(diag)
    provenance = {
        "seed": rng.master_seed,
        "stream_path": list(rng.path),
        "specs": [_spec_dict(spec)],
        "estimability": {spec.name: imputer.report},
        "draw_diagnostics": {spec.name: draws},
        "binary_mappings": {spec.name: mapping} if mapping else {},
    }
    return MIDataset(m=m, completed=completed, provenance=provenance)


def _cast_target(col, spec):
    if spec.family == BINARY and not np.isnan(col).any():
        return col.astype(np.int64)
    return col


def _spec_dict(spec):
    return {
        "name": spec.name, "target": spec.target, "family": spec.family, "method": spec.method,
        "outcome_predictors": spec.outcome_predictors,
        "selection_predictors": spec.selection_predictors,
        "cluster_column": spec.cluster_column,
    }


def _initial_fill(state, spec, missing, rng):
    """Fill missing cells by sampling observed values of the same cluster."""
    col = state[spec.target].to_numpy(dtype=float).copy()
    labels = state[spec.cluster_column].to_numpy()
    pool_all = col[~missing]
    if pool_all.size == 0:
        raise ImputationError(f"spec {spec.name!r}: target column has no observed values")
    for i, cid in enumerate(_sorted_clusters(labels)):
        sel = labels == cid
        need = sel & missing
        if not need.any():
            continue
        obs = col[sel & ~missing]
        source = obs if obs.size else pool_all
        col[need] = rng.child(i).generator.choice(source, size=int(need.sum()), replace=True)
    return col


def impute_chained(data, specs, m, iterations=10, rng=None, psi_structure="full"):
    """Chained-equations imputation of several incomplete columns.

    Each of the ``m`` chains starts from per-cluster draws of observed
    values and then visits the specs in declared order ``iterations``
    times, refitting each model on the current state of its predictors.
    """
    if rng is None:
        raise ValueError("an RngStream is required")
    specs = list(specs)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise SpecError("spec names must be unique")
    targets = {s.target for s in specs}
    mappings = {}
    for s in specs:
        data, mp = _prepare(data, s)
        if mp:
            mappings[s.name] = mp
    for s in specs:
        cols = set(s.outcome_predictors) | set(s.selection_predictors)
        bad = [c for c in sorted(cols - targets) if data[c].isna().any()]
        if bad:
            raise SpecError(f"spec {s.name!r}: predictor columns contain missing values: {bad}")
    masks = {s.name: data[s.target].isna().to_numpy() for s in specs}
    completed, chain_means, reports = [], [], []
    for k in range(1, m + 1):
        chain = rng.child(k)
        state = data.copy()
        for j, s in enumerate(specs):
            state[s.target] = _initial_fill(state, s, masks[s.name], chain.child(0, j))
        means = {s.name: [] for s in specs}
        report = {}
        for it in range(1, iterations + 1):
            for j, s in enumerate(specs):
                try:
                    imputer = FittedImputer(state, s, missing=masks[s.name], psi_structure=psi_structure)
                except (ImputationError, SpecError) as exc:
                    raise ImputationError(
                        f"chain {k}, iteration {it}, spec {s.name!r}: {exc}",
                        getattr(exc, "report", {}),
                    ) from exc
                vals, _ = imputer.draw(chain.child(it, j))
                col = state[s.target].to_numpy(dtype=float).copy()
                col[masks[s.name]] = vals[masks[s.name]]
                state[s.target] = col
                means[s.name].append(float(col[masks[s.name]].mean()) if masks[s.name].any() else float("nan"))
                report[s.name] = imputer.report
        for s in specs:
            state[s.target] = _cast_target(state[s.target].to_numpy(dtype=float), s)
        completed.append(state)
        chain_means.append(means)
        reports.append(report)
    provenance = {
        "seed": rng.master_seed,
        "stream_path": list(rng.path),
        "specs": [_spec_dict(s) for s in specs],
        "iterations": iterations,
        "chain_means": chain_means,
        "estimability": reports[-1] if reports else {},
        "binary_mappings": mappings,
    }
    return MIDataset(m=m, completed=completed, provenance=provenance)
