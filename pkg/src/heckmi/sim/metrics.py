"""Performance measures over simulation replicates."""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import COEF_NAMES, SD_NAMES

COEF_MEASURES = ("bias", "empse", "modse", "rmse", "coverage", "width")
SD_MEASURES = ("bias", "empse", "rmse")
CSV_FIELDS = ("scenario", "method", "estimand", "measure", "value", "mcse")


def _mean_mcse(x):
    n = x.size
    return float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")


def estimand_measures(est, truth, ses=None, lo=None, hi=None):
    """Measures for one estimand over the converged replicates.

    Returns ``{measure: (value, mcse)}``.
    """
    est = np.asarray(est, dtype=float)
    n = est.size
    out = {}
    if n == 0:
        return {m: (float("nan"), float("nan")) for m in (COEF_MEASURES if ses is not None else SD_MEASURES)}
    err = est - truth
    empse = float(est.std(ddof=1)) if n > 1 else float("nan")
    out["bias"] = (float(err.mean()), empse / math.sqrt(n) if n > 1 else float("nan"))
    out["empse"] = (empse, empse / math.sqrt(2.0 * (n - 1)) if n > 1 else float("nan"))
    sq = err * err
    mse = float(sq.mean())
    rmse = math.sqrt(mse)
    if n > 1 and rmse > 0:
        mse_mcse = math.sqrt(float(((sq - mse) ** 2).sum()) / (n * (n - 1)))
        rmse_mcse = mse_mcse / (2.0 * rmse)
    else:
        rmse_mcse = float("nan") if n <= 1 else 0.0
    out["rmse"] = (rmse, rmse_mcse)
    if ses is not None:
        ses = np.asarray(ses, dtype=float)
        v = ses * ses
        modse = math.sqrt(float(v.mean()))
        modse_mcse = (
            math.sqrt(float(v.var(ddof=1)) / (4.0 * n * modse * modse)) if n > 1 and modse > 0 else float("nan")
        )
        out["modse"] = (modse, modse_mcse)
        cover = (np.asarray(lo) <= truth) & (truth <= np.asarray(hi))
        c = float(cover.mean())
        out["coverage"] = (c, math.sqrt(c * (1.0 - c) / n))
        width = np.asarray(hi) - np.asarray(lo)
        out["width"] = (float(width.mean()), _mean_mcse(width))
    return {k: out[k] for k in (COEF_MEASURES if ses is not None else SD_MEASURES)}


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    scenarios: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    replicates: list = field(default_factory=list, repr=False)

    def value(self, scenario, method, estimand, measure):
        for r in self.rows:
            if (r["scenario"], r["method"], r["estimand"], r["measure"]) == (scenario, method, estimand, measure):
                return r["value"]
        raise KeyError((scenario, method, estimand, measure))

    def merge(self, other):
        self.rows.extend(other.rows)
        self.scenarios.update(other.scenarios)
        self.timing.update(other.timing)
        return self

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([r["scenario"], r["method"], r["estimand"], r["measure"], _fmt(r["value"]), _fmt(r["mcse"])])
        return buf.getvalue()

    def to_json(self):
        return json.dumps(
            {"scenarios": self.scenarios, "metrics": self.rows, "timing": self.timing},
            indent=2, default=_json_default, allow_nan=True,
        )


def _fmt(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    return repr(float(v))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def summarize(scenario, results_by_method, truth_coef, truth_sd, n_reps):
    """Build metric rows for one scenario.

    ``results_by_method`` maps method name to the list of
    :class:`ReplicateResult` ordered by replicate index.
    """
    rows = []
    for method, results in results_by_method.items():
        ok = [r for r in results if r.converged and np.all(np.isfinite(r.estimates))]
        run = len(ok) / n_reps if n_reps else float("nan")
        rows.append(dict(scenario=scenario, method=method, estimand="all", measure="run_pct",
                         value=100.0 * run, mcse=100.0 * math.sqrt(run * (1 - run) / n_reps)))
        if ok:
            est = np.array([r.estimates for r in ok])
            ses = np.array([r.ses for r in ok])
            lo = np.array([r.ci_low for r in ok])
            hi = np.array([r.ci_high for r in ok])
            sds = np.array([r.re_sd for r in ok])
        for j, name in enumerate(COEF_NAMES):
            if ok:
                ms = estimand_measures(est[:, j], truth_coef[j], ses[:, j], lo[:, j], hi[:, j])
            else:
                ms = {m: (float("nan"), float("nan")) for m in COEF_MEASURES}
            for measure, (v, e) in ms.items():
                rows.append(dict(scenario=scenario, method=method, estimand=name, measure=measure, value=v, mcse=e))
        for j, name in enumerate(SD_NAMES):
            ms = estimand_measures(sds[:, j], truth_sd[j]) if ok else {m: (float("nan"),) * 2 for m in SD_MEASURES}
            for measure, (v, e) in ms.items():
                rows.append(dict(scenario=scenario, method=method, estimand=name, measure=measure, value=v, mcse=e))
    return rows
