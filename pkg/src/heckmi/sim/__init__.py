from .analysis import ReplicateResult, analyze_two_stage, rubin_pool
from .generate import ALL_METHODS, ERROR_MODELS, TRUTH, ScenarioConfig, TrueParams, generate
from .metrics import MetricsReport, estimand_measures, summarize
from .runner import run_method, run_replicate, run_scenario
