"""Critical shortlisting with LLM-suggested factors and provocations."""

from .dataset import Dataset, load_csv, profile_column, sample_rows, fingerprint
from .factors import (
    Factor,
    FactorAnalysis,
    GlobalShortlist,
    Importance,
    analyze_factor,
    compute_global_shortlist,
    importance_weight,
)
from .filter_dsl import eval_filter, parse_filter, print_filter, validate_columns
from .gateway import ProviderConfig
from .scenario import Scenario, ScenarioStore
from .service import ServiceConfig, create_app

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Factor",
    "FactorAnalysis",
    "GlobalShortlist",
    "Importance",
    "ProviderConfig",
    "Scenario",
    "ScenarioStore",
    "ServiceConfig",
    "analyze_factor",
    "compute_global_shortlist",
    "create_app",
    "eval_filter",
    "fingerprint",
    "importance_weight",
    "load_csv",
    "parse_filter",
    "print_filter",
    "profile_column",
    "sample_rows",
    "validate_columns",
]
