from .gbdt import GBDTModel, GBDTParams, fit_gbdt
from .splits import SplitConfig, SplitPlan, make_splits
from .treeshap import ensemble_shap_values

__all__ = [
    "GBDTModel", "GBDTParams", "fit_gbdt",
    "SplitConfig", "SplitPlan", "make_splits",
    "ensemble_shap_values",
]
