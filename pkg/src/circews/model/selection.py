"""Variable selection over feature-manifest groups.

Two strategies: greedy attribution ranking (train, attribute on a
class-balanced validation subsample, pop the variable owning the top
feature, retrain without it) and greedy forward selection by validation
AUPRC.  Both operate on whole variables — every feature column derived
from a variable enters or leaves together.
"""

from __future__ import annotations

import numpy as np

from ..alarmeval.metrics import average_precision
from ..features import FeatureManifest
from .gbdt import GBDTParams, fit_gbdt
from .treeshap import ensemble_shap_values


def balanced_rows(y: np.ndarray, cap: int, seed: int) -> np.ndarray:
    """Equal numbers of positive and negative rows, at most cap of each."""
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    take = min(pos.size, neg.size, cap)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 6001]))
    pick_pos = np.sort(rng.choice(pos, size=take, replace=False)) \
        if pos.size > take else pos
    pick_neg = np.sort(rng.choice(neg, size=take, replace=False)) \
        if neg.size > take else neg
    return np.sort(np.concatenate([pick_pos, pick_neg]))


def shap_column_importance(model, x: np.ndarray) -> np.ndarray:
    phi, _ = ensemble_shap_values(model, x)
    return np.mean(np.abs(phi), axis=0)


def shap_feature_ranking(model, x_val: np.ndarray, y_val: np.ndarray,
                         seed: int, cap: int = 500) -> np.ndarray:
    """Columns ordered by decreasing mean |attribution| on a balanced
    validation subsample; ties keep the lower column index."""
    rows = balanced_rows(y_val, cap, seed)
    imp = shap_column_importance(model, x_val[rows])
    return np.lexsort((np.arange(imp.size), -imp))


def shap_greedy_variables(x_train: np.ndarray, y_train: np.ndarray,
                          x_val: np.ndarray, y_val: np.ndarray,
                          manifest: FeatureManifest, params: GBDTParams,
                          seed: int, max_vars: int | None = None,
                          cap: int = 500) -> tuple[list[str], list[dict]]:
    """Variables in the order their features top the attribution ranking."""
    var_of = [c.variable for c in manifest.columns]
    remaining = np.arange(len(var_of))
    order: list[str] = []
    history: list[dict] = []
    limit = max_vars if max_vars is not None else len(set(var_of))
    rows = balanced_rows(y_val, cap, seed)
    while remaining.size and len(order) < limit:
        names = [manifest.columns[i].name for i in remaining]
        model, _ = fit_gbdt(x_train[:, remaining], y_train,
                            x_val[:, remaining], y_val, names,
                            manifest.content_hash(), params)
        imp = shap_column_importance(model, x_val[np.ix_(rows, remaining)])
        top_local = int(np.argmax(imp))
        var = var_of[remaining[top_local]]
        order.append(var)
        history.append({"variable": var,
                        "top_feature": names[top_local],
                        "importance": float(imp[top_local])})
        keep = np.asarray([var_of[i] != var for i in remaining])
        remaining = remaining[keep]
    return order, history


def forward_variables(x_train: np.ndarray, y_train: np.ndarray,
                      x_val: np.ndarray, y_val: np.ndarray,
                      manifest: FeatureManifest, params: GBDTParams,
                      max_vars: int | None = None,
                      min_gain: float = 1e-9) -> tuple[list[str], list[dict]]:
    """Add the variable that lifts validation AUPRC the most, until none does."""
    candidates = manifest.variables()
    selected: list[str] = []
    history: list[dict] = []
    current = -np.inf
    limit = max_vars if max_vars is not None else len(candidates)
    while len(selected) < limit:
        best_var, best_ap = None, current + min_gain if selected else -np.inf
        for var in candidates:
            if var in selected:
                continue
            cols = manifest.columns_for(set(selected) | {var})
            names = [manifest.columns[i].name for i in cols]
            model, _ = fit_gbdt(x_train[:, cols], y_train, x_val[:, cols],
                                y_val, names, manifest.content_hash(), params)
            ap = average_precision(y_val, model.predict_margin(x_val[:, cols]))
            if ap > best_ap:
                best_var, best_ap = var, ap
        if best_var is None:
            break
        selected.append(best_var)
        current = best_ap
        history.append({"variable": best_var, "val_auprc": best_ap})
    return selected, history
