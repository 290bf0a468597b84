"""Alternative scoring models and shared model persistence.

The logistic baseline standardizes numeric columns, one-hot encodes the
categorical ones and runs an L2-penalized SGD fit over a small penalty
grid, picking the penalty by validation AUPRC.  The single-tree variant
reuses the boosting machinery with one full-data round.  Persistence
dispatches on the "kind" field of the JSON document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np
from sklearn.linear_model import SGDClassifier

from ..alarmeval.metrics import average_precision
from ..features import FeatureManifest
from .gbdt import GBDTModel, GBDTParams, _sigmoid, fit_gbdt

DEFAULT_ALPHAS = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


@dataclass
class ColumnTransform:
    kind: str            # "num" or "onehot"
    source: int          # input column index
    center: float = 0.0
    scale: float = 1.0
    value: float = 0.0   # matched category for onehot columns


@dataclass
class LinearModel:
    coef: np.ndarray
    intercept: float
    transforms: list[ColumnTransform]
    feature_names: list[str]
    manifest_hash: str
    alpha: float
    kind: str = "logreg"

    def transform(self, x: np.ndarray) -> np.ndarray:
        out = np.empty((x.shape[0], len(self.transforms)))
        for j, t in enumerate(self.transforms):
            col = x[:, t.source]
            if t.kind == "num":
                out[:, j] = (col - t.center) / t.scale
            else:
                out[:, j] = col == t.value
        return out

    def predict_margin(self, x: np.ndarray) -> np.ndarray:
        return self.transform(x) @ self.coef + self.intercept

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.predict_margin(x))

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "alpha": self.alpha,
            "feature_names": self.feature_names,
            "manifest_hash": self.manifest_hash,
            "transforms": [{
                "kind": t.kind, "source": t.source, "center": t.center,
                "scale": t.scale, "value": t.value,
            } for t in self.transforms],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "LinearModel":
        raw = json.loads(text)
        return cls(
            coef=np.asarray(raw["coef"], dtype=np.float64),
            intercept=raw["intercept"],
            transforms=[ColumnTransform(**t) for t in raw["transforms"]],
            feature_names=raw["feature_names"],
            manifest_hash=raw["manifest_hash"],
            alpha=raw["alpha"], kind=raw["kind"])


def build_transforms(x_train: np.ndarray, manifest: FeatureManifest,
                     ) -> tuple[list[ColumnTransform], list[str]]:
    transforms: list[ColumnTransform] = []
    names: list[str] = []
    for j, col in enumerate(manifest.columns):
        if col.categorical:
            if col.categories is not None:
                cats = [float(i) for i in range(len(col.categories))]
            else:
                cats = [float(v) for v in np.unique(x_train[:, j])]
            for v in cats:
                transforms.append(ColumnTransform("onehot", j, value=v))
                names.append(f"{col.name}=={v:g}")
        else:
            center = float(np.mean(x_train[:, j]))
            scale = float(np.std(x_train[:, j]))
            if scale < 1e-12:
                scale = 1.0
            transforms.append(ColumnTransform("num", j, center=center, scale=scale))
            names.append(col.name)
    return transforms, names


def train_logreg(x_train: np.ndarray, y_train: np.ndarray, x_val: np.ndarray,
                 y_val: np.ndarray, manifest: FeatureManifest,
                 alphas: tuple[float, ...] = DEFAULT_ALPHAS, seed: int = 0,
                 max_iter: int = 200) -> tuple[LinearModel, list[dict]]:
    transforms, names = build_transforms(x_train, manifest)
    probe = LinearModel(np.zeros(len(transforms)), 0.0, transforms, names,
                        manifest.content_hash(), 0.0)
    xt_train = probe.transform(x_train)
    xt_val = probe.transform(x_val)

    history = []
    best = None
    best_ap = -np.inf
    for alpha in alphas:
        clf = SGDClassifier(loss="log_loss", penalty="l2", alpha=alpha,
                            max_iter=max_iter, tol=1e-4, random_state=seed,
                            class_weight="balanced")
        clf.fit(xt_train, y_train)
        ap = average_precision(y_val, clf.decision_function(xt_val))
        history.append({"alpha": alpha, "val_auprc": ap})
        if ap > best_ap:
            best_ap = ap
            best = (alpha, clf.coef_[0].copy(), float(clf.intercept_[0]))
    alpha, coef, intercept = best
    model = LinearModel(coef=coef, intercept=intercept, transforms=transforms,
                        feature_names=names, manifest_hash=manifest.content_hash(),
                        alpha=alpha)
    return model, history


def single_tree_params(params: GBDTParams) -> GBDTParams:
    return replace(params, max_rounds=1, early_stop_rounds=0,
                   row_fraction=1.0, feature_fraction=1.0, learning_rate=1.0)


def train_model(kind: str, x_train: np.ndarray, y_train: np.ndarray,
                x_val: np.ndarray, y_val: np.ndarray,
                manifest: FeatureManifest, params: GBDTParams,
                alphas: tuple[float, ...] = DEFAULT_ALPHAS):
    names = manifest.names()
    if kind == "gbdt":
        return fit_gbdt(x_train, y_train, x_val, y_val, names,
                        manifest.content_hash(), params)
    if kind == "gbdt_single":
        model, history = fit_gbdt(x_train, y_train, x_val, y_val, names,
                                  manifest.content_hash(),
                                  single_tree_params(params))
        model.kind = "gbdt_single"
        return model, history
    if kind == "logreg":
        return train_logreg(x_train, y_train, x_val, y_val, manifest,
                            alphas=alphas, seed=params.seed)
    raise ValueError(f"unknown model kind: {kind}")


def load_model(text: str):
    kind = json.loads(text).get("kind")
    if kind in ("gbdt", "gbdt_single"):
        return GBDTModel.from_json(text)
    if kind == "logreg":
        return LinearModel.from_json(text)
    raise ValueError(f"unknown model kind: {kind}")
