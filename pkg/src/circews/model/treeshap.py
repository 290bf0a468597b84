"""Exact feature attributions for tree ensembles.

Walks every root-leaf path once per sample, carrying the weighted count
of feature subsets of each size along the path (the EXTEND/UNWIND
recursion over proportions of "one" and "zero" paths).  Attributions of
an ensemble sum with the learning rate, so the cover-weighted expected
margin plus the attribution total reproduces the predicted margin to
numerical precision.
"""

from __future__ import annotations

import numpy as np

from .gbdt import GBDTModel, Tree


def _extend(pd: list, pz: list, po: list, w: list,
            pzf: float, pof: float, pif: int) -> tuple[list, list, list, list]:
    length = len(w)
    pd = pd + [pif]
    pz = pz + [pzf]
    po = po + [pof]
    w = w + [1.0 if length == 0 else 0.0]
    for i in range(length - 1, -1, -1):
        w[i + 1] += pof * w[i] * (i + 1) / (length + 1)
        w[i] = pzf * w[i] * (length - i) / (length + 1)
    return pd, pz, po, w


def _unwound_weights(pz: list, po: list, w: list, i: int) -> list:
    length = len(w) - 1
    out = list(w)
    acc = out[length]
    oi, zi = po[i], pz[i]
    for j in range(length - 1, -1, -1):
        if oi != 0:
            kept = out[j]
            out[j] = acc * (length + 1) / ((j + 1) * oi)
            acc = kept - out[j] * zi * (length - j) / (length + 1)
        else:
            out[j] = out[j] * (length + 1) / (zi * (length - j))
    return out[:length]


def _unwind(pd: list, pz: list, po: list, w: list, i: int,
            ) -> tuple[list, list, list, list]:
    new_w = _unwound_weights(pz, po, w, i)
    return (pd[:i] + pd[i + 1:], pz[:i] + pz[i + 1:],
            po[:i] + po[i + 1:], new_w)


def tree_shap_single(tree: Tree, x: np.ndarray, phi: np.ndarray) -> None:
    """Accumulate one tree's unscaled attributions for one sample into phi."""
    feature = tree.feature
    threshold = tree.threshold
    left, right = tree.left, tree.right
    value, cover = tree.value, tree.cover

    def recurse(j: int, pd: list, pz: list, po: list, w: list,
                pzf: float, pof: float, pif: int) -> None:
        pd, pz, po, w = _extend(pd, pz, po, w, pzf, pof, pif)
        if feature[j] < 0:
            for i in range(1, len(w)):
                total = sum(_unwound_weights(pz, po, w, i))
                phi[pd[i]] += total * (po[i] - pz[i]) * value[j]
            return
        f = int(feature[j])
        if x[f] <= threshold[j]:
            hot, cold = int(left[j]), int(right[j])
        else:
            hot, cold = int(right[j]), int(left[j])
        iz = io = 1.0
        k = next((i for i in range(1, len(pd)) if pd[i] == f), -1)
        if k >= 0:
            iz, io = pz[k], po[k]
            pd, pz, po, w = _unwind(pd, pz, po, w, k)
        recurse(hot, pd, pz, po, w, iz * cover[hot] / cover[j], io, f)
        recurse(cold, pd, pz, po, w, iz * cover[cold] / cover[j], 0.0, f)

    recurse(0, [], [], [], [], 1.0, 1.0, -1)


def ensemble_shap_values(model: GBDTModel, x: np.ndarray,
                         ) -> tuple[np.ndarray, float]:
    """(phi, expected_margin): per-sample, per-feature attributions and the
    cover-weighted base margin, satisfying
    expected_margin + phi.sum(axis=1) == predict_margin(x)."""
    n, n_feat = x.shape
    phi = np.zeros((n, n_feat))
    for tree in model.trees:
        for r in range(n):
            tree_shap_single(tree, x[r], phi[r])
    phi *= model.learning_rate
    return phi, model.expected_value()
