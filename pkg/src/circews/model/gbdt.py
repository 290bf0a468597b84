"""Histogram-based gradient-boosted trees for binary outcomes.

Features are quantile-binned once (at most 255 bins); trees grow
leaf-wise, always splitting the frontier leaf with the largest gain,
bounded by a leaf budget, a depth budget and a minimum leaf size.  Child
histograms are built for the smaller child and subtracted from the parent
for the larger one.  Training stops early when the validation AUPRC has
not improved for a fixed number of rounds and rolls back to the best
round.  Everything is seeded and single-threaded, so refits are
bit-identical.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..alarmeval.metrics import average_precision


@dataclass
class GBDTParams:
    learning_rate: float = 0.05
    num_leaves: int = 32
    max_depth: int | None = None          # None: log2(num_leaves)
    min_samples_leaf: int = 20
    min_child_hessian: float = 1e-3
    l2_reg: float = 0.0
    feature_fraction: float = 0.66
    row_fraction: float = 0.66
    max_rounds: int = 5000
    early_stop_rounds: int = 50
    max_bins: int = 255
    bin_subsample: int = 1_000_000
    balance_classes: bool = True
    seed: int = 0

    def resolved_depth(self) -> int:
        if self.max_depth is not None:
            return self.max_depth
        return max(int(round(math.log2(self.num_leaves))), 1)


@dataclass
class Tree:
    feature: np.ndarray        # int32, -1 at leaves
    bin_threshold: np.ndarray  # int32; go left when bin <= bin_threshold
    threshold: np.ndarray      # float64; go left when x <= threshold
    left: np.ndarray           # int32
    right: np.ndarray          # int32
    value: np.ndarray          # float64 leaf values before learning-rate scaling
    cover: np.ndarray          # float64 training rows routed through each node

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def route_binned(self, binned: np.ndarray) -> np.ndarray:
        node = np.zeros(binned.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            rows = np.flatnonzero(feat >= 0)
            if rows.size == 0:
                return node
            at = node[rows]
            go_left = binned[rows, feat[rows]] <= self.bin_threshold[at]
            node[rows] = np.where(go_left, self.left[at], self.right[at])

    def route_raw(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            rows = np.flatnonzero(feat >= 0)
            if rows.size == 0:
                return node
            at = node[rows]
            go_left = x[rows, feat[rows]] <= self.threshold[at]
            node[rows] = np.where(go_left, self.left[at], self.right[at])

    def expected_value(self) -> float:
        """Cover-weighted mean leaf value."""
        leaves = self.feature < 0
        total = self.cover[0]
        if total <= 0:
            return 0.0
        return float(np.sum(self.value[leaves] * self.cover[leaves]) / total)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "bin_threshold": self.bin_threshold.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Tree":
        return cls(
            feature=np.asarray(raw["feature"], dtype=np.int32),
            bin_threshold=np.asarray(raw["bin_threshold"], dtype=np.int32),
            threshold=np.asarray(raw["threshold"], dtype=np.float64),
            left=np.asarray(raw["left"], dtype=np.int32),
            right=np.asarray(raw["right"], dtype=np.int32),
            value=np.asarray(raw["value"], dtype=np.float64),
            cover=np.asarray(raw["cover"], dtype=np.float64))


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------

def fit_bin_edges(x: np.ndarray, max_bins: int, subsample: int,
                  rng: np.random.Generator) -> list[np.ndarray]:
    """Per-feature ascending edge arrays; values land in the bin of the
    first edge at or above them, so ties go to the lower bin."""
    n = x.shape[0]
    if n > subsample:
        rows = np.sort(rng.choice(n, size=subsample, replace=False))
        x = x[rows]
    edges: list[np.ndarray] = []
    interior = np.linspace(0.0, 1.0, max_bins + 1)[1:-1]
    for j in range(x.shape[1]):
        uniq = np.unique(x[:, j])
        if uniq.size <= 1:
            edges.append(np.empty(0))
        elif uniq.size <= max_bins:
            edges.append((uniq[:-1] + uniq[1:]) / 2.0)
        else:
            edges.append(np.unique(np.quantile(uniq, interior)))
    return edges


def apply_bins(x: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    out = np.empty(x.shape, dtype=np.uint8)
    for j, e in enumerate(edges):
        out[:, j] = np.searchsorted(e, x[:, j], side="left")
    return out


# ---------------------------------------------------------------------------
# Tree growth
# ---------------------------------------------------------------------------

def _node_hists(binned_sub: np.ndarray, rows: np.ndarray, g: np.ndarray,
                h: np.ndarray, nb: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sub = binned_sub[rows]
    gs, hs = g[rows], h[rows]
    n_feat = sub.shape[1]
    hg = np.empty((n_feat, nb))
    hh = np.empty((n_feat, nb))
    hc = np.empty((n_feat, nb))
    for f in range(n_feat):
        codes = sub[:, f]
        hc[f] = np.bincount(codes, minlength=nb)
        hg[f] = np.bincount(codes, weights=gs, minlength=nb)
        hh[f] = np.bincount(codes, weights=hs, minlength=nb)
    return hg, hh, hc


def _best_split(hg, hh, hc, g_sum: float, h_sum: float, n_rows: int,
                params: GBDTParams) -> tuple[float, int, int]:
    """(gain, local feature, bin) of the strongest valid cut, or gain -inf.
    Ties resolve to the lowest feature then the lowest bin."""
    lam = params.l2_reg
    gl = np.cumsum(hg, axis=1)[:, :-1]
    hl = np.cumsum(hh, axis=1)[:, :-1]
    cl = np.cumsum(hc, axis=1)[:, :-1]
    gr, hr, cr = g_sum - gl, h_sum - hl, n_rows - cl
    ok = ((cl >= params.min_samples_leaf) & (cr >= params.min_samples_leaf)
          & (hl >= params.min_child_hessian) & (hr >= params.min_child_hessian))
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = (gl * gl / (hl + lam) + gr * gr / (hr + lam)
                - g_sum * g_sum / (h_sum + lam))
    gain[~ok] = -np.inf
    flat = int(np.argmax(gain))
    f_local, b = divmod(flat, gain.shape[1])
    return float(0.5 * gain.flat[flat]), f_local, b


def _leaf_value(g_sum: float, h_sum: float, lam: float) -> float:
    denom = h_sum + lam
    return -g_sum / denom if denom > 0 else 0.0


def _grow_tree(binned: np.ndarray, edges: list[np.ndarray], g: np.ndarray,
               h: np.ndarray, rows0: np.ndarray, feats: np.ndarray,
               params: GBDTParams) -> Tree:
    binned_sub = np.ascontiguousarray(binned[:, feats])
    nb = params.max_bins
    max_depth = params.resolved_depth()
    lam = params.l2_reg

    feature = [-1]
    bin_thr = [0]
    thr_val = [0.0]
    left = [-1]
    right = [-1]
    value = [0.0]
    cover = [float(rows0.size)]
    depth_of = {0: 0}
    rows_of = {0: rows0}
    hists_of: dict[int, tuple] = {}
    sums_of: dict[int, tuple[float, float]] = {}

    def consider(node_id: int) -> tuple[float, int, int] | None:
        rows = rows_of[node_id]
        if depth_of[node_id] >= max_depth or rows.size < 2 * params.min_samples_leaf:
            return None
        if node_id not in hists_of:
            hists_of[node_id] = _node_hists(binned_sub, rows, g, h, nb)
        hg, hh, hc = hists_of[node_id]
        g_sum, h_sum = sums_of[node_id]
        gain, f_local, b = _best_split(hg, hh, hc, g_sum, h_sum, rows.size, params)
        if not np.isfinite(gain) or gain <= 0:
            return None
        return gain, f_local, b

    g0, h0 = float(np.sum(g[rows0])), float(np.sum(h[rows0]))
    sums_of[0] = (g0, h0)
    value[0] = _leaf_value(g0, h0, lam)
    heap: list[tuple[float, int, int, int]] = []
    root_best = consider(0)
    if root_best is not None:
        heapq.heappush(heap, (-root_best[0], 0, root_best[1], root_best[2]))
    n_leaves = 1

    while heap and n_leaves < params.num_leaves:
        _, node_id, f_local, b = heapq.heappop(heap)
        rows = rows_of.pop(node_id)
        hg, hh, hc = hists_of.pop(node_id)
        g_sum, h_sum = sums_of.pop(node_id)

        codes = binned_sub[rows, f_local]
        mask = codes <= b
        rows_l, rows_r = rows[mask], rows[~mask]
        f_orig = int(feats[f_local])
        feature[node_id] = f_orig
        bin_thr[node_id] = b
        thr_val[node_id] = float(edges[f_orig][b])

        child_ids = []
        for child_rows in (rows_l, rows_r):
            cid = len(feature)
            child_ids.append(cid)
            cg = float(np.sum(g[child_rows]))
            ch = float(np.sum(h[child_rows]))
            feature.append(-1)
            bin_thr.append(0)
            thr_val.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(_leaf_value(cg, ch, lam))
            cover.append(float(child_rows.size))
            depth_of[cid] = depth_of[node_id] + 1
            rows_of[cid] = child_rows
            sums_of[cid] = (cg, ch)
        left[node_id], right[node_id] = child_ids
        n_leaves += 1

        def expandable(cid: int) -> bool:
            return (depth_of[cid] < max_depth
                    and rows_of[cid].size >= 2 * params.min_samples_leaf)

        if expandable(child_ids[0]) or expandable(child_ids[1]):
            small, big = child_ids if rows_l.size <= rows_r.size else child_ids[::-1]
            hists_of[small] = _node_hists(binned_sub, rows_of[small], g, h, nb)
            sh = hists_of[small]
            hists_of[big] = (hg - sh[0], hh - sh[1], hc - sh[2])
        for cid in child_ids:
            best = consider(cid)
            if best is not None:
                heapq.heappush(heap, (-best[0], cid, best[1], best[2]))
            else:
                hists_of.pop(cid, None)
                rows_of.pop(cid, None)

    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        bin_threshold=np.asarray(bin_thr, dtype=np.int32),
        threshold=np.asarray(thr_val, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        cover=np.asarray(cover, dtype=np.float64))


# ---------------------------------------------------------------------------
# Boosting
# ---------------------------------------------------------------------------

def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    em = np.exp(m[~pos])
    out[~pos] = em / (1.0 + em)
    return out


def _logistic_loss(y: np.ndarray, margin: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(w * (np.logaddexp(0.0, margin) - y * margin)) / np.sum(w))


@dataclass
class GBDTModel:
    base_score: float
    learning_rate: float
    trees: list[Tree]
    feature_names: list[str]
    manifest_hash: str
    params: GBDTParams
    best_round: int = -1
    kind: str = "gbdt"

    def predict_margin(self, x: np.ndarray) -> np.ndarray:
        margin = np.full(x.shape[0], self.base_score)
        for tree in self.trees:
            margin += self.learning_rate * tree.value[tree.route_raw(x)]
        return margin

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return _sigmoid(self.predict_margin(x))

    def expected_value(self) -> float:
        return self.base_score + self.learning_rate * sum(
            tree.expected_value() for tree in self.trees)

    def to_json(self) -> str:
        return json.dumps({
            "kind": self.kind,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_names": self.feature_names,
            "manifest_hash": self.manifest_hash,
            "params": asdict(self.params),
            "best_round": self.best_round,
            "trees": [t.to_dict() for t in self.trees],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GBDTModel":
        raw = json.loads(text)
        return cls(
            base_score=raw["base_score"],
            learning_rate=raw["learning_rate"],
            trees=[Tree.from_dict(t) for t in raw["trees"]],
            feature_names=raw["feature_names"],
            manifest_hash=raw["manifest_hash"],
            params=GBDTParams(**raw["params"]),
            best_round=raw["best_round"],
            kind=raw.get("kind", "gbdt"))


def fit_gbdt(x_train: np.ndarray, y_train: np.ndarray, x_val: np.ndarray,
             y_val: np.ndarray, feature_names: list[str], manifest_hash: str,
             params: GBDTParams) -> tuple[GBDTModel, list[dict]]:
    """Boost with early stopping on validation AUPRC; returns the rolled-back
    model and the per-round history."""
    n, n_feat = x_train.shape
    y = y_train.astype(np.float64)
    rng_bins = np.random.default_rng(np.random.SeedSequence([params.seed, 4001]))
    edges = fit_bin_edges(x_train, params.max_bins, params.bin_subsample, rng_bins)
    binned_tr = apply_bins(x_train, edges)
    binned_val = apply_bins(x_val, edges)

    n_pos = float(np.sum(y == 1))
    n_neg = float(n - n_pos)
    if params.balance_classes and n_pos > 0 and n_neg > 0:
        w = np.where(y == 1, n_neg / n_pos, 1.0)
    else:
        w = np.ones(n)
    p_bar = min(max(float(np.sum(w * y) / np.sum(w)), 1e-12), 1 - 1e-12)
    base = math.log(p_bar / (1.0 - p_bar))

    margin_tr = np.full(n, base)
    margin_val = np.full(x_val.shape[0], base)
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, 5001]))

    trees: list[Tree] = []
    history: list[dict] = []
    best_metric, best_round = -np.inf, -1
    for rnd in range(params.max_rounds):
        p = _sigmoid(margin_tr)
        g = w * (p - y)
        h = w * p * (1.0 - p)
        if params.row_fraction < 1.0:
            k = max(int(math.ceil(params.row_fraction * n)), 1)
            rows = np.sort(rng.choice(n, size=k, replace=False))
        else:
            rows = np.arange(n)
        if params.feature_fraction < 1.0:
            k = max(int(math.ceil(params.feature_fraction * n_feat)), 1)
            feats = np.sort(rng.choice(n_feat, size=k, replace=False))
        else:
            feats = np.arange(n_feat)

        tree = _grow_tree(binned_tr, edges, g, h, rows, feats, params)
        trees.append(tree)
        margin_tr += params.learning_rate * tree.value[tree.route_binned(binned_tr)]
        margin_val += params.learning_rate * tree.value[tree.route_binned(binned_val)]

        train_loss = _logistic_loss(y, margin_tr, w)
        val_metric = average_precision(y_val, margin_val)
        history.append({"round": rnd, "train_loss": train_loss,
                        "val_auprc": val_metric, "n_nodes": tree.n_nodes})
        if val_metric > best_metric:
            best_metric, best_round = val_metric, rnd
        if params.early_stop_rounds and rnd - best_round >= params.early_stop_rounds:
            break

    model = GBDTModel(
        base_score=base, learning_rate=params.learning_rate,
        trees=trees[:best_round + 1], feature_names=list(feature_names),
        manifest_hash=manifest_hash, params=params, best_round=best_round)
    return model, history
