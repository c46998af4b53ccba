"""Binary CART trees over pre-binned features.

Every split criterion used here maximizes

    A_L^2 / (B_L + lam) + A_R^2 / (B_R + lam)

over the children. With A = sum(w*y), B = sum(w) and lam = 0 that is variance reduction, and for 0/1 labels
it is also exactly the weighted Gini decrease (node Gini mass is 2*(A - A^2/B)). With A = -sum(g),
B = sum(h) it is the second-order boosting gain. Leaf values are A / (B + lam).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_BINS = 256


@dataclass
class Binning:
    thresholds: list[np.ndarray]

    @classmethod
    def fit(cls, X: np.ndarray, max_bins: int = MAX_BINS) -> "Binning":
        thresholds = []
        for j in range(X.shape[1]):
            distinct = np.unique(X[:, j])
            if distinct.size <= max_bins:
                cuts = (distinct[:-1] + distinct[1:]) / 2.0
            else:
                qs = np.quantile(X[:, j], np.linspace(0, 1, max_bins + 1)[1:-1])
                cuts = np.unique(qs)
            thresholds.append(cuts)
        return cls(thresholds)

    def transform(self, X: np.ndarray) -> np.ndarray:
        # code k means x lies in (t[k-1], t[k]]; "x <= t[k]" is then "code <= k"
        codes = np.empty(X.shape, dtype=np.int32)
        for j, cuts in enumerate(self.thresholds):
            codes[:, j] = np.searchsorted(cuts, X[:, j], side="left")
        return codes


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active[idx] = self.feature[node[idx]] >= 0
        return self.value[node]

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_state(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value}

    @classmethod
    def from_state(cls, s: dict) -> "Tree":
        return cls(np.asarray(s["feature"], dtype=np.int64), np.asarray(s["threshold"], dtype=float),
                   np.asarray(s["left"], dtype=np.int64), np.asarray(s["right"], dtype=np.int64),
                   np.asarray(s["value"], dtype=float))


def _best_split(codes, n_cuts, idx, feats, a, b, c, lam, min_leaf, max_bins, allow_zero_gain):
    m = len(feats)
    sub = codes[np.ix_(idx, feats)]
    flat = (sub + np.arange(m) * max_bins).ravel()
    size = m * max_bins
    A = np.bincount(flat, weights=np.repeat(a[idx], m), minlength=size).reshape(m, max_bins)
    B = np.bincount(flat, weights=np.repeat(b[idx], m), minlength=size).reshape(m, max_bins)
    C = np.bincount(flat, weights=np.repeat(c[idx], m), minlength=size).reshape(m, max_bins)
    AL, BL, CL = np.cumsum(A, axis=1), np.cumsum(B, axis=1), np.cumsum(C, axis=1)
    At, Bt, Ct = AL[0, -1], BL[0, -1], CL[0, -1]
    AR, BR, CR = At - AL, Bt - BL, Ct - CL
    valid = (CL >= min_leaf) & (CR >= min_leaf) & (np.arange(max_bins)[None, :] < n_cuts[feats][:, None])
    valid &= (BL + lam > 0) & (BR + lam > 0)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = AL ** 2 / (BL + lam) + AR ** 2 / (BR + lam) - At ** 2 / (Bt + lam)
    gain = np.where(valid, gain, -np.inf)
    flat_best = int(np.argmax(gain))
    best = gain.flat[flat_best]
    scale = max(1.0, abs(At ** 2 / (Bt + lam)))
    if not (best > 1e-12 * scale or (allow_zero_gain and best > -1e-12 * scale)):
        return None
    fi, k = divmod(flat_best, max_bins)
    return feats[fi], k


def build_tree(codes: np.ndarray, binning: Binning, a: np.ndarray, b: np.ndarray, *,
               rows: np.ndarray | None = None, count: np.ndarray | None = None, lam: float = 0.0,
               max_depth: int | None = None, min_samples_leaf: int = 1, max_features: int | None = None,
               rng: np.random.Generator | None = None, pure_stop: bool = False,
               allow_zero_gain: bool = False) -> Tree:
    """Grow one tree on rows ``rows`` (default all) with per-row statistics ``a``, ``b``.

    ``count`` is the per-row multiplicity used for ``min_samples_leaf`` (bootstrap counts in forests).
    With ``max_features`` set, each split draws that many candidate features and falls back to all
    features only when none of the drawn ones admits a valid split.
    """
    n_rows, p = codes.shape
    rows = np.arange(n_rows) if rows is None else np.asarray(rows)
    c = np.ones(n_rows) if count is None else np.asarray(count, dtype=float)
    n_cuts = np.array([len(t) for t in binning.thresholds])
    max_bins = max(int(n_cuts.max()) + 1, 1) if p else 1
    all_feats = np.arange(p)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        bsum = b[idx].sum()
        value.append(float(a[idx].sum() / (bsum + lam)) if bsum + lam > 0 else 0.0)
        return len(feature) - 1

    root = new_node(rows)
    stack = [(root, rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        if c[idx].sum() < 2 * min_samples_leaf:
            continue
        if pure_stop:
            ya = a[idx] / np.where(b[idx] > 0, b[idx], 1.0)
            if np.all(ya == ya[0]):
                continue
        split = None
        if max_features is not None and max_features < p:
            feats = np.sort(rng.choice(p, size=max_features, replace=False))
            split = _best_split(codes, n_cuts, idx, feats, a, b, c, lam, min_samples_leaf, max_bins,
                                allow_zero_gain)
        if split is None:
            split = _best_split(codes, n_cuts, idx, all_feats, a, b, c, lam, min_samples_leaf, max_bins,
                                allow_zero_gain)
        if split is None:
            continue
        f, k = split
        go_left = codes[idx, f] <= k
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = int(f)
        threshold[node] = float(binning.thresholds[f][k])
        ln, rn = new_node(li), new_node(ri)
        left[node], right[node] = ln, rn
        stack.append((rn, ri, depth + 1))
        stack.append((ln, li, depth + 1))

    return Tree(np.asarray(feature, dtype=np.int64), np.asarray(threshold), np.asarray(left, dtype=np.int64),
                np.asarray(right, dtype=np.int64), np.asarray(value))
