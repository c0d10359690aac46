"""CART regression trees, bagged forests and gradient boosting.

Trees are grown level by level.  Features are first mapped to bin indices
over candidate thresholds (midpoints between consecutive distinct training
values, thinned to quantiles when there are more than ``max_bins``), then
each level computes weighted histograms for every frontier node and every
feature in one ``bincount``.  Split quality is the weighted squared-error
reduction; ties go to the lowest feature index, then the lowest threshold.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

MAX_BINS = 256
_HIST_CELLS = 1 << 22  # cap on node*feature*bin cells per bincount


@dataclass
class Tree:
    feature: np.ndarray    # -1 at leaves
    threshold: np.ndarray  # go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self):
        return len(self.value)

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.intp)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.intp),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.intp),
            right=np.asarray(d["right"], dtype=np.intp),
            value=np.asarray(d["value"], dtype=float),
        )


class Binner:
    """Maps each feature onto bin indices over its candidate thresholds."""

    def __init__(self, X: np.ndarray, max_bins: int = MAX_BINS):
        self.thresholds = []
        for j in range(X.shape[1]):
            u = np.unique(X[:, j])
            mids = (u[:-1] + u[1:]) / 2.0
            # adjacent doubles can round the midpoint up onto the upper value
            clash = mids >= u[1:]
            mids[clash] = u[:-1][clash]
            if len(mids) > max_bins - 1:
                pick = np.unique(np.linspace(0, len(mids) - 1, max_bins - 1).round().astype(int))
                mids = mids[pick]
            self.thresholds.append(mids)
        self.n_bins = max([len(t) + 1 for t in self.thresholds] + [1])

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.intp)
        for j, t in enumerate(self.thresholds):
            out[:, j] = np.searchsorted(t, X[:, j], side="left")
        return out


def grow_tree(Xb: np.ndarray, binner: Binner, y: np.ndarray, w: np.ndarray, *,
              max_depth: int | None = None, min_leaf: float = 1.0,
              feature_fraction: float = 1.0, rng: np.random.Generator | None = None) -> Tree:
    """Grow one regression tree on binned features ``Xb`` with sample
    weights ``w`` (bootstrap counts or 0/1 subsample masks)."""
    n, p = Xb.shape
    B = binner.n_bins
    n_thr = np.array([len(t) for t in binner.thresholds])
    valid_bin = np.arange(B - 1)[None, :] < n_thr[:, None]  # (p, B-1)
    m_try = max(1, int(round(feature_fraction * p)))

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(value) - 1

    samples = np.flatnonzero(w > 0)
    pos = np.zeros(len(samples), dtype=np.intp)  # frontier slot of each sample
    frontier = [new_node()]
    depth = 0
    while frontier:
        nf = len(frontier)
        ws = w[samples]
        ys = y[samples]
        W = np.bincount(pos, ws, minlength=nf)
        S = np.bincount(pos, ws * ys, minlength=nf)
        Q = np.bincount(pos, ws * ys * ys, minlength=nf)
        vals = S / W
        for slot, node in enumerate(frontier):
            value[node] = float(vals[slot])
        if (max_depth is not None and depth >= max_depth) or B < 2:
            break
        best_gain = np.full(nf, -np.inf)
        best_f = np.zeros(nf, dtype=np.intp)
        best_b = np.zeros(nf, dtype=np.intp)
        if m_try < p:
            fmask = np.zeros((nf, p), dtype=bool)
            order = np.argsort(rng.random((nf, p)), axis=1)[:, :m_try]
            np.put_along_axis(fmask, order, True, axis=1)
        else:
            fmask = None
        # samples are kept sorted by frontier slot, so node chunks are contiguous slices
        starts = np.searchsorted(pos, np.arange(nf + 1))
        chunk = max(1, _HIST_CELLS // (p * B))
        for c0 in range(0, nf, chunk):
            c1 = min(nf, c0 + chunk)
            sl = slice(starts[c0], starts[c1])
            cp = pos[sl] - c0
            key = ((cp[:, None] * p + np.arange(p)) * B + Xb[samples[sl]]).ravel()
            size = (c1 - c0) * p * B
            Hw = np.bincount(key, np.repeat(ws[sl], p), minlength=size).reshape(c1 - c0, p, B)
            Hs = np.bincount(key, np.repeat(ws[sl] * ys[sl], p), minlength=size).reshape(c1 - c0, p, B)
            WL = np.cumsum(Hw, axis=2)[:, :, :-1]
            SL = np.cumsum(Hs, axis=2)[:, :, :-1]
            Wn = W[c0:c1, None, None]
            Sn = S[c0:c1, None, None]
            WR = Wn - WL
            SR = Sn - SL
            ok = (WL >= min_leaf) & (WR >= min_leaf) & valid_bin[None]
            if fmask is not None:
                ok &= fmask[c0:c1, :, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = SL * SL / WL + SR * SR / WR - Sn * Sn / Wn
            gain = np.where(ok, gain, -np.inf).reshape(c1 - c0, -1)
            arg = np.argmax(gain, axis=1)
            best_gain[c0:c1] = gain[np.arange(c1 - c0), arg]
            best_f[c0:c1], best_b[c0:c1] = np.divmod(arg, B - 1)
        # splits smaller than rounding noise on the node's sum of squares are not splits
        split = best_gain > 1e-12 * np.maximum(Q, 1e-300)
        if not split.any():
            break
        child_slot = np.full(nf, -1, dtype=np.intp)
        new_frontier = []
        for slot in np.flatnonzero(split):
            node = frontier[slot]
            f, b = int(best_f[slot]), int(best_b[slot])
            feature[node] = f
            threshold[node] = float(binner.thresholds[f][b])
            left[node] = new_node()
            right[node] = new_node()
            child_slot[slot] = len(new_frontier)
            new_frontier += [left[node], right[node]]
        keep = split[pos]
        samples = samples[keep]
        pos = pos[keep]
        goes_right = Xb[samples, best_f[pos]] > best_b[pos]
        pos = child_slot[pos] + goes_right
        order = np.argsort(pos, kind="stable")
        samples, pos = samples[order], pos[order]
        frontier = new_frontier
        depth += 1
    return Tree(np.asarray(feature, dtype=np.intp), np.asarray(threshold, dtype=float),
                np.asarray(left, dtype=np.intp), np.asarray(right, dtype=np.intp),
                np.asarray(value, dtype=float))


def fit_tree(X, y, w=None, **kw) -> Tree:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    binner = Binner(X)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    return grow_tree(binner.transform(X), binner, y, w, **kw)


def tree_rng(seed: int, index: int, tag: int = 0) -> np.random.Generator:
    """Independent stream per (seed, tree index), whatever thread runs it."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, tag, index]))


def fit_forest(X, y, *, n_trees=100, max_depth=10, min_leaf=5, feature_fraction=0.5,
               seed=0, workers=1) -> list[Tree]:
    """Bagged CART trees: bootstrap resample (as integer weights) and
    per-split feature subsampling."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    binner = Binner(X)
    Xb = binner.transform(X)

    def one(i):
        rng = tree_rng(seed, i, tag=1)
        w = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
        return grow_tree(Xb, binner, y, w, max_depth=max_depth, min_leaf=min_leaf,
                         feature_fraction=feature_fraction, rng=rng)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(n_trees)))
    return [one(i) for i in range(n_trees)]


def fit_gradboost(X, y, *, n_trees=100, learning_rate=0.1, max_depth=4, min_leaf=5,
                  subsample_fraction=0.8, seed=0, loss_trace=None):
    """Stagewise squared-error boosting started from the target mean.

    Returns ``(init, trees)``.  When ``loss_trace`` is a list, the training
    mean squared error after each stage is appended to it (index 0 is the
    constant model).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    binner = Binner(X)
    Xb = binner.transform(X)
    init = float(y.mean())
    F = np.full(n, init)
    if loss_trace is not None:
        loss_trace.append(float(np.mean((y - F) ** 2)))
    n_sub = max(1, int(np.floor(subsample_fraction * n)))
    trees = []
    for i in range(n_trees):
        rng = tree_rng(seed, i, tag=2)
        if n_sub < n:
            w = np.zeros(n)
            w[rng.choice(n, n_sub, replace=False)] = 1.0
        else:
            w = np.ones(n)
        tree = grow_tree(Xb, binner, y - F, w, max_depth=max_depth, min_leaf=min_leaf, rng=rng)
        F = F + learning_rate * tree.predict(X)
        trees.append(tree)
        if loss_trace is not None:
            loss_trace.append(float(np.mean((y - F) ** 2)))
    return init, trees
