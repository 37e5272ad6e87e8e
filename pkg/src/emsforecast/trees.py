"""CART regression trees and tree ensembles.

The same code serves as forecasting benchmark, as Bayesian-optimisation
surrogate (via :func:`forest_mean_var`) and as an intrinsic feature-selection
reporter (:func:`tree_selected_features`).

Splits minimise the summed squared error of the two children.  Candidate
thresholds are midpoints between consecutive distinct feature values
(``splitter="best"``) or one uniform draw per candidate feature between the
node's min and max (``splitter="random"``, extremely randomised trees).
Samples with ``x[feature] <= threshold`` go left.  Equal gains are resolved in
favour of the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RegressionTree",
    "Forest",
    "fit_tree",
    "fit_forest",
    "forest_mean_var",
    "grid_search_trees",
    "tree_selected_features",
]

_LEAF = -1


@dataclass(eq=False)
class RegressionTree:
    """Array-encoded binary tree; node 0 is the root.

    ``feature[i] == -1`` marks a leaf whose prediction is ``value[i]`` (the
    mean of the training targets routed there).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: np.ndarray
    n_samples: np.ndarray
    max_depth: int | None = None
    min_samples_leaf: int = 1
    n_features: int = 0

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def actual_depth(self) -> int:
        return int(self.depth.max()) if self.node_count else 0

    def apply(self, X) -> np.ndarray:
        """Index of the leaf reached by each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != _LEAF
        rows = np.arange(len(X))
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] != _LEAF
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "depth": self.depth.tolist(),
            "n_samples": self.n_samples.tolist(),
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, d) -> "RegressionTree":
        ints = ("feature", "left", "right", "depth", "n_samples")
        arrays = {k: np.asarray(d[k], dtype=np.int64 if k in ints else float)
                  for k in ("feature", "threshold", "left", "right", "value", "depth", "n_samples")}
        return cls(**arrays, max_depth=d.get("max_depth"), min_samples_leaf=d.get("min_samples_leaf", 1),
                   n_features=d.get("n_features", 0))


def _n_candidate_features(max_features, d):
    if max_features is None:
        return d
    if isinstance(max_features, float):
        return max(1, min(d, int(round(max_features * d))))
    return max(1, min(d, int(max_features)))


_PAD_BUDGET = 4_000_000  # floats per padded block in the exhaustive split search


def _segments(counts):
    starts = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    return starts


def _best_splits_sorted(Xr, yr, S, seg, counts, allowed, msl):
    """Exhaustive midpoint search for a block of nodes.

    ``S`` holds row ids with shape (rows, d): for each column the rows of
    node 0, then node 1, ..., each run sorted by that column.  Returns per
    node (score, column, threshold, total) with score -inf when no split is
    valid.  Equal scores go to the lowest column, then the lowest threshold.
    """
    k = len(counts)
    d = Xr.shape[1]
    starts = _segments(counts)
    width = int(counts.max())
    pos = np.arange(len(seg)) - starts[seg]
    cols = np.arange(d)
    Py = np.zeros((k, width, d))
    Px = np.full((k, width, d), np.inf)
    Py[seg[:, None], pos[:, None], cols[None, :]] = yr[S]
    Px[seg[:, None], pos[:, None], cols[None, :]] = Xr[S, cols[None, :]]
    csum = np.cumsum(Py, axis=1)
    total = csum[:, -1, :]
    left = csum[:, :-1, :]
    n_left = np.arange(1, width, dtype=float)[None, :, None]
    n_right = counts[:, None, None] - n_left
    valid = (Px[:, 1:, :] > Px[:, :-1, :]) & (n_left >= msl) & (n_right >= msl)
    if allowed is not None:
        valid &= allowed[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        score = left ** 2 / n_left + (total[:, None, :] - left) ** 2 / n_right
    score = np.where(valid, score, -np.inf)
    if width < 2:
        return np.full(k, -np.inf), np.zeros(k, int), np.zeros(k), total[:, 0]
    flat = score.transpose(0, 2, 1).reshape(k, -1)
    best = np.argmax(flat, axis=1)
    col, at = np.divmod(best, width - 1)
    node = np.arange(k)
    lo = Px[node, at, col]
    hi = Px[node, np.minimum(at + 1, width - 1), col]
    thr = 0.5 * (lo + hi)
    # midpoints can collapse onto the upper value for adjacent floats
    thr = np.where(thr < hi, thr, lo)
    return flat[node, best], col, thr, total[node, col]


def _grow(X, y, groups, rngs, max_depth, msl, m_feat, splitter):
    """Grow one tree per entry of ``groups`` (row indices into ``X``; repeats allowed).

    Nodes are expanded level by level across all trees at once.  Random
    draws happen per tree, per level, for that tree's expandable nodes in
    creation order.
    """
    n_trees = len(groups)
    sizes = np.array([len(g) for g in groups])
    rows = np.concatenate(groups)
    Xr = X[rows]
    yr = y[rows]
    R, d = Xr.shape
    node_of_row = np.repeat(np.arange(n_trees), sizes)
    presort = np.argsort(Xr, axis=0, kind="stable") if splitter == "best" else None

    tree_of = np.arange(n_trees)
    depth_of = np.zeros(n_trees, dtype=np.int64)
    feature = np.full(n_trees, _LEAF, dtype=np.int64)
    threshold = np.zeros(n_trees)
    left = np.full(n_trees, _LEAF, dtype=np.int64)
    right = np.full(n_trees, _LEAF, dtype=np.int64)
    count = np.bincount(node_of_row, minlength=n_trees)
    value = np.bincount(node_of_row, weights=yr, minlength=n_trees) / count
    frontier = np.arange(n_trees)

    while len(frontier):
        n_nodes = len(feature)
        fcnt = count[frontier]
        ymin = np.full(n_nodes, np.inf)
        ymax = np.full(n_nodes, -np.inf)
        np.minimum.at(ymin, node_of_row, yr)
        np.maximum.at(ymax, node_of_row, yr)
        ok = (fcnt >= 2 * msl) & (ymin[frontier] < ymax[frontier])
        if max_depth is not None:
            ok &= depth_of[frontier] < max_depth
        active = frontier[ok]
        if not len(active):
            break
        k = len(active)
        loc = np.full(n_nodes, -1, dtype=np.int64)
        # nodes ordered by size so padded blocks stay compact
        by_size = np.argsort(count[active], kind="stable")
        loc[active[by_size]] = np.arange(k)
        node_loc = active[by_size]
        a_cnt = count[node_loc]
        n_act = int(a_cnt.sum())
        sumsq = np.bincount(node_of_row, weights=yr * yr, minlength=n_nodes)[node_loc]
        row_loc = loc[node_of_row]

        # per-tree random draws, nodes in creation order
        allowed = None
        rand_thr = None
        if m_feat < d or splitter == "random":
            allowed = np.ones((k, d), dtype=bool) if m_feat < d else None
            if splitter == "random":
                order_rows = np.argsort(row_loc, kind="stable")[R - n_act:]
                starts = _segments(a_cnt)[:-1]
                Xs = Xr[order_rows]
                lo = np.minimum.reduceat(Xs, starts, axis=0)
                hi = np.maximum.reduceat(Xs, starts, axis=0)
                rand_thr = np.zeros((k, d))
            active_tree = tree_of[active]
            for t in range(n_trees):
                mine = active[active_tree == t]
                if not len(mine):
                    continue
                li = loc[mine]
                if m_feat < d:
                    perm = np.argsort(rngs[t].random((len(mine), d)), axis=1)[:, :m_feat]
                    mask = np.zeros((len(mine), d), dtype=bool)
                    mask[np.arange(len(mine))[:, None], perm] = True
                    allowed[li] = mask
                if splitter == "random":
                    rand_thr[li] = rngs[t].uniform(lo[li], hi[li])

        if splitter == "best":
            score = np.full(k, -np.inf)
            col = np.zeros(k, dtype=np.int64)
            thr = np.zeros(k)
            total = np.zeros(k)
            # small integer keys let numpy use its linear-time radix sort
            key_type = np.int16 if k < 2 ** 15 - 1 else np.int64
            o = np.argsort(row_loc.astype(key_type)[presort], axis=0, kind="stable")
            S = np.take_along_axis(presort, o, axis=0)[R - n_act:]
            seg_all = np.repeat(np.arange(k), a_cnt)
            starts = _segments(a_cnt)
            lo_i = 0
            while lo_i < k:
                hi_i = lo_i + 1
                while hi_i < k:
                    cells = (hi_i + 1 - lo_i) * a_cnt[hi_i]
                    if cells * d > _PAD_BUDGET or cells > 2 * (starts[hi_i + 1] - starts[lo_i]) + 256:
                        break
                    hi_i += 1
                sl = slice(starts[lo_i], starts[hi_i])
                res = _best_splits_sorted(Xr, yr, S[sl], seg_all[sl] - lo_i, a_cnt[lo_i:hi_i],
                                          None if allowed is None else allowed[lo_i:hi_i], msl)
                score[lo_i:hi_i], col[lo_i:hi_i], thr[lo_i:hi_i], total[lo_i:hi_i] = res
                lo_i = hi_i
        else:
            go = Xs <= rand_thr[np.repeat(np.arange(k), a_cnt)]
            nl = np.add.reduceat(go, starts, axis=0).astype(float)
            sl = np.add.reduceat(go * yr[order_rows][:, None], starts, axis=0)
            total = np.add.reduceat(yr[order_rows], starts)
            nr = a_cnt[:, None] - nl
            valid = (hi > lo) & (nl >= msl) & (nr >= msl)
            if allowed is not None:
                valid &= allowed
            with np.errstate(divide="ignore", invalid="ignore"):
                sc = sl ** 2 / nl + (total[:, None] - sl) ** 2 / nr
            sc = np.where(valid, sc, -np.inf)
            col = np.argmax(sc, axis=1)
            score = sc[np.arange(k), col]
            thr = rand_thr[np.arange(k), col]

        gain = score - total ** 2 / a_cnt
        split = np.isfinite(score) & (gain > 1e-12 * np.maximum(1.0, sumsq))
        if not split.any():
            break
        order = np.argsort(node_loc[split])
        nodes = node_loc[split][order]
        n_split = len(nodes)
        feature[nodes] = col[split][order]
        threshold[nodes] = thr[split][order]
        left[nodes] = n_nodes + 2 * np.arange(n_split)
        right[nodes] = left[nodes] + 1

        r = np.nonzero(feature[node_of_row] >= 0)[0]
        r = r[left[node_of_row[r]] >= n_nodes]           # rows of nodes split on this level
        nd = node_of_row[r]
        go_left = Xr[r, feature[nd]] <= threshold[nd]
        node_of_row[r] = left[nd] + (~go_left)

        parents = np.repeat(nodes, 2)
        tree_of = np.concatenate([tree_of, tree_of[parents]])
        depth_of = np.concatenate([depth_of, depth_of[parents] + 1])
        feature = np.concatenate([feature, np.full(2 * n_split, _LEAF, dtype=np.int64)])
        threshold = np.concatenate([threshold, np.zeros(2 * n_split)])
        left = np.concatenate([left, np.full(2 * n_split, _LEAF, dtype=np.int64)])
        right = np.concatenate([right, np.full(2 * n_split, _LEAF, dtype=np.int64)])
        n_all = len(feature)
        cnt = np.bincount(node_of_row, minlength=n_all)
        tot = np.bincount(node_of_row, weights=yr, minlength=n_all)
        count = np.concatenate([count, cnt[n_nodes:]])
        value = np.concatenate([value, tot[n_nodes:] / cnt[n_nodes:]])
        frontier = np.arange(n_nodes, n_all)

    # global ids increase level by level, so each tree's ids are already breadth-first
    trees = []
    for t in range(n_trees):
        ids = np.nonzero(tree_of == t)[0]
        is_split = feature[ids] != _LEAF
        lt = np.full(len(ids), _LEAF, dtype=np.int64)
        rt = np.full(len(ids), _LEAF, dtype=np.int64)
        lt[is_split] = np.searchsorted(ids, left[ids][is_split])
        rt[is_split] = np.searchsorted(ids, right[ids][is_split])
        trees.append((feature[ids].copy(), threshold[ids].copy(), lt, rt, value[ids].copy(),
                      depth_of[ids].copy(), count[ids].copy()))
    return trees


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2:
        X = X.reshape(len(X), -1)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError(f"need matching non-empty X and y, got {len(X)} and {len(y)} rows")
    return X, y


def fit_tree(X, y, max_depth=None, min_samples_leaf=1, rng=None, max_features=None,
             splitter="best") -> RegressionTree:
    """Greedy CART fit.

    Args:
        X: (n, d) feature matrix.
        y: (n,) targets.
        max_depth: maximum number of split levels; ``None`` grows until leaves
            are pure or too small, ``0`` yields a single leaf.
        min_samples_leaf: minimum number of samples in each child.
        rng: seed or ``numpy.random.Generator`` used for feature subsampling
            and random thresholds.
        max_features: candidate features per split, as a count (int) or a
            fraction (float).  ``None`` uses all features.
        splitter: ``"best"`` or ``"random"``.
    """
    X, y = _check_xy(X, y)
    if splitter not in ("best", "random"):
        raise ValueError(f"unknown splitter {splitter!r}")
    rng = np.random.default_rng(rng)
    msl = max(1, int(min_samples_leaf))
    d = X.shape[1]
    arrays = _grow(X, y, [np.arange(len(X))], [rng], max_depth, msl,
                   _n_candidate_features(max_features, d), splitter)[0]
    return RegressionTree(*arrays, max_depth, msl, d)


@dataclass(eq=False)
class Forest:
    """Ensemble whose prediction is the plain mean of its members.

    The mean is taken with ``numpy.mean`` over the stacked per-tree
    predictions (pairwise summation), so recomputing it the same way from
    :meth:`per_tree` reproduces :meth:`predict` bit for bit.
    """

    trees: list = field(default_factory=list)
    mode: str = "bagging"
    feature_subsample: float = 1.0
    bootstrap: bool = True

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _stacked(self):
        cached = self.__dict__.get("_stack")
        if cached is None or cached[0] != len(self.trees):
            sizes = np.array([t.node_count for t in self.trees])
            offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
            feat = np.concatenate([t.feature for t in self.trees])
            shift = np.repeat(offsets, sizes)
            split = feat != _LEAF
            left = np.concatenate([t.left for t in self.trees])
            right = np.concatenate([t.right for t in self.trees])
            left = np.where(split, left + shift, -1)
            right = np.where(split, right + shift, -1)
            thr = np.concatenate([t.threshold for t in self.trees])
            value = np.concatenate([t.value for t in self.trees])
            cached = (len(self.trees), offsets, feat, thr, left, right, value)
            self.__dict__["_stack"] = cached
        return cached

    def per_tree(self, X) -> np.ndarray:
        """Member predictions, shape (n_trees, n_points); all trees traversed together."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        _, offsets, feat, thr, left, right, value = self._stacked()
        n = len(X)
        node = np.repeat(offsets[:, None], n, axis=1).ravel()
        col = np.tile(np.arange(n), len(offsets))
        live = np.nonzero(feat[node] != _LEAF)[0]
        while len(live):
            nd = node[live]
            go_left = X[col[live], feat[nd]] <= thr[nd]
            node[live] = np.where(go_left, left[nd], right[nd])
            live = live[feat[node[live]] != _LEAF]
        return value[node].reshape(len(offsets), n)

    def predict(self, X) -> np.ndarray:
        return np.mean(self.per_tree(X), axis=0)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "feature_subsample": self.feature_subsample,
                "bootstrap": self.bootstrap, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "Forest":
        return cls([RegressionTree.from_dict(t) for t in d["trees"]], d["mode"],
                   d["feature_subsample"], d["bootstrap"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def fit_forest(X, y, n_trees=10, max_depth=None, mode="bagging", rng=None, min_samples_leaf=1,
               feature_subsample=None, bootstrap=None) -> Forest:
    """Fit a random forest (``mode="bagging"``) or extremely randomised trees (``mode="extra"``).

    Defaults: bagging bootstraps rows and considers a third of the features
    per split; extra trees use every row and every feature with random
    thresholds.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    if mode not in ("bagging", "extra"):
        raise ValueError(f"unknown forest mode {mode!r}")
    X, y = _check_xy(X, y)
    rng = np.random.default_rng(rng)
    if feature_subsample is None:
        feature_subsample = 1.0 / 3.0 if mode == "bagging" else 1.0
    if bootstrap is None:
        bootstrap = mode == "bagging"
    splitter = "best" if mode == "bagging" else "random"
    n, d = X.shape
    msl = max(1, int(min_samples_leaf))
    rngs, groups = [], []
    for _ in range(n_trees):
        # one child generator per tree keeps trees independent of each other's draws
        tree_rng = np.random.default_rng(rng.integers(2 ** 63))
        groups.append(tree_rng.integers(0, n, size=n) if bootstrap else np.arange(n))
        rngs.append(tree_rng)
    grown = _grow(X, y, groups, rngs, max_depth, msl,
                  _n_candidate_features(float(feature_subsample), d), splitter)
    trees = [RegressionTree(*a, max_depth, msl, d) for a in grown]
    return Forest(trees, mode, float(feature_subsample), bool(bootstrap))


def forest_mean_var(f: Forest, x) -> tuple:
    """Mean and population variance of the member predictions.

    Works on a single point (returns floats) or a matrix of points (arrays).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    preds = f.per_tree(x[None] if single else x)
    mu = np.mean(preds, axis=0)
    var = np.maximum(np.var(preds, axis=0), 0.0)
    if single:
        return float(mu[0]), float(var[0])
    return mu, var


def tree_selected_features(t: RegressionTree) -> dict:
    """Map of split feature -> shallowest depth at which it is used (root = 0)."""
    out = {}
    for f, dep in zip(t.feature, t.depth):
        if f != _LEAF:
            f = int(f)
            out[f] = min(out.get(f, int(dep)), int(dep))
    return dict(sorted(out.items()))


def _mse(a, b):
    return float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))


def grid_search_trees(param_grid, train, val, test=None, kind="tree", seed=0):
    """Exhaustive grid search over tree or forest hyperparameters.

    ``train``, ``val`` and ``test`` are ``(X, y)`` pairs.  The incumbent is the
    configuration with the lowest validation MSE (first in grid order on ties).

    Returns:
        ``(incumbent_params, fitted_incumbent, rows)`` where each row holds the
        parameters plus train/val/test MSE.
    """
    keys = sorted(param_grid)
    combos = list(itertools.product(*(param_grid[k] for k in keys)))
    if not combos:
        raise ValueError("empty parameter grid")
    rows = []
    best = None
    for combo in combos:
        params = dict(zip(keys, combo))
        if kind == "tree":
            model = fit_tree(train[0], train[1], params.get("max_depth"),
                             params.get("min_samples_leaf", 1), rng=seed)
        elif kind == "forest":
            model = fit_forest(train[0], train[1], params.get("n_trees", 10), params.get("max_depth"),
                               params.get("mode", "bagging"), rng=seed,
                               min_samples_leaf=params.get("min_samples_leaf", 1))
        else:
            raise ValueError(f"unknown kind {kind!r}")
        row = dict(params)
        row["train_mse"] = _mse(model.predict(train[0]), train[1])
        row["val_mse"] = _mse(model.predict(val[0]), val[1])
        row["test_mse"] = _mse(model.predict(test[0]), test[1]) if test is not None else None
        rows.append(row)
        if best is None or row["val_mse"] < best[0]:
            best = (row["val_mse"], params, model)
    return best[1], best[2], rows
