"""Honest, orthogonalized causal forest.

Each tree draws a without-replacement subsample, splits it into disjoint
structure and estimation halves, grows its splits greedily on residualized
outcome/treatment products over structure units only, and stores estimation
units' leaf membership. Predictions aggregate leaf-level residual sums across
trees into the local ratio estimator

    tau(x) = sum_i a_i(x) (Y_i - m_i)(Z_i - e_i) / sum_i a_i(x) (Z_i - e_i)^2

with forest weights a_i(x) induced by shared leaf membership.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import ceil
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data_model import CATEGORICAL_DOMAINS, Dataset
from ..errors import DegenerateProblemError
from ..estimators import EffectEstimate, Estimand, Method, Z_95
from . import _kernels
from .nuisance import NuisanceFit

DEFAULT_FOREST_FEATURES = (
    "title",
    "university_class",
    "department",
    "working_years",
    "productivity_log",
)

#: Predictions whose localized denominator falls below this have no support.
DENOMINATOR_FLOOR = 1e-10


def mtry_candidates(p: int) -> tuple[int, int, int]:
    """The small grid worth sweeping when tuning split-candidate counts."""
    return (ceil(p / 3), ceil(p / 2), p)


def forest_features(
    d: Dataset, fields: Sequence[str] = DEFAULT_FOREST_FEATURES
) -> tuple[np.ndarray, list[str]]:
    """Numeric feature matrix for tree splitting: full dummy set per
    categorical field (trees have no collinearity concerns) plus raw numerics."""
    cols: list[np.ndarray] = []
    labels: list[str] = []
    for f in fields:
        if d.is_categorical(f):
            raw = d.column(f)
            for level in CATEGORICAL_DOMAINS[f]:
                cols.append((raw == level).astype(float))
                labels.append(f"{f}:{level}")
        else:
            vals = d.column(f).astype(float)
            if np.isnan(vals).any():
                raise DegenerateProblemError(
                    f"feature {f!r} contains missing values; impute before growing"
                )
            cols.append(vals)
            labels.append(f)
    return np.column_stack(cols), labels


@dataclass(frozen=True)
class ForestHyper:
    """Ensemble hyperparameters; ``mtry=None`` means ceil(p/3)."""

    num_trees: int = 3000
    min_node_size: int = 5
    subsample_fraction: float = 0.5
    mtry: int | None = None
    honesty_fraction: float = 0.5
    threads: int = 1

    def validate(self) -> None:
        if self.num_trees < 1:
            raise DegenerateProblemError("num_trees must be positive")
        if self.min_node_size < 1:
            raise DegenerateProblemError("min_node_size must be positive")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise DegenerateProblemError("subsample_fraction must lie in (0, 1]")
        if not 0.0 < self.honesty_fraction < 1.0:
            raise DegenerateProblemError("honesty_fraction must lie in (0, 1)")
        if self.threads < 1:
            raise DegenerateProblemError("threads must be positive")


@dataclass
class HonestTree:
    """One grown tree: split arrays plus estimation-leaf statistics.

    ``est_count`` holds, per node, how many estimation units reach its
    subtree; routing detours around empty subtrees so every reachable leaf
    carries estimation data.
    """

    seed: int
    structure_indices: np.ndarray
    estimation_indices: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    est_count: np.ndarray
    leaf_uv: np.ndarray
    leaf_vv: np.ndarray
    leaf_n: np.ndarray
    est_leaf: np.ndarray
    in_subsample: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def split_signature(self) -> tuple:
        """Structure-only fingerprint used by honesty checks."""
        return (
            tuple(self.feature.tolist()),
            tuple(self.threshold.tolist()),
            tuple(self.left.tolist()),
            tuple(self.right.tolist()),
        )


@dataclass
class CausalForest:
    trees: list[HonestTree]
    hyper: ForestHyper
    nuisance: NuisanceFit
    master_seed: int
    features: np.ndarray
    feature_labels: list[str]
    u: np.ndarray = field(repr=False, default=None)
    v: np.ndarray = field(repr=False, default=None)

    @property
    def num_trees(self) -> int:
        return len(self.trees)

    @property
    def n_units(self) -> int:
        return self.features.shape[0]


@dataclass
class CateVector:
    """Per-unit effect estimates; NaN marks points with no defined support."""

    tau_hat: np.ndarray
    undefined: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.tau_hat[~self.undefined]

    @property
    def summary(self) -> dict[str, float]:
        vals = self.defined
        return {
            "mean": float(vals.mean()),
            "sd": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
            "min": float(vals.min()),
            "max": float(vals.max()),
        }

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unit_id", "tau_hat"])
            for i, (t, bad) in enumerate(zip(self.tau_hat, self.undefined)):
                writer.writerow([i, "" if bad else repr(float(t))])


def _tree_seed_ints(master_seed: int, num_trees: int) -> list[tuple[np.random.SeedSequence, int]]:
    root = np.random.SeedSequence(master_seed)
    children = root.spawn(num_trees)
    out = []
    for child in children:
        split_seed = int(child.generate_state(1, np.uint64)[0])
        out.append((child, split_seed))
    return out


def _grow_one(
    child: np.random.SeedSequence,
    split_seed: int,
    x: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    hyper: ForestHyper,
    mtry: int,
) -> HonestTree:
    n = x.shape[0]
    rng = np.random.Generator(np.random.Philox(child))
    s = max(2, int(hyper.subsample_fraction * n))
    subsample = rng.permutation(n)[:s]
    n_struct = min(max(1, int(round(s * hyper.honesty_fraction))), s - 1)
    structure = subsample[:n_struct]
    estimation = subsample[n_struct:]

    feature, threshold, left, right, n_nodes = _kernels.grow_tree(
        np.ascontiguousarray(x[structure]),
        np.ascontiguousarray(u[structure]),
        np.ascontiguousarray(v[structure]),
        hyper.min_node_size,
        mtry,
        np.uint64(split_seed),
    )
    est_leaf = _kernels.route_raw(feature, threshold, left, right, np.ascontiguousarray(x[estimation]))
    leaf_counts = np.bincount(est_leaf, minlength=n_nodes).astype(np.int64)
    est_count = _kernels.subtree_counts(feature, left, right, leaf_counts)
    leaf_uv = np.bincount(est_leaf, weights=u[estimation] * v[estimation], minlength=n_nodes)
    leaf_vv = np.bincount(est_leaf, weights=v[estimation] * v[estimation], minlength=n_nodes)
    in_subsample = np.zeros(n, dtype=np.uint8)
    in_subsample[subsample] = 1
    return HonestTree(
        seed=split_seed,
        structure_indices=structure,
        estimation_indices=estimation,
        feature=feature,
        threshold=threshold,
        left=left,
        right=right,
        est_count=est_count,
        leaf_uv=leaf_uv,
        leaf_vv=leaf_vv,
        leaf_n=leaf_counts,
        est_leaf=est_leaf,
        in_subsample=in_subsample,
    )


def grow_forest(
    d: Dataset,
    nuisance: NuisanceFit,
    hyper: ForestHyper | None = None,
    master_seed: int = 0,
    *,
    feature_fields: Sequence[str] = DEFAULT_FOREST_FEATURES,
    feature_matrix: np.ndarray | None = None,
    feature_labels: Sequence[str] | None = None,
) -> CausalForest:
    """Grow the ensemble. Per-tree seeds derive from ``master_seed`` and the
    tree index, so results are identical for any worker-thread count."""
    hyper = hyper or ForestHyper()
    hyper.validate()
    n = len(d)
    if len(nuisance.m_hat) != n or len(nuisance.e_hat) != n:
        raise DegenerateProblemError("nuisance fit does not match the dataset size")
    if feature_matrix is not None:
        x = np.ascontiguousarray(np.asarray(feature_matrix, dtype=float))
        labels = list(feature_labels) if feature_labels is not None else [
            f"x{j}" for j in range(x.shape[1])
        ]
    else:
        x, labels = forest_features(d, feature_fields)
        x = np.ascontiguousarray(x)
    if x.shape[0] != n:
        raise DegenerateProblemError("feature matrix row count does not match the dataset")

    u = d.outcome_log - nuisance.m_hat
    v = d.treatment - nuisance.e_hat
    p = x.shape[1]
    mtry = hyper.mtry if hyper.mtry is not None else ceil(p / 3)
    mtry = min(max(1, mtry), p)

    seeds = _tree_seed_ints(master_seed, hyper.num_trees)
    if hyper.threads > 1:
        with ThreadPoolExecutor(max_workers=hyper.threads) as pool:
            trees = list(
                pool.map(
                    lambda sc: _grow_one(sc[0], sc[1], x, u, v, hyper, mtry),
                    seeds,
                )
            )
    else:
        trees = [_grow_one(child, split_seed, x, u, v, hyper, mtry) for child, split_seed in seeds]
    return CausalForest(
        trees=trees,
        hyper=hyper,
        nuisance=nuisance,
        master_seed=master_seed,
        features=x,
        feature_labels=labels,
        u=u,
        v=v,
    )


def _flatten(forest: CausalForest):
    sizes = [t.n_nodes for t in forest.trees]
    offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    feature = np.concatenate([t.feature for t in forest.trees])
    threshold = np.concatenate([t.threshold for t in forest.trees])
    left = np.concatenate([t.left for t in forest.trees])
    right = np.concatenate([t.right for t in forest.trees])
    est_count = np.concatenate([t.est_count for t in forest.trees])
    leaf_uv = np.concatenate([t.leaf_uv for t in forest.trees])
    leaf_vv = np.concatenate([t.leaf_vv for t in forest.trees])
    leaf_n = np.concatenate([t.leaf_n for t in forest.trees]).astype(np.float64)
    return feature, threshold, left, right, est_count, leaf_uv, leaf_vv, leaf_n, offsets


def predict_cate(forest: CausalForest, points: np.ndarray | None = None) -> CateVector:
    """Effect estimates at feature rows.

    With ``points=None`` the training units are scored out of bag: each unit
    only uses trees whose subsample excluded it, honoring the leave-own-fold
    spirit of the nuisances.
    """
    oob = points is None
    x = forest.features if oob else np.ascontiguousarray(np.asarray(points, dtype=float))
    if x.ndim != 2 or x.shape[1] != forest.features.shape[1]:
        raise DegenerateProblemError(
            f"points must be 2d with {forest.features.shape[1]} feature columns"
        )
    flat = _flatten(forest)
    n_points = x.shape[0]
    num = np.zeros(n_points)
    den = np.zeros(n_points)
    used = np.zeros(n_points, dtype=np.int64)
    if oob:
        skip = np.stack([t.in_subsample for t in forest.trees])
    else:
        skip = np.zeros((1, 1), dtype=np.uint8)
    _kernels.accumulate_predictions(*flat, x, skip, oob, num, den, used)

    undefined = (used == 0) | (den < DENOMINATOR_FLOOR * np.maximum(used, 1))
    tau = np.full(n_points, np.nan)
    ok = ~undefined
    tau[ok] = num[ok] / den[ok]
    if not ok.any():
        raise DegenerateProblemError("no point has defined support under this forest")
    return CateVector(tau_hat=tau, undefined=undefined)


def forest_weights(
    forest: CausalForest, points: np.ndarray, *, oob_unit: int | None = None
) -> np.ndarray:
    """Explicit forest weights a_i(x): rows sum to 1 over training units.

    Diagnostic path (quadratic in points x units); predictions use leaf sums
    instead, but the two agree by construction.
    """
    x = np.ascontiguousarray(np.asarray(points, dtype=float))
    n_points = x.shape[0]
    weights = np.zeros((n_points, forest.n_units))
    trees_used = np.zeros(n_points)
    for tree in forest.trees:
        leaf_ids = _kernels.route_pruned(
            tree.feature, tree.threshold, tree.left, tree.right, tree.est_count, x
        )
        members: dict[int, np.ndarray] = {}
        for leaf in np.unique(tree.est_leaf):
            members[int(leaf)] = tree.estimation_indices[tree.est_leaf == leaf]
        for i, leaf in enumerate(leaf_ids):
            rows = members[int(leaf)]
            weights[i, rows] += 1.0 / len(rows)
            trees_used[i] += 1.0
    return weights / trees_used[:, None]


def overlap_ate(forest: CausalForest, d: Dataset) -> EffectEstimate:
    """Doubly robust effect for the population where both arms are plausible.

    Per-unit scores combine the forest effect with an inverse-probability
    residual correction; overlap weights e(1-e) concentrate on comparable
    units. The SE is the sampling error of the weighted mean of scores.
    """
    if len(d) != forest.n_units:
        raise DegenerateProblemError("dataset does not match the forest's training data")
    cate = predict_cate(forest)
    tau = cate.tau_hat
    ok = ~cate.undefined
    e = forest.nuisance.e_hat
    m = forest.nuisance.m_hat
    z = d.treatment
    y = d.outcome_log
    resid = y - m - (z - e) * tau
    gamma = tau + (z - e) / (e * (1.0 - e)) * resid
    w = e * (1.0 - e)
    w = np.where(ok, w, 0.0)
    total = w.sum()
    if total <= 1e-12:
        raise DegenerateProblemError("no overlap: all weights are (near) zero")
    est = float(np.sum(w[ok] * gamma[ok]) / total)
    se = float(np.sqrt(np.sum(w[ok] ** 2 * (gamma[ok] - est) ** 2)) / total)
    return EffectEstimate(
        method=Method.FOREST,
        estimand=Estimand.OVERLAP_ATE,
        beta=est,
        se=se,
        ci=(est - Z_95 * se, est + Z_95 * se),
    )


@dataclass(frozen=True)
class GroupEffect:
    group: str
    mean_tau: float
    smoothed_tau: float
    n: int


def _moving_average(values: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    out = np.empty_like(values)
    for i in range(len(values)):
        lo = max(0, i - half)
        hi = min(len(values), i + half + 1)
        out[i] = values[lo:hi].mean()
    return out


def ite_summary(
    c: CateVector,
    by: np.ndarray,
    *,
    bins: int = 20,
    window: int = 3,
) -> tuple[list[GroupEffect], list[str]]:
    """Mean effect by covariate group (or quantile bin, for numerics).

    Returns the ordered series plus notes about any empty groups omitted.
    """
    values = np.asarray(by)
    if len(values) != len(c.tau_hat):
        raise DegenerateProblemError("grouping covariate length does not match the effects")
    ok = ~c.undefined
    notes: list[str] = []
    rows: list[GroupEffect] = []

    if values.dtype.kind in ("U", "S", "O"):
        levels = sorted(set(values.tolist()))
        means = []
        keep_levels = []
        counts = []
        for level in levels:
            mask = ok & (values == level)
            if not mask.any():
                notes.append(f"group {level!r} omitted: no supported units")
                continue
            keep_levels.append(str(level))
            means.append(float(c.tau_hat[mask].mean()))
            counts.append(int(mask.sum()))
        smoothed = _moving_average(np.asarray(means), window) if means else np.array([])
        rows = [
            GroupEffect(lv, m, float(s), n)
            for lv, m, s, n in zip(keep_levels, means, smoothed, counts)
        ]
        return rows, notes

    vals = values.astype(float)[ok]
    taus = c.tau_hat[ok]
    edges = np.quantile(vals, np.linspace(0.0, 1.0, bins + 1))
    edges = np.unique(edges)
    if len(edges) < 2:
        notes.append("grouping covariate is constant; single group emitted")
        rows = [GroupEffect(f"{edges[0]:g}", float(taus.mean()), float(taus.mean()), len(taus))]
        return rows, notes
    which = np.clip(np.searchsorted(edges, vals, side="right") - 1, 0, len(edges) - 2)
    means = []
    labels = []
    counts = []
    for b in range(len(edges) - 1):
        mask = which == b
        if not mask.any():
            notes.append(f"bin {b} omitted: empty")
            continue
        labels.append(f"{np.mean(vals[mask]):.6g}")
        means.append(float(taus[mask].mean()))
        counts.append(int(mask.sum()))
    smoothed = _moving_average(np.asarray(means), window)
    rows = [
        GroupEffect(lb, m, float(s), n) for lb, m, s, n in zip(labels, means, smoothed, counts)
    ]
    return rows, notes


def write_ite_by_group_csv(rows: Sequence[GroupEffect], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "mean_tau", "smoothed_tau", "n"])
        for r in rows:
            writer.writerow([r.group, repr(r.mean_tau), repr(r.smoothed_tau), r.n])
