"""Honest orthogonalized causal forest: nuisances, growth, prediction."""

from .forest import (
    DEFAULT_FOREST_FEATURES,
    CateVector,
    CausalForest,
    ForestHyper,
    GroupEffect,
    HonestTree,
    forest_features,
    forest_weights,
    grow_forest,
    ite_summary,
    mtry_candidates,
    overlap_ate,
    predict_cate,
    write_ite_by_group_csv,
)
from .nuisance import NuisanceFit, fit_nuisances, stratified_folds

__all__ = [
    "DEFAULT_FOREST_FEATURES",
    "CateVector",
    "CausalForest",
    "ForestHyper",
    "GroupEffect",
    "HonestTree",
    "NuisanceFit",
    "fit_nuisances",
    "forest_features",
    "forest_weights",
    "grow_forest",
    "ite_summary",
    "mtry_candidates",
    "overlap_ate",
    "predict_cate",
    "stratified_folds",
    "write_ite_by_group_csv",
]
