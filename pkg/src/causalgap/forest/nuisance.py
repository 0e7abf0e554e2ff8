"""Cross-fitted nuisance models for the orthogonalized forest.

Each unit's conditional-outcome and treatment-probability estimates come from
models fit on the folds that exclude it. The learners are the package's own
least-squares and logistic engines, so the whole nuisance stage is
deterministic and directly checkable against refits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data_model import Dataset, DesignMatrix, build_design, interaction_spec
from ..errors import DegenerateProblemError
from ..estimation import fit_logistic, fit_ols
from ..propensity import default_ps_spec

E_HAT_CLAMP = 1e-3


@dataclass
class NuisanceFit:
    """Out-of-fold outcome means and treatment scores with fold bookkeeping."""

    m_hat: np.ndarray
    e_hat: np.ndarray
    fold_assignment: np.ndarray
    fold_count: int

    def fold_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignment == fold)


def stratified_folds(treatment: np.ndarray, folds: int) -> np.ndarray:
    """Round-robin fold ids within each arm, in dataset order."""
    z = np.asarray(treatment)
    assignment = np.empty(len(z), dtype=np.int64)
    for arm in (0, 1):
        rows = np.flatnonzero(z == arm)
        assignment[rows] = np.arange(len(rows)) % folds
    return assignment


def fit_nuisances(
    d: Dataset,
    outcome_design: DesignMatrix | None = None,
    propensity_design: DesignMatrix | None = None,
    folds: int = 5,
) -> NuisanceFit:
    """Cross-fitted outcome and treatment-score predictions.

    The outcome design never includes the treatment column; by default it
    carries the profile-presence flag while the propensity design omits it.
    """
    if folds < 2:
        raise DegenerateProblemError(f"need at least 2 folds, got {folds}")
    d.require_estimable()
    if outcome_design is None:
        outcome_design = build_design(d, interaction_spec(include_profile_flag=True))
    if propensity_design is None:
        propensity_design = build_design(d, default_ps_spec())
    if "treatment" in [c.label for c in outcome_design.columns]:
        raise DegenerateProblemError("outcome nuisance design must exclude the treatment column")
    n = len(d)
    if outcome_design.shape[0] != n or propensity_design.shape[0] != n:
        raise DegenerateProblemError("design row count does not match the dataset")

    z = d.treatment
    y = d.outcome_log
    assignment = stratified_folds(z, folds)
    for k in range(folds):
        held = assignment == k
        if not held.any():
            raise DegenerateProblemError(f"fold {k} is empty; reduce fold count")
        zk = z[held]
        if not (np.any(zk == 1) and np.any(zk == 0)):
            raise DegenerateProblemError(f"fold {k} has a single treatment arm")

    m_hat = np.empty(n)
    e_hat = np.empty(n)
    for k in range(folds):
        held = np.flatnonzero(assignment == k)
        train = np.flatnonzero(assignment != k)
        ols = fit_ols(outcome_design.rows(train), y[train])
        m_hat[held] = ols.predict(outcome_design.values[held])
        logit = fit_logistic(propensity_design.rows(train), z[train])
        e_hat[held] = logit.predict_probabilities(propensity_design.values[held])

    e_hat = np.clip(e_hat, E_HAT_CLAMP, 1.0 - E_HAT_CLAMP)
    return NuisanceFit(m_hat=m_hat, e_hat=e_hat, fold_assignment=assignment, fold_count=folds)
