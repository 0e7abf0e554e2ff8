"""Propensity-score effect estimators: matching, weighting, and score adjustment.

All three share one fitted propensity model and one outcome-adjustment design;
they differ in how units are retained or reweighted, and therefore in the
population their estimate describes (treated units for matching, the full
population for weighting and score adjustment).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import Dataset, DesignMatrix, DesignSpec, ColumnInfo, Term, build_design
from .errors import DegenerateProblemError
from .estimation import cluster_robust_cov, fit_ols
from .propensity import PropensityFit, default_ps_spec

Z_95 = 1.96


class Method(enum.Enum):
    OLS = "OLS"
    OLS_INTERACT = "OLS_INTERACT"
    PSM = "PSM"
    IPTW = "IPTW"
    PS_ADJUST = "PS_ADJUST"
    FOREST = "FOREST"


class Estimand(enum.Enum):
    ATT = "ATT"
    ATE = "ATE"
    OVERLAP_ATE = "OVERLAP_ATE"


@dataclass(frozen=True)
class EffectEstimate:
    """Point estimate on the log10-outcome scale with a 95% interval.

    The percent gap is always derived from ``beta``, never stored: a negative
    beta of -0.03 means treated outcomes are 10**-0.03 of control outcomes,
    a 6.7% shortfall.
    """

    method: Method
    estimand: Estimand
    beta: float
    se: float
    ci: tuple[float, float]

    @property
    def gap_percent(self) -> float:
        return 100.0 * (1.0 - 10.0**self.beta)

    @property
    def gap_ci_percent(self) -> tuple[float, float]:
        # 1 - 10**beta is decreasing in beta, so the interval endpoints swap.
        lo, hi = self.ci
        return (100.0 * (1.0 - 10.0**hi), 100.0 * (1.0 - 10.0**lo))


def _regression_estimate(method: Method, estimand: Estimand, beta: float, se: float) -> EffectEstimate:
    return EffectEstimate(
        method=method,
        estimand=estimand,
        beta=beta,
        se=se,
        ci=(beta - Z_95 * se, beta + Z_95 * se),
    )


@dataclass
class MatchResult:
    """Nearest-neighbor pairs on the logit score, matched with replacement."""

    pairs: list[tuple[int, int]]
    control_multiplicity: dict[int, int]
    unmatched_treated: int
    unmatched_control: int
    caliper_width: float
    logit_distances: list[float]

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["treated_id", "control_id", "logit_distance"])
            for (t, c), dist in zip(self.pairs, self.logit_distances):
                writer.writerow([t, c, repr(float(dist))])


def match_nn(
    p: PropensityFit,
    caliper_mult: float = 0.2,
    *,
    caliper_width: float | None = None,
) -> MatchResult:
    """1:1 nearest-neighbor matching with replacement on the logit score.

    Each treated unit, taken in dataset order, is paired with the control
    whose logit score is closest, provided the distance is within the caliper
    (``caliper_mult`` times the full-sample logit SD unless an explicit width
    is given). Distance ties go to the lower control index.
    """
    z = np.asarray(p.treatment)
    logit = np.asarray(p.logit_scores, dtype=float)
    treated_idx = np.flatnonzero(z == 1)
    control_idx = np.flatnonzero(z == 0)
    if len(treated_idx) == 0 or len(control_idx) == 0:
        raise DegenerateProblemError("both arms must be nonempty for matching")
    if caliper_width is None:
        sd = float(np.std(logit, ddof=1))
        if sd == 0.0 or not np.isfinite(sd):
            raise DegenerateProblemError(
                "logit scores have zero spread; propensity model is degenerate"
            )
        caliper_width = caliper_mult * sd

    cvals = logit[control_idx]
    order = np.lexsort((control_idx, cvals))
    svals = cvals[order]
    sidx = control_idx[order]
    m = len(svals)

    pairs: list[tuple[int, int]] = []
    distances: list[float] = []
    multiplicity: dict[int, int] = {}
    unmatched = 0
    for t in treated_idx:
        tv = logit[t]
        pos = int(np.searchsorted(svals, tv, side="left"))
        best: tuple[float, int] | None = None
        if pos > 0:
            lv = svals[pos - 1]
            first = int(np.searchsorted(svals, lv, side="left"))
            best = (tv - lv, int(sidx[first]))
        if pos < m:
            rv = svals[pos]
            first = int(np.searchsorted(svals, rv, side="left"))
            cand = (rv - tv, int(sidx[first]))
            if best is None or cand < best:
                best = cand
        dist, chosen = best
        if dist > caliper_width:
            unmatched += 1
            continue
        pairs.append((int(t), chosen))
        distances.append(float(dist))
        multiplicity[chosen] = multiplicity.get(chosen, 0) + 1
    return MatchResult(
        pairs=pairs,
        control_multiplicity=multiplicity,
        unmatched_treated=unmatched,
        unmatched_control=len(control_idx) - len(multiplicity),
        caliper_width=float(caliper_width),
        logit_distances=distances,
    )


def _outcome_design(d: Dataset, spec: DesignSpec) -> DesignMatrix:
    full = DesignSpec(terms=(Term(("treatment",)), *spec.terms), intercept=spec.intercept)
    return build_design(d, full)


def _treatment_inference(fit, design: DesignMatrix) -> tuple[float, float]:
    j = design.column_index("treatment")
    beta = float(fit.coefficients[j])
    se = float(fit.standard_errors[j])
    if np.isnan(beta):
        raise DegenerateProblemError("treatment column was pruned from the outcome design")
    return beta, se


def att_psm(
    d: Dataset,
    m: MatchResult,
    outcome_spec: DesignSpec | None = None,
    *,
    pair_clustered: bool = False,
) -> EffectEstimate:
    """Regression-adjusted matched estimate: effect on the treated.

    The matched sample holds each paired treated unit once (weight 1) and each
    distinct matched control once, weighted by how many times it was reused.
    ``pair_clustered`` swaps the classical SE for one clustered on match pairs.
    """
    if m.n_pairs == 0:
        raise DegenerateProblemError("match result contains no pairs")
    if outcome_spec is None:
        outcome_spec = default_ps_spec()

    treated_rows = [t for t, _ in m.pairs]
    control_rows = sorted(m.control_multiplicity)
    rows = treated_rows + control_rows
    weights = np.array(
        [1.0] * len(treated_rows) + [float(m.control_multiplicity[c]) for c in control_rows]
    )
    sub = d.subset(rows)
    design = _outcome_design(sub, outcome_spec)
    fit = fit_ols(design, sub.outcome_log, weights)
    beta, se = _treatment_inference(fit, design)

    if pair_clustered:
        # Long form: one row per pair member, clustered on the pair id.
        long_rows = [t for t, _ in m.pairs] + [c for _, c in m.pairs]
        cluster_ids = np.concatenate([np.arange(m.n_pairs), np.arange(m.n_pairs)])
        long = d.subset(long_rows)
        long_design = _outcome_design(long, outcome_spec)
        long_fit = fit_ols(long_design, long.outcome_log)
        cov = cluster_robust_cov(long_design, long_fit, cluster_ids)
        j = long_design.column_index("treatment")
        se = float(np.sqrt(cov[j, j]))

    return _regression_estimate(Method.PSM, Estimand.ATT, beta, se)


def iptw_weights(p: PropensityFit, truncate_at: float | None = None) -> np.ndarray:
    """Inverse-probability weights, optionally truncated at symmetric quantiles."""
    z = np.asarray(p.treatment, dtype=float)
    e = p.scores
    w = z / e + (1.0 - z) / (1.0 - e)
    if truncate_at is not None:
        if not 0.5 < truncate_at < 1.0:
            raise DegenerateProblemError(
                f"truncation quantile must lie in (0.5, 1), got {truncate_at}"
            )
        lo = float(np.quantile(w, 1.0 - truncate_at))
        hi = float(np.quantile(w, truncate_at))
        w = np.clip(w, lo, hi)
    return w


def ate_iptw(
    d: Dataset,
    p: PropensityFit,
    outcome_spec: DesignSpec | None = None,
    truncate_at: float | None = None,
) -> EffectEstimate:
    """Regression-adjusted inverse-probability-weighted estimate over everyone."""
    if outcome_spec is None:
        outcome_spec = default_ps_spec()
    w = iptw_weights(p, truncate_at)
    design = _outcome_design(d, outcome_spec)
    fit = fit_ols(design, d.outcome_log, w)
    beta, se = _treatment_inference(fit, design)
    return _regression_estimate(Method.IPTW, Estimand.ATE, beta, se)


def ate_ps_adjust(d: Dataset, p: PropensityFit) -> EffectEstimate:
    """Outcome regression on treatment and the fitted score alone."""
    n = len(d)
    values = np.column_stack([np.ones(n), d.treatment, p.scores])
    design = DesignMatrix(
        columns=[
            ColumnInfo("intercept", ()),
            ColumnInfo("treatment", (("treatment", None),)),
            ColumnInfo("propensity_score", (("propensity_score", None),)),
        ],
        values=values,
    )
    fit = fit_ols(design, d.outcome_log)
    beta, se = _treatment_inference(fit, design)
    return _regression_estimate(Method.PS_ADJUST, Estimand.ATE, beta, se)
