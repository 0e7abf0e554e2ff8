"""Result assembly: percent-gap conversion and the method-comparison table."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_model import Dataset, DesignSpec, Term, build_design, interaction_spec, main_effects_spec
from .errors import DegenerateProblemError
from .estimation import fit_ols
from .estimators import EffectEstimate, Estimand, Method, _regression_estimate

#: Table row order for the method comparison.
METHOD_ORDER = (
    Method.OLS,
    Method.OLS_INTERACT,
    Method.PSM,
    Method.IPTW,
    Method.PS_ADJUST,
    Method.FOREST,
)


def beta_to_gap_percent(beta: float) -> float:
    """Convert a log10-outcome coefficient into the percent shortfall it implies."""
    return 100.0 * (1.0 - 10.0**beta)


def gap_ci_percent(ci: tuple[float, float]) -> tuple[float, float]:
    """Map a beta interval onto the (ordered) percent-gap interval.

    The conversion is decreasing in beta, so the endpoints swap roles.
    """
    lo, hi = ci
    a, b = beta_to_gap_percent(hi), beta_to_gap_percent(lo)
    return (a, b) if a <= b else (b, a)


def unadjusted_gap(mean_control: float, mean_treated: float) -> float:
    """Raw percent shortfall of the treated arm's average outcome."""
    if mean_control <= 0:
        raise DegenerateProblemError(f"control mean must be positive, got {mean_control}")
    return 100.0 * (mean_control - mean_treated) / mean_control


def ols_effect(d: Dataset, interact: bool = False, include_profile_flag: bool = False) -> EffectEstimate:
    """Treatment coefficient from the additive or interaction outcome regression."""
    spec = interaction_spec(include_profile_flag) if interact else main_effects_spec(include_profile_flag)
    full = DesignSpec(terms=(Term(("treatment",)), *spec.terms), intercept=True)
    design = build_design(d, full)
    fit = fit_ols(design, d.outcome_log)
    j = design.column_index("treatment")
    beta = float(fit.coefficients[j])
    se = float(fit.standard_errors[j])
    if np.isnan(beta):
        raise DegenerateProblemError("treatment column was pruned from the outcome design")
    method = Method.OLS_INTERACT if interact else Method.OLS
    return _regression_estimate(method, Estimand.ATE, beta, se)


@dataclass(frozen=True)
class SummaryRow:
    """One comparison-table row; percent fields are always derived from beta."""

    method: str
    estimand: str
    beta: float | None
    ci: tuple[float, float] | None
    unadjusted_percent: float | None = None

    @property
    def gap_percent(self) -> float:
        if self.beta is None:
            return float(self.unadjusted_percent)
        return beta_to_gap_percent(self.beta)

    @property
    def gap_ci(self) -> tuple[float, float] | None:
        if self.ci is None:
            return None
        return gap_ci_percent(self.ci)


@dataclass
class SummaryTable:
    rows: list[SummaryRow]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "method",
                    "estimand",
                    "beta",
                    "ci_lo",
                    "ci_hi",
                    "gap_percent",
                    "gap_ci_lo_percent",
                    "gap_ci_hi_percent",
                ]
            )
            for r in self.rows:
                gap_ci = r.gap_ci
                writer.writerow(
                    [
                        r.method,
                        r.estimand,
                        "" if r.beta is None else repr(r.beta),
                        "" if r.ci is None else repr(r.ci[0]),
                        "" if r.ci is None else repr(r.ci[1]),
                        repr(r.gap_percent),
                        "" if gap_ci is None else repr(gap_ci[0]),
                        "" if gap_ci is None else repr(gap_ci[1]),
                    ]
                )

    def format(self) -> str:
        """Human-readable table, percents to two decimals."""
        lines = [
            f"{'method':<14} {'estimand':<12} {'beta':>9} {'95% CI':>20} {'gap %':>7} {'gap 95% CI':>16}"
        ]
        for r in self.rows:
            if r.beta is None:
                beta_s, ci_s = "-", "-"
            else:
                beta_s = f"{r.beta:.4f}"
                ci_s = f"({r.ci[0]:.4f}, {r.ci[1]:.4f})"
            gap_s = f"{r.gap_percent:.2f}"
            gci = r.gap_ci
            gci_s = "-" if gci is None else f"({gci[0]:.2f}, {gci[1]:.2f})"
            lines.append(
                f"{r.method:<14} {r.estimand:<12} {beta_s:>9} {ci_s:>20} {gap_s:>7} {gci_s:>16}"
            )
        return "\n".join(lines) + "\n"


def summary_table(
    d: Dataset,
    estimates: Sequence[EffectEstimate],
) -> SummaryTable:
    """Assemble the comparison table: unadjusted row first, then methods in
    canonical order (missing methods are skipped)."""
    z = d.treatment
    raw = d.column("outcome_raw")
    mean_t = float(raw[z == 1].mean())
    mean_c = float(raw[z == 0].mean())
    rows = [
        SummaryRow(
            method="UNADJUSTED",
            estimand="",
            beta=None,
            ci=None,
            unadjusted_percent=unadjusted_gap(mean_c, mean_t),
        )
    ]
    by_method = {e.method: e for e in estimates}
    for method in METHOD_ORDER:
        if method not in by_method:
            continue
        e = by_method[method]
        rows.append(
            SummaryRow(method=method.value, estimand=e.estimand.value, beta=e.beta, ci=e.ci)
        )
    return SummaryTable(rows=rows)
