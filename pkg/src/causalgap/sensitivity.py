"""Omitted-variable-bias sensitivity: partial R², robustness values, contours.

The framing: an unobserved confounder with partial R² of ``r2_zu`` against
treatment and ``r2_yu`` against the outcome can move the estimate by at most
``se * sqrt(dof) * sqrt(r2_yu * r2_zu / (1 - r2_zu))``. The robustness value
is the equal-strength point at which that bound exactly cancels the estimate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .data_model import DesignMatrix
from .errors import DegenerateProblemError
from .estimation import OlsFit, fit_ols


def partial_r2(t_value: float, dof: int) -> float:
    """Share of residual variance a regressor explains, from its t statistic."""
    if dof < 1:
        raise DegenerateProblemError(f"dof must be >= 1, got {dof}")
    t2 = float(t_value) ** 2
    return t2 / (t2 + dof)


def robustness_value(
    t_value: float, dof: int, q: float = 1.0, alpha: float | None = None
) -> float:
    """Confounder strength (as partial R² with both treatment and outcome)
    needed to reduce the estimate by the fraction ``q``.

    With ``alpha`` given, the target is statistical insignificance at that
    level instead of a ``q``-fraction reduction of the point estimate.
    """
    if dof < 1:
        raise DegenerateProblemError(f"dof must be >= 1, got {dof}")
    f = abs(float(t_value)) / np.sqrt(dof)
    fq = q * f
    if alpha is not None:
        if dof < 2:
            raise DegenerateProblemError("dof must be >= 2 when alpha is given")
        t_crit = stats.t.ppf(1.0 - alpha / 2.0, dof - 1)
        fq = max(0.0, fq - t_crit / np.sqrt(dof - 1))
    return float(0.5 * (np.sqrt(fq**4 + 4.0 * fq**2) - fq**2))


def bias_bound(se: float, dof: int, r2_zu: float, r2_yu: float) -> float:
    """Largest possible estimate shift for a confounder of the given strengths."""
    return float(se * np.sqrt(dof) * np.sqrt(r2_yu * r2_zu / (1.0 - r2_zu)))


@dataclass
class ContourGrid:
    """Adjusted estimates over a grid of confounder strengths."""

    r2_zu: np.ndarray
    r2_yu: np.ndarray
    adjusted: np.ndarray
    zero_contour: list[tuple[float, float]]

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r2_zu", "r2_yu", "adjusted_estimate"])
            for i, rz in enumerate(self.r2_zu):
                for j, ry in enumerate(self.r2_yu):
                    writer.writerow([repr(float(rz)), repr(float(ry)), repr(float(self.adjusted[i, j]))])


def contour_data(estimate: float, se: float, dof: int, grid: int = 41) -> ContourGrid:
    """Worst-case adjusted estimates over [0, 0.5)² confounder strengths.

    The zero contour lists, for each treatment-side strength, the
    outcome-side strength that drives the adjusted estimate exactly to zero
    (where one exists inside the grid range).
    """
    if grid < 2:
        raise DegenerateProblemError("grid resolution must be at least 2")
    axis = np.linspace(0.0, 0.5, grid, endpoint=False)
    adjusted = np.empty((grid, grid))
    for i, rz in enumerate(axis):
        for j, ry in enumerate(axis):
            b = bias_bound(se, dof, rz, ry)
            adjusted[i, j] = estimate - np.sign(estimate) * b
    zero: list[tuple[float, float]] = []
    for rz in axis[1:]:
        denom = se**2 * dof * rz
        ry = estimate**2 * (1.0 - rz) / denom
        if 0.0 <= ry < 0.5:
            zero.append((float(rz), float(ry)))
    return ContourGrid(r2_zu=axis, r2_yu=axis.copy(), adjusted=adjusted, zero_contour=zero)


@dataclass(frozen=True)
class BenchmarkRow:
    label: str
    r2_with_treatment: float
    r2_with_outcome: float


@dataclass
class SensitivityReport:
    """Robustness summary for one regression's treatment coefficient."""

    estimate: float
    se: float
    t_value: float
    dof: int
    alpha: float
    partial_r2_treatment: float
    rv_point: float
    rv_alpha: float
    benchmarks: list[BenchmarkRow]

    def format(self) -> str:
        lines = [
            f"estimate: {self.estimate:.6g}",
            f"se: {self.se:.6g}",
            f"t_value: {self.t_value:.6g}",
            f"dof: {self.dof}",
            f"partial_r2_treatment: {self.partial_r2_treatment:.6g}",
            f"robustness_value_point: {self.rv_point:.6g}",
            f"robustness_value_alpha_{self.alpha:g}: {self.rv_alpha:.6g}",
        ]
        for b in self.benchmarks:
            lines.append(
                f"benchmark {b.label}: r2_treatment={b.r2_with_treatment:.6g} "
                f"r2_outcome={b.r2_with_outcome:.6g}"
            )
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.format(), encoding="utf-8")


def sensitivity_report(
    outcome_fit: OlsFit,
    design: DesignMatrix,
    y: np.ndarray,
    treatment_label: str = "treatment",
    alpha: float = 0.05,
    benchmark_labels: tuple[str, ...] = ("working_years", "productivity_log"),
) -> SensitivityReport:
    """Assemble the robustness report for a fitted outcome regression.

    Benchmark strengths come from each named covariate's own t statistic in
    the outcome fit, and from an auxiliary regression of the treatment column
    on the rest of the design.
    """
    t = outcome_fit.t_value(treatment_label)
    dof = outcome_fit.residual_df
    benchmarks: list[BenchmarkRow] = []
    available = set(outcome_fit.labels)
    wanted = [lab for lab in benchmark_labels if lab in available]
    if wanted:
        j_treat = design.column_index(treatment_label)
        others = [j for j in range(design.shape[1]) if j != j_treat]
        aux_design = DesignMatrix(
            columns=[design.columns[j] for j in others],
            values=design.values[:, others].copy(),
            intercept=design.intercept,
        )
        aux_fit = fit_ols(aux_design, design.values[:, j_treat])
        for lab in wanted:
            t_out = outcome_fit.t_value(lab)
            t_aux = aux_fit.t_value(lab)
            benchmarks.append(
                BenchmarkRow(
                    label=lab,
                    r2_with_treatment=partial_r2(t_aux, aux_fit.residual_df),
                    r2_with_outcome=partial_r2(t_out, dof),
                )
            )
    return SensitivityReport(
        estimate=outcome_fit.coefficient(treatment_label),
        se=outcome_fit.se(treatment_label),
        t_value=t,
        dof=dof,
        alpha=alpha,
        partial_r2_treatment=partial_r2(t, dof),
        rv_point=robustness_value(t, dof),
        rv_alpha=robustness_value(t, dof, q=1.0, alpha=alpha),
        benchmarks=benchmarks,
    )
