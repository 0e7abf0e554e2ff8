"""Standardized mean differences before/after adjustment, and love-plot data."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_model import CATEGORICAL_DOMAINS, Dataset
from .errors import DegenerateProblemError
from .estimators import MatchResult

SMD_THRESHOLD = 0.1

#: (label, source field, level or None) for the default diagnostic covariates.
DEFAULT_COVARIATES: tuple[tuple[str, str, str | None], ...] = tuple(
    [(f"title:{lv}", "title", lv) for lv in CATEGORICAL_DOMAINS["title"]]
    + [("working_years", "working_years", None)]
    + [
        (f"university_class:{lv}", "university_class", lv)
        for lv in CATEGORICAL_DOMAINS["university_class"]
    ]
    + [(f"department:{lv}", "department", lv) for lv in CATEGORICAL_DOMAINS["department"]]
    + [("productivity_log", "productivity_log", None)]
)


def _weighted_mean(v: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(w * v) / np.sum(w))


def _weighted_var(v: np.ndarray, w: np.ndarray) -> float:
    # Frequency-weight semantics: a control matched k times counts k times.
    total = np.sum(w)
    if total <= 1.0:
        return 0.0
    m = _weighted_mean(v, w)
    return float(np.sum(w * (v - m) ** 2) / (total - 1.0))


def smd(
    values: np.ndarray,
    treat: np.ndarray,
    w: np.ndarray | None = None,
    kind: str = "continuous",
) -> float:
    """Standardized mean difference between arms, optionally weighted.

    Continuous covariates are scaled by the pooled-arm standard deviation;
    binary ones by the pooled Bernoulli spread. A zero pooled variance with
    equal means returns 0; with unequal means it is a degenerate scale.
    """
    values = np.asarray(values, dtype=float)
    z = np.asarray(treat, dtype=float)
    if w is None:
        w = np.ones(len(values))
    w = np.asarray(w, dtype=float)
    wt, wc = w[z == 1], w[z == 0]
    if wt.sum() <= 0 or wc.sum() <= 0:
        raise DegenerateProblemError("both arms need positive total weight")
    vt, vc = values[z == 1], values[z == 0]
    mt, mc = _weighted_mean(vt, wt), _weighted_mean(vc, wc)
    if kind == "binary":
        pooled = (mt * (1.0 - mt) + mc * (1.0 - mc)) / 2.0
    elif kind == "continuous":
        pooled = (_weighted_var(vt, wt) + _weighted_var(vc, wc)) / 2.0
    else:
        raise DegenerateProblemError(f"kind must be 'continuous' or 'binary', got {kind!r}")
    if pooled <= 0.0:
        if mt == mc:
            return 0.0
        raise DegenerateProblemError("zero pooled variance with unequal means")
    return float((mt - mc) / np.sqrt(pooled))


@dataclass(frozen=True)
class BalanceRow:
    label: str
    kind: str
    smd_before: float
    smd_after: float


@dataclass
class BalanceTable:
    rows: list[BalanceRow]

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.rows]

    def max_abs_before(self) -> float:
        return max(abs(r.smd_before) for r in self.rows)

    def max_abs_after(self) -> float:
        return max(abs(r.smd_after) for r in self.rows)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["covariate", "kind", "smd_before", "smd_after"])
            for r in self.rows:
                writer.writerow([r.label, r.kind, repr(r.smd_before), repr(r.smd_after)])


def _covariate_vector(d: Dataset, field: str, level: str | None) -> np.ndarray:
    col = d.column(field)
    if level is None:
        return col.astype(float)
    return (col == level).astype(float)


def balance_table(
    d: Dataset,
    treat: np.ndarray | None = None,
    adjustment: MatchResult | np.ndarray | None = None,
    covariates: Sequence[tuple[str, str, str | None]] = DEFAULT_COVARIATES,
) -> BalanceTable:
    """SMD per diagnostic covariate on the raw and on the adjusted sample.

    ``adjustment`` may be a :class:`MatchResult` (matched-with-multiplicity
    sample), a weight vector (weighted full sample), or None (after equals
    before).
    """
    z = d.treatment if treat is None else np.asarray(treat, dtype=float)

    if adjustment is None:
        rows_after = None
        w_after = None
    elif isinstance(adjustment, MatchResult):
        treated_rows = [t for t, _ in adjustment.pairs]
        control_rows = sorted(adjustment.control_multiplicity)
        rows_after = np.array(treated_rows + control_rows, dtype=int)
        w_after = np.array(
            [1.0] * len(treated_rows)
            + [float(adjustment.control_multiplicity[c]) for c in control_rows]
        )
    else:
        w_after = np.asarray(adjustment, dtype=float)
        if w_after.shape != (len(d),):
            raise DegenerateProblemError(
                f"weight vector length {w_after.shape} does not match dataset size {len(d)}"
            )
        rows_after = np.arange(len(d))

    rows: list[BalanceRow] = []
    for label, field, level in covariates:
        kind = "binary" if level is not None or field in ("treatment", "has_profile") else "continuous"
        vec = _covariate_vector(d, field, level)
        before = smd(vec, z, None, kind)
        if rows_after is None:
            after = before
        else:
            after = smd(vec[rows_after], z[rows_after], w_after, kind)
        rows.append(BalanceRow(label=label, kind=kind, smd_before=before, smd_after=after))
    return BalanceTable(rows=rows)


@dataclass(frozen=True)
class LovePlotRow:
    label: str
    smd_before: float
    smd_after: float
    threshold: float


def love_plot_data(t: BalanceTable, threshold: float = SMD_THRESHOLD) -> list[LovePlotRow]:
    """Balance rows ordered for plotting: largest pre-adjustment imbalance first."""
    if not t.rows:
        raise DegenerateProblemError("balance table is empty")
    ordered = sorted(t.rows, key=lambda r: (-abs(r.smd_before), r.label))
    return [
        LovePlotRow(r.label, r.smd_before, r.smd_after, threshold) for r in ordered
    ]


def write_love_plot_csv(rows: Sequence[LovePlotRow], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "smd_before", "smd_after", "threshold"])
        for r in rows:
            writer.writerow([r.label, repr(r.smd_before), repr(r.smd_after), repr(r.threshold)])
