"""Propensity-score specification, fitting, and positivity diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import Dataset, DesignSpec, build_design, interaction_spec
from .errors import DegenerateProblemError
from .estimation import LogisticFit, fit_logistic

DEFAULT_OVERLAP_BAND = (0.05, 0.95)
DEFAULT_FAIL_FRACTION = 0.05
HISTOGRAM_BINS = 40


def default_ps_spec() -> DesignSpec:
    """The treatment-score design: class-by-department productivity slopes
    plus per-rank experience slopes, intercept included.

    The profile-presence flag is deliberately not part of this design; it
    belongs in outcome models only.
    """
    return interaction_spec(include_profile_flag=False)


@dataclass
class OverlapReport:
    """Per-arm score histograms plus counts outside the positivity band."""

    bin_edges: np.ndarray
    counts_treated: np.ndarray
    counts_control: np.ndarray
    min_treated: float
    max_treated: float
    min_control: float
    max_control: float
    band: tuple[float, float]
    outside_treated: int
    outside_control: int
    n_treated: int
    n_control: int
    passed: bool

    @property
    def outside_total(self) -> int:
        return self.outside_treated + self.outside_control

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_lo", "bin_hi", "count_treated", "count_control"])
            for lo, hi, ct, cc in zip(
                self.bin_edges[:-1], self.bin_edges[1:], self.counts_treated, self.counts_control
            ):
                writer.writerow([repr(float(lo)), repr(float(hi)), int(ct), int(cc)])


@dataclass
class PropensityFit:
    """Fitted treatment scores with their log-odds transform."""

    model: LogisticFit
    scores: np.ndarray
    logit_scores: np.ndarray
    treatment: np.ndarray
    spec_label: str
    overlap: OverlapReport | None = None


def estimate_propensity(d: Dataset, spec: DesignSpec | None = None) -> PropensityFit:
    """Fit the treatment score model and attach a default overlap report."""
    d.require_estimable()
    if spec is None:
        spec = default_ps_spec()
    design = build_design(d, spec)
    model = fit_logistic(design, d.treatment)
    scores = model.fitted_probabilities
    logit_scores = np.log(scores / (1.0 - scores))
    fit = PropensityFit(
        model=model,
        scores=scores,
        logit_scores=logit_scores,
        treatment=d.treatment,
        spec_label=" + ".join("*".join(t.fields) for t in spec.terms) or "intercept",
    )
    fit.overlap = positivity_check(fit, DEFAULT_OVERLAP_BAND)
    return fit


def positivity_check(
    p: PropensityFit,
    band: tuple[float, float] = DEFAULT_OVERLAP_BAND,
    fail_fraction: float = DEFAULT_FAIL_FRACTION,
) -> OverlapReport:
    """Count units whose score falls outside the positivity band, per arm."""
    lo, hi = band
    if not (0.0 < lo < hi < 1.0):
        raise DegenerateProblemError(f"band must satisfy 0 < lo < hi < 1, got {band}")
    z = np.asarray(p.treatment, dtype=float)
    scores = p.scores
    treated = scores[z == 1]
    control = scores[z == 0]
    edges = np.linspace(0.0, 1.0, HISTOGRAM_BINS + 1)
    counts_t, _ = np.histogram(treated, bins=edges)
    counts_c, _ = np.histogram(control, bins=edges)
    out_t = int(np.sum((treated < lo) | (treated > hi)))
    out_c = int(np.sum((control < lo) | (control > hi)))
    n = len(scores)
    passed = (out_t + out_c) / n <= fail_fraction
    return OverlapReport(
        bin_edges=edges,
        counts_treated=counts_t,
        counts_control=counts_c,
        min_treated=float(treated.min()),
        max_treated=float(treated.max()),
        min_control=float(control.min()),
        max_control=float(control.max()),
        band=(lo, hi),
        outside_treated=out_t,
        outside_control=out_c,
        n_treated=len(treated),
        n_control=len(control),
        passed=passed,
    )
