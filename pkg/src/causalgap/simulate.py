"""Seeded synthetic data with known ground truth for estimator validation.

Covariates drive both treatment assignment (through a logit-scale score) and
the baseline outcome, so estimators face real confounding; the generating
truth (per-unit effects and the implied population summaries) is returned
alongside the data.

Randomness uses counter-based Philox streams split by purpose (covariates,
treatment, noise), so changing how one block draws does not reshuffle the
others.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .data_model import DEPARTMENTS, TITLES, UNIVERSITY_CLASSES, Dataset, UnitRecord
from .errors import DegenerateProblemError

_STREAMS = ("covariates", "treatment", "noise")


def _expit(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


EffectFunction = Callable[[Mapping[str, object]], float]


@dataclass(frozen=True)
class DgpSpec:
    """Parameters of the generating process.

    The treatment score is linear in per-rank experience and per
    class-by-department productivity slopes; the baseline outcome is linear
    in the true treatment probability, so score-based adjustment methods are
    exactly specified while naive comparisons stay biased.
    """

    n: int
    seed: int
    title_probs: tuple[float, ...] = (0.351, 0.310, 0.339)
    class_probs: tuple[float, ...] = (0.140, 0.386, 0.474)
    dept_probs: tuple[float, ...] = (0.181, 0.065, 0.272, 0.163, 0.166, 0.153)
    years_gamma_shape: float = 2.2
    years_gamma_scale: float = 6.6
    prod_latent_mean: float = 1.30
    prod_latent_sd: float = 0.45
    profile_prob: float = 1.0
    score_intercept: float = 1.05
    score_years_by_title: tuple[float, ...] = (-0.016, -0.026, -0.036)
    score_prod_by_cell: tuple[tuple[float, ...], ...] = (
        (-0.80, -0.35, -0.60, -0.45, -0.70, -0.30),
        (-0.55, -0.75, -0.40, -0.65, -0.30, -0.50),
        (-0.35, -0.55, -0.80, -0.30, -0.60, -0.70),
    )
    outcome_intercept: float = 5.02
    outcome_score_scale: float = -0.40
    effect: float | EffectFunction = -0.03
    noise_sd: float = 0.09

    def validate(self) -> None:
        if self.n < 10:
            raise DegenerateProblemError(f"n must be at least 10, got {self.n}")
        if self.noise_sd < 0:
            raise DegenerateProblemError("noise_sd must be nonnegative")
        for name, probs, size in (
            ("title_probs", self.title_probs, len(TITLES)),
            ("class_probs", self.class_probs, len(UNIVERSITY_CLASSES)),
            ("dept_probs", self.dept_probs, len(DEPARTMENTS)),
        ):
            if len(probs) != size:
                raise DegenerateProblemError(f"{name} needs {size} entries")
            if abs(sum(probs) - 1.0) > 1e-9:
                raise DegenerateProblemError(f"{name} must sum to 1")
        if not 0.0 <= self.profile_prob <= 1.0:
            raise DegenerateProblemError("profile_prob must lie in [0, 1]")


@dataclass(frozen=True)
class DgpTruth:
    """Exact effect summaries implied by the spec on the realized sample.

    The treated and overlap averages weight per-unit effects by the true
    scores, so under a randomized spec all three summaries coincide.
    """

    ate: float
    att: float
    overlap_ate: float
    per_unit_tau: np.ndarray
    true_scores: np.ndarray
    naive_diff: float = field(default=float("nan"))


def _streams(seed: int) -> dict[str, np.random.Generator]:
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(_STREAMS))
    return {
        name: np.random.Generator(np.random.Philox(child))
        for name, child in zip(_STREAMS, children)
    }


def generate(spec: DgpSpec) -> tuple[Dataset, DgpTruth]:
    """Draw one dataset from the spec and report its exact effect truth."""
    spec.validate()
    rng = _streams(spec.seed)
    cov = rng["covariates"]
    n = spec.n

    title_ix = cov.choice(len(TITLES), size=n, p=np.asarray(spec.title_probs))
    class_ix = cov.choice(len(UNIVERSITY_CLASSES), size=n, p=np.asarray(spec.class_probs))
    dept_ix = cov.choice(len(DEPARTMENTS), size=n, p=np.asarray(spec.dept_probs))
    years = np.round(cov.gamma(spec.years_gamma_shape, spec.years_gamma_scale, size=n))
    latent = cov.normal(spec.prod_latent_mean, spec.prod_latent_sd, size=n)
    i10 = np.maximum(0.0, np.round(10.0**latent - 1.0))
    prod_log = np.log10(i10 + 1.0)
    has_profile = (cov.random(n) < spec.profile_prob).astype(int)

    years_coef = np.asarray(spec.score_years_by_title)[title_ix]
    prod_coef = np.asarray(spec.score_prod_by_cell)[class_ix, dept_ix]
    score = spec.score_intercept + years_coef * years + prod_coef * prod_log
    e_true = _expit(score)
    if e_true.sum() < 1.0 or (1.0 - e_true).sum() < 1.0:
        raise DegenerateProblemError("spec leaves one treatment arm almost surely empty")
    z = (rng["treatment"].random(n) < e_true).astype(int)
    if z.sum() == 0 or z.sum() == n:
        raise DegenerateProblemError("realized sample has a single treatment arm")

    if callable(spec.effect):
        tau = np.array(
            [
                spec.effect(
                    {
                        "title": TITLES[title_ix[i]],
                        "university_class": UNIVERSITY_CLASSES[class_ix[i]],
                        "department": DEPARTMENTS[dept_ix[i]],
                        "working_years": float(years[i]),
                        "productivity_log": float(prod_log[i]),
                        "score": float(score[i]),
                        "propensity": float(e_true[i]),
                    }
                )
                for i in range(n)
            ],
            dtype=float,
        )
    else:
        tau = np.full(n, float(spec.effect))

    baseline = spec.outcome_intercept + spec.outcome_score_scale * e_true
    noise = rng["noise"].normal(0.0, spec.noise_sd, size=n) if spec.noise_sd > 0 else np.zeros(n)
    outcome_log = baseline + tau * z + noise
    outcome_raw = 10.0**outcome_log

    records = [
        UnitRecord(
            outcome_raw=float(outcome_raw[i]),
            treatment=int(z[i]),
            title=TITLES[title_ix[i]],
            university_class=UNIVERSITY_CLASSES[class_ix[i]],
            department=DEPARTMENTS[dept_ix[i]],
            working_years=float(years[i]),
            productivity_raw=float(i10[i]) if has_profile[i] == 1 else None,
            has_profile=int(has_profile[i]),
        )
        for i in range(n)
    ]
    dataset = Dataset(records)

    w_att = e_true
    w_ov = e_true * (1.0 - e_true)
    treated = z == 1
    truth = DgpTruth(
        ate=float(tau.mean()),
        att=float(np.sum(w_att * tau) / np.sum(w_att)),
        overlap_ate=float(np.sum(w_ov * tau) / np.sum(w_ov)),
        per_unit_tau=tau,
        true_scores=e_true,
        naive_diff=float(outcome_log[treated].mean() - outcome_log[~treated].mean()),
    )
    return dataset, truth


def canonical_spec(n: int = 4000, seed: int = 0, effect: float | EffectFunction = -0.03) -> DgpSpec:
    """The default confounded instance used throughout the test harness."""
    return DgpSpec(n=n, seed=seed, effect=effect)


def randomized_spec(n: int = 4000, seed: int = 0, effect: float | EffectFunction = -0.03) -> DgpSpec:
    """Same covariates, but treatment assigned by a fair coin."""
    zeros_cells = tuple((0.0,) * len(DEPARTMENTS) for _ in UNIVERSITY_CLASSES)
    return DgpSpec(
        n=n,
        seed=seed,
        effect=effect,
        score_intercept=0.0,
        score_years_by_title=(0.0, 0.0, 0.0),
        score_prod_by_cell=zeros_cells,
        outcome_score_scale=0.0,
    )


def separation_spec(
    n: int = 4000, seed: int = 0, base_effect: float = -0.03, score_slope: float = 0.30
) -> DgpSpec:
    """Effect heterogeneity tied to the true score, so the treated-population
    and full-population averages genuinely differ."""

    def effect(features: Mapping[str, object]) -> float:
        return base_effect + score_slope * (float(features["propensity"]) - 0.45)

    return replace(canonical_spec(n=n, seed=seed), effect=effect)


def two_group_effect(base: float = -0.02, shifted_department: str = "MHS", shift: float = -0.02):
    """Effect function with one department shifted by a known offset."""

    def effect(features: Mapping[str, object]) -> float:
        return base + (shift if features["department"] == shifted_department else 0.0)

    return effect
