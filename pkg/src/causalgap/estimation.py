"""Shared numerical engines: weighted least squares and IRLS logistic regression.

Both fits run through a pivoted QR factorization that prunes exactly-collinear
columns before solving. Pruned columns keep their slot in the coefficient
vector as NaN, and their labels are reported on the fit object, so interaction
designs with empty cells degrade loudly instead of failing or lying.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import stats

from .data_model import DesignMatrix
from .errors import DegenerateProblemError, SeparationWarning

PROBABILITY_CLAMP = 1e-6
_SEPARATION_COEF_BOUND = 30.0


@dataclass
class OlsFit:
    """Least-squares fit with classical (or sandwich) inference.

    Coefficient-aligned vectors have one entry per design column; pruned
    columns carry NaN. ``residual_df`` is rows minus estimated coefficients.
    """

    labels: list[str]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    r_squared: float
    adj_r_squared: float
    residual_df: int
    weights_used: bool
    pruned: list[str] = field(default_factory=list)
    residuals: np.ndarray | None = None

    def coefficient(self, label: str) -> float:
        return float(self.coefficients[self.labels.index(label)])

    def se(self, label: str) -> float:
        return float(self.standard_errors[self.labels.index(label)])

    def t_value(self, label: str) -> float:
        return float(self.t_values[self.labels.index(label)])

    def predict(self, values: np.ndarray) -> np.ndarray:
        """Evaluate the fit on rows shaped like the training design."""
        beta = np.nan_to_num(self.coefficients, nan=0.0)
        return np.asarray(values, dtype=float) @ beta


@dataclass
class LogisticFit:
    """Logistic regression fit by iteratively reweighted least squares."""

    labels: list[str]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    fitted_probabilities: np.ndarray
    converged: bool
    iterations: int
    pruned: list[str] = field(default_factory=list)

    def coefficient(self, label: str) -> float:
        return float(self.coefficients[self.labels.index(label)])

    def predict_probabilities(self, values: np.ndarray) -> np.ndarray:
        beta = np.nan_to_num(self.coefficients, nan=0.0)
        eta = np.asarray(values, dtype=float) @ beta
        return clamp_probabilities(_expit(eta))


def _expit(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    expeta = np.exp(eta[~pos])
    out[~pos] = expeta / (1.0 + expeta)
    return out


def clamp_probabilities(p: np.ndarray, bound: float = PROBABILITY_CLAMP) -> np.ndarray:
    """Clamp fitted probabilities into [bound, 1-bound] for downstream arithmetic."""
    return np.clip(p, bound, 1.0 - bound)


def _pivoted_keep(a: np.ndarray) -> np.ndarray:
    """Indices of a maximal exactly-independent column subset (pivoted QR)."""
    n, p = a.shape
    r = scipy.linalg.qr(a, mode="r", pivoting=True)
    rmat, piv = r[0], r[1]
    diag = np.abs(np.diag(rmat))
    if diag.size == 0 or diag[0] == 0.0:
        raise DegenerateProblemError("design matrix is entirely zero")
    tol = diag[0] * max(n, p) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    keep = np.sort(piv[:rank])
    return keep


def fit_ols(
    X: DesignMatrix,
    y: np.ndarray,
    w: np.ndarray | None = None,
    *,
    robust: bool = False,
) -> OlsFit:
    """Weighted ordinary least squares with t-based inference.

    Weights are frequency-style: the fit minimizes sum(w * residual^2) and the
    residual variance uses rows-minus-parameters degrees of freedom. With
    ``robust`` a heteroskedasticity-consistent (HC1) sandwich replaces the
    classical variance.
    """
    values = X.values
    y = np.asarray(y, dtype=float)
    n, p = values.shape
    if y.shape != (n,):
        raise DegenerateProblemError(f"y has shape {y.shape}, expected ({n},)")
    if w is not None:
        w = np.asarray(w, dtype=float)
        if w.shape != (n,):
            raise DegenerateProblemError(f"weights have shape {w.shape}, expected ({n},)")
        if np.any(w < 0):
            raise DegenerateProblemError("weights must be nonnegative")
        if not np.any(w > 0):
            raise DegenerateProblemError("weights are all zero")
    sw = np.sqrt(w) if w is not None else None
    xw = values * sw[:, None] if sw is not None else values
    yw = y * sw if sw is not None else y

    keep = _pivoted_keep(xw)
    pruned = [X.columns[j].label for j in range(p) if j not in set(keep.tolist())]
    xk = xw[:, keep]
    k = xk.shape[1]
    if n <= k:
        raise DegenerateProblemError(f"need more rows than parameters: n={n}, p={k}")

    q, r = np.linalg.qr(xk)
    beta_k = scipy.linalg.solve_triangular(r, q.T @ yw)
    resid = y - values[:, keep] @ beta_k
    wr = w if w is not None else np.ones(n)
    rss = float(np.sum(wr * resid**2))
    df = n - k
    sigma2 = rss / df

    rinv = scipy.linalg.solve_triangular(r, np.eye(k))
    xtx_inv = rinv @ rinv.T
    if robust:
        meat = (xw[:, keep] * (np.sqrt(wr) * resid)[:, None] if w is not None else xk * resid[:, None])
        bread = xtx_inv
        cov = bread @ (meat.T @ meat) @ bread
        cov *= n / df
    else:
        cov = sigma2 * xtx_inv
    se_k = np.sqrt(np.diag(cov))

    ybar = float(np.sum(wr * y) / np.sum(wr))
    tss = float(np.sum(wr * (y - ybar) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / df

    coefficients = np.full(p, np.nan)
    ses = np.full(p, np.nan)
    coefficients[keep] = beta_k
    ses[keep] = se_k
    with np.errstate(invalid="ignore", divide="ignore"):
        t_values = coefficients / ses
    p_values = np.where(
        np.isnan(t_values), np.nan, 2.0 * stats.t.sf(np.abs(t_values), df)
    )
    return OlsFit(
        labels=X.labels,
        coefficients=coefficients,
        standard_errors=ses,
        t_values=t_values,
        p_values=p_values,
        r_squared=r2,
        adj_r_squared=adj_r2,
        residual_df=df,
        weights_used=w is not None,
        pruned=pruned,
        residuals=resid,
    )


def cluster_robust_cov(
    X: DesignMatrix, fit: OlsFit, clusters: np.ndarray, w: np.ndarray | None = None
) -> np.ndarray:
    """CR1 cluster-robust covariance for an existing fit (NaN rows for pruned)."""
    values = X.values
    n, p = values.shape
    keep = np.array([j for j in range(p) if not np.isnan(fit.coefficients[j])])
    wr = np.ones(n) if w is None else np.asarray(w, dtype=float)
    resid = fit.residuals
    if resid is None:
        raise DegenerateProblemError("fit has no stored residuals")
    xk = values[:, keep]
    xtx = (xk * wr[:, None]).T @ xk
    xtx_inv = np.linalg.inv(xtx)
    meat = np.zeros((len(keep), len(keep)))
    ids = np.asarray(clusters)
    for g in np.unique(ids):
        rows = ids == g
        s = ((wr[rows] * resid[rows])[:, None] * xk[rows]).sum(axis=0)
        meat += np.outer(s, s)
    n_groups = len(np.unique(ids))
    k = len(keep)
    scale = (n_groups / (n_groups - 1)) * ((n - 1) / (n - k))
    cov_k = scale * xtx_inv @ meat @ xtx_inv
    cov = np.full((p, p), np.nan)
    cov[np.ix_(keep, keep)] = cov_k
    return cov


def fit_logistic(
    X: DesignMatrix,
    z: np.ndarray,
    max_iter: int = 50,
    tol: float = 1e-10,
) -> LogisticFit:
    """Logistic regression via IRLS, stopping when the score vanishes.

    Convergence means max |X'(z - p)| < tol. Quasi-separation (a coefficient
    running past +-30 on the log-odds scale) stops the iteration with a
    :class:`SeparationWarning` and ``converged=False``; probabilities are
    still returned, clamped away from 0 and 1.
    """
    values = X.values
    z = np.asarray(z, dtype=float)
    n, p = values.shape
    if z.shape != (n,):
        raise DegenerateProblemError(f"z has shape {z.shape}, expected ({n},)")
    if not np.all((z == 0) | (z == 1)):
        raise DegenerateProblemError("z must be binary 0/1")
    if not (np.any(z == 1) and np.any(z == 0)):
        raise DegenerateProblemError("both classes must be present")

    keep = _pivoted_keep(values)
    pruned = [X.columns[j].label for j in range(p) if j not in set(keep.tolist())]
    xk = values[:, keep]
    k = xk.shape[1]
    if n < k:
        raise DegenerateProblemError(f"need at least as many rows as parameters: n={n}, p={k}")

    beta = np.zeros(k)
    converged = False
    separated = False
    iterations = 0
    prob = np.full(n, 0.5)
    for iterations in range(1, max_iter + 1):
        eta = xk @ beta
        prob = _expit(eta)
        score = xk.T @ (z - prob)
        if np.max(np.abs(score)) < tol:
            converged = True
            break
        s = prob * (1.0 - prob)
        # Guard the weighted solve: near-separation drives s to zero.
        xs = xk * np.sqrt(np.maximum(s, 1e-12))[:, None]
        a = xs.T @ xs
        try:
            step = np.linalg.solve(a, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(a, score, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(beta)) > _SEPARATION_COEF_BOUND:
            separated = True
            eta = xk @ beta
            prob = _expit(eta)
            break
    if separated:
        warnings.warn(
            "possible perfect separation: coefficients diverging; "
            "probabilities returned clamped",
            SeparationWarning,
            stacklevel=2,
        )
        converged = False

    s = np.maximum(prob * (1.0 - prob), 1e-12)
    fisher = (xk * s[:, None]).T @ xk
    try:
        cov = np.linalg.inv(fisher)
        se_k = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        se_k = np.full(k, np.nan)

    coefficients = np.full(p, np.nan)
    ses = np.full(p, np.nan)
    coefficients[keep] = beta
    ses[keep] = se_k
    return LogisticFit(
        labels=X.labels,
        coefficients=coefficients,
        standard_errors=ses,
        fitted_probabilities=clamp_probabilities(prob),
        converged=converged,
        iterations=iterations,
        pruned=pruned,
    )
