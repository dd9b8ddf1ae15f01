"""Maximum-likelihood fitting of the three working-model families (linear,
logistic, probit) plus prediction.

Linear fits are solved in one pass by weighted least squares through a
rank-revealing pivoted QR; logistic/probit fits use iteratively reweighted
least squares with Newton (Fisher-scoring) steps, step-halving on likelihood
decrease, and a hard separation guard. Convergence is declared when the
weighted score norm drops to 1e-8.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit, log_ndtr, ndtr

from .data import Dataset, DesignMatrix, Formula, build_design
from .errors import (
    ContractError,
    ConvergenceError,
    DesignShapeError,
    SeparationError,
    SingularDesignError,
)

SCORE_TOL = 1e-8
MAX_ITER = 100
SEPARATION_BOUND = 30.0
PIVOT_RTOL = 1e-10

_SQRT_2PI = np.sqrt(2.0 * np.pi)


class GlmFamily(enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    PROBIT = "probit"


def normal_cdf(x):
    """Standard normal distribution function, accurate to full working
    precision (erf-based); accepts scalars or arrays."""
    return ndtr(x)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / _SQRT_2PI


@dataclass(frozen=True)
class FittedGlm:
    """Coefficients of a fitted working model, with the formula that
    produced its design so predictions can be evaluated on any dataset."""

    family: GlmFamily
    formula: Formula | None
    coef: np.ndarray
    converged: bool
    iterations: int

    def __post_init__(self):
        object.__setattr__(self, "coef", np.asarray(self.coef, dtype=float))

    def mean(
        self,
        data: Dataset,
        a_override: float | None = None,
        m_override=None,
    ) -> np.ndarray:
        """Predicted mean on a dataset, optionally forcing the treatment
        and/or mediator columns before expansion."""
        if self.formula is None:
            raise ContractError("model has no formula attached; use predict_mean")
        design = build_design(data, self.formula, a_override=a_override,
                              m_override=m_override)
        return predict_mean(self, design)


def predict_mean(model: FittedGlm, design: DesignMatrix) -> np.ndarray:
    if design.q != model.coef.shape[0]:
        raise DesignShapeError(
            f"design has {design.q} columns, model expects {model.coef.shape[0]}"
        )
    eta = design.values @ model.coef
    if model.family is GlmFamily.LINEAR:
        return eta
    if model.family is GlmFamily.LOGISTIC:
        return expit(eta)
    return ndtr(eta)


def _check_binary(response: np.ndarray, family: GlmFamily):
    if family in (GlmFamily.LOGISTIC, GlmFamily.PROBIT):
        if not np.isin(response, (0.0, 1.0)).all():
            raise ContractError(f"{family.value} fits require a 0/1 response")


def solve_wls(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least squares via pivoted QR; raises on rank deficiency
    (relative pivot magnitude below 1e-10)."""
    keep = w > 0
    sw = np.sqrt(w[keep])
    A = X[keep] * sw[:, None]
    b = y[keep] * sw
    if A.shape[0] < A.shape[1]:
        raise SingularDesignError(
            f"{A.shape[0]} weighted rows cannot identify {A.shape[1]} coefficients"
        )
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        raise SingularDesignError("empty design")
    if diag.min() <= PIVOT_RTOL * diag.max() or diag.max() == 0.0:
        raise SingularDesignError(
            f"design is rank deficient (pivot ratio {diag.min():.3e}/{diag.max():.3e})"
        )
    z = scipy.linalg.solve_triangular(R, Q.T @ b)
    coef = np.empty_like(z)
    coef[piv] = z
    return coef


def log_likelihood(
    design: DesignMatrix,
    response: np.ndarray,
    family: GlmFamily,
    coef: np.ndarray,
    weights: np.ndarray | None = None,
) -> float:
    """Weighted log-likelihood (Gaussian part up to its additive constant,
    unit dispersion)."""
    y = np.asarray(response, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    eta = design.values @ np.asarray(coef, dtype=float)
    if family is GlmFamily.LINEAR:
        return float(-0.5 * np.sum(w * (y - eta) ** 2))
    if family is GlmFamily.LOGISTIC:
        # y*log(mu) + (1-y)*log(1-mu), written stably in eta
        return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))
    return float(np.sum(w * (y * log_ndtr(eta) + (1.0 - y) * log_ndtr(-eta))))


def score(
    design: DesignMatrix,
    response: np.ndarray,
    family: GlmFamily,
    coef: np.ndarray,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of the weighted log-likelihood at ``coef``."""
    y = np.asarray(response, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    X = design.values
    eta = X @ np.asarray(coef, dtype=float)
    if family is GlmFamily.LINEAR:
        resid = y - eta
        factor = np.ones_like(eta)
    elif family is GlmFamily.LOGISTIC:
        resid = y - expit(eta)
        factor = np.ones_like(eta)
    else:
        mu = np.clip(ndtr(eta), 1e-12, 1.0 - 1e-12)
        resid = y - mu
        factor = normal_pdf(eta) / (mu * (1.0 - mu))
    return X.T @ (w * factor * resid)


def fit(
    design: DesignMatrix,
    response: np.ndarray,
    family: GlmFamily,
    weights: np.ndarray | None = None,
    formula: Formula | None = None,
) -> FittedGlm:
    """Maximum-likelihood fit of ``response`` on ``design``.

    ``weights`` are nonnegative observation weights; rows with weight zero do
    not enter the solve. ``formula`` is attached to the result so it can
    predict on datasets directly.
    """
    y = np.asarray(response, dtype=float)
    X = design.values
    if X.shape[0] != y.shape[0]:
        raise DesignShapeError(
            f"design has {X.shape[0]} rows, response has {y.shape[0]}"
        )
    if weights is None:
        w = np.ones_like(y)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != y.shape:
            raise DesignShapeError("weights length must match response")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ContractError("weights must be finite and nonnegative")
    _check_binary(y, family)

    if family is GlmFamily.LINEAR:
        coef = solve_wls(X, y, w)
        return FittedGlm(family=family, formula=formula, coef=coef,
                         converged=True, iterations=1)

    coef = np.zeros(X.shape[1])
    ll = log_likelihood(design, y, family, coef, w)
    for iteration in range(1, MAX_ITER + 1):
        grad = score(design, y, family, coef, w)
        if np.linalg.norm(grad) <= SCORE_TOL:
            return FittedGlm(family=family, formula=formula, coef=coef,
                             converged=True, iterations=iteration - 1)
        eta = X @ coef
        if family is GlmFamily.LOGISTIC:
            mu = expit(eta)
            irls_w = np.clip(mu * (1.0 - mu), 1e-10, None)
            working = (y - mu) / irls_w
        else:
            mu = np.clip(ndtr(eta), 1e-12, 1.0 - 1e-12)
            dens = np.clip(normal_pdf(eta), 1e-300, None)
            irls_w = np.clip(dens * dens / (mu * (1.0 - mu)), 1e-10, None)
            working = (y - mu) / dens
        step = solve_wls(X, working, w * irls_w)
        # step-halving keeps the likelihood monotone; the acceptance band is
        # relative to |ll| so float noise in huge-n likelihoods cannot stall
        # an improving Newton step
        tol = 1e-10 * (1.0 + abs(ll))
        scale = 1.0
        for _ in range(40):
            trial = coef + scale * step
            trial_ll = log_likelihood(design, y, family, trial, w)
            if trial_ll >= ll - tol:
                break
            scale *= 0.5
        coef = coef + scale * step
        ll = log_likelihood(design, y, family, coef, w)
        if np.any(np.abs(coef) > SEPARATION_BOUND):
            raise SeparationError(
                f"coefficient magnitude exceeded {SEPARATION_BOUND:g} during "
                f"{family.value} fit (quasi-separation)"
            )
    grad = score(design, y, family, coef, w)
    if np.linalg.norm(grad) <= SCORE_TOL:
        return FittedGlm(family=family, formula=formula, coef=coef,
                         converged=True, iterations=MAX_ITER)
    raise ConvergenceError(
        f"{family.value} fit did not converge after {MAX_ITER} iterations "
        f"(score norm {np.linalg.norm(grad):.3e})",
        last_coef=coef,
    )


def fit_on(
    data: Dataset,
    formula: Formula,
    response: np.ndarray,
    family: GlmFamily,
    weights: np.ndarray | None = None,
) -> FittedGlm:
    """Fit a formula against a dataset (convenience used throughout the
    nuisance constructions)."""
    return fit(build_design(data, formula), response, family,
               weights=weights, formula=formula)
