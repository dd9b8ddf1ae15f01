"""Weight stabilization: the bounded-weight propensity adjustment and the
iterated weighted-regression substitution estimator.

The bounded adjustment shifts a fitted treatment model's logits by the
constant

    shift = -log P_n{1[A = a']} + log P_n{1[A = a] f(a'|X)/f(a|X)}

so that P_n{1[A = a] f'(a'|X)/f'(a|X)} = P_n{1[A = a']} holds exactly and
realized weights stay bounded.

The substitution estimator refits the outcome cascade by weighted least
squares with the multiply robust estimator's own weights; each step's
intercept normal equation empirically zeroes the corresponding weighted
term, leaving the plug-in mean of the final fit. With linear cascade models
and zero initial estimates this coincides with a targeted minimum-loss
update, so the procedure's value equals the multiply robust estimate at the
refitted nuisances; the fluctuation parameters are never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .data import Dataset, Formula, TreatmentCoding
from .errors import ContractError, StratumError, WeightError
from .glm import FittedGlm, GlmFamily, fit_on
from .nuisance import (
    DEFAULT_POSITIVITY_FLOOR,
    DensityRatioModel,
    _validate_conditioning,
    check_positivity,
)


@dataclass(frozen=True)
class StabilizedPropensity:
    """A fitted treatment model with a constant logit shift; predicted
    probabilities stay in (0, 1) and odds at the comparison level are the
    base odds times exp(logit_shift)."""

    base: FittedGlm
    logit_shift: float
    coding: TreatmentCoding

    def mean(
        self,
        data: Dataset,
        a_override: float | None = None,
        m_override=None,
    ) -> np.ndarray:
        probs = self.base.mean(data, a_override=a_override, m_override=m_override)
        probs = np.clip(probs, 1e-15, 1.0 - 1e-15)
        return expit(logit(probs) + self.logit_shift)


def stabilize_propensity(
    model: FittedGlm,
    data: Dataset,
    coding: TreatmentCoding,
) -> StabilizedPropensity:
    if isinstance(model, StabilizedPropensity):
        return model
    comparison = data.a == 1.0
    reference = data.a == 0.0
    if not comparison.any() or not reference.any():
        raise StratumError("both treatment arms must be non-empty to stabilize")
    probs = np.clip(model.mean(data), 1e-15, 1.0 - 1e-15)
    balance = float(np.mean(comparison * (1.0 - probs) / probs))
    shift = -np.log(float(np.mean(reference))) + np.log(balance)
    return StabilizedPropensity(base=model, logit_shift=float(shift), coding=coding)


def stabilized_substitution(
    data: Dataset,
    b_formula: Formula,
    bprime_formula: Formula,
    bpprime_formula: Formula,
    f_a_c0,
    c1_ratio: DensityRatioModel,
    m_ratio: DensityRatioModel,
    coding: TreatmentCoding,
    positivity_floor: float = DEFAULT_POSITIVITY_FLOOR,
    on_violation: str = "error",
):
    """Three-step weighted-regression substitution estimator.

    Step 1 fits the outcome model over reference-arm rows with weights
    1[A=a']/f(a'|C0) x m_ratio; terms containing A are identically zero on
    that stratum (the reference level recodes to 0) and are dropped from the
    solve. Step 2 fits the first pseudo-outcome over comparison-arm rows with
    weights 1[A=a]/{f(a|C0) c1_ratio}; step 3 fits the second pseudo-outcome
    over reference-arm rows with weights 1[A=a']/f(a'|C0). Returns the
    empirical mean of the final fit, whose weighted-residual certificates are
    recorded in the diagnostics.
    """
    from .estimators import PointEstimate  # deferred: avoids an import cycle

    for formula, what in ((b_formula, "outcome formula"),
                          (bprime_formula, "first pseudo-outcome formula"),
                          (bpprime_formula, "second pseudo-outcome formula")):
        if not formula.has_intercept():
            raise ContractError(f"{what} must contain an intercept for the "
                                "substitution estimator")
    _validate_conditioning(
        b_formula, {"A", "M"} | set(data.c0_names) | set(data.c1_names),
        "outcome formula",
    )
    _validate_conditioning(
        bprime_formula, set(data.c0_names) | set(data.c1_names),
        "first pseudo-outcome formula",
    )
    _validate_conditioning(
        bpprime_formula, set(data.c0_names), "second pseudo-outcome formula"
    )

    comparison = data.a == 1.0
    reference = data.a == 0.0
    if not comparison.any() or not reference.any():
        raise StratumError("both treatment arms must be non-empty")

    p_a = f_a_c0.mean(data)
    check_positivity(p_a, positivity_floor, "f(a|C0)", on_violation)
    p_ref = 1.0 - p_a
    m_ratio_vals = m_ratio.evaluate(data, positivity_floor=positivity_floor,
                                    on_violation=on_violation)
    c1_ratio_vals = c1_ratio.evaluate(data, positivity_floor=positivity_floor,
                                      on_violation=on_violation)

    w1 = np.where(reference, m_ratio_vals / p_ref, 0.0)
    w2 = np.where(comparison, 1.0 / (p_a * c1_ratio_vals), 0.0)
    w3 = np.where(reference, 1.0 / p_ref, 0.0)
    for w in (w1, w2, w3):
        if not np.all(np.isfinite(w)):
            raise WeightError("non-finite substitution weight")

    reduced_b = b_formula.drop_treatment_terms()
    b_fit = fit_on(data, reduced_b, data.y, GlmFamily.LINEAR, weights=w1)
    b_hat = b_fit.mean(data)

    bprime_fit = fit_on(data, bprime_formula, b_hat, GlmFamily.LINEAR, weights=w2)
    bprime_hat = bprime_fit.mean(data)

    bpprime_fit = fit_on(data, bpprime_formula, bprime_hat, GlmFamily.LINEAR,
                         weights=w3)
    bpprime_hat = bpprime_fit.mean(data)

    realized = np.concatenate([w1[reference], w2[comparison], w3[reference]])
    diagnostics = {
        "term1_mean": float(np.mean(w1 * (data.y - b_hat))),
        "term2_mean": float(np.mean(w2 * (b_hat - bprime_hat))),
        "term3_mean": float(np.mean(w3 * (bprime_hat - bpprime_hat))),
        "min_weight": float(realized.min()),
        "max_weight": float(realized.max()),
    }
    return PointEstimate(
        value=float(np.mean(bpprime_hat)),
        estimator_kind="mr",
        n=data.n,
        diagnostics=diagnostics,
    )
