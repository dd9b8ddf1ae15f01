"""The four point estimators of the nested-counterfactual mean, the
efficient influence function, the AIPW estimator of E{Y(a')}, and the
effect/percent-mediated contrasts.

All estimators consume per-row nuisance values; :func:`evaluate_nuisances`
produces them from a fitted :class:`~pathmed.nuisance.NuisanceSet` (with
optional bounded-weight stabilization), while the simulation module feeds
values built by analytic plug-in instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import Dataset, TreatmentCoding
from .errors import ContractError, TotalEffectZeroError, WeightError
from .glm import FittedGlm
from .nuisance import (
    DEFAULT_POSITIVITY_FLOOR,
    DensityRatioModel,
    NuisanceSet,
    OutcomeCascade,
    check_positivity,
)
from .stabilization import stabilize_propensity

ESTIMATOR_KINDS = ("mle", "ipw_a", "ipw_b", "mr", "aipw_mean", "pse",
                   "percent_mediated")

BOUNDED = "bounded"
_STAB_MODES = (None, "none", BOUNDED)


@dataclass(frozen=True)
class PointEstimate:
    value: float
    estimator_kind: str
    n: int
    diagnostics: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.estimator_kind not in ESTIMATOR_KINDS:
            raise ContractError(f"unknown estimator kind {self.estimator_kind!r}")
        if not math.isfinite(self.value):
            raise WeightError(
                f"{self.estimator_kind} estimate is not finite ({self.value!r})"
            )


@dataclass(frozen=True)
class NuisanceValues:
    """Per-row evaluations of the six nuisances on a dataset.

    ``b_ref`` is B(M_i, C1_i, a', C0_i); ``b_prime`` and ``b_pprime`` are the
    nested means evaluated at each row's covariates.
    """

    p_a: np.ndarray
    m_ratio: np.ndarray
    c1_ratio: np.ndarray
    b_ref: np.ndarray
    b_prime: np.ndarray
    b_pprime: np.ndarray


def _check_stabilization(stabilization):
    if stabilization not in _STAB_MODES:
        raise ContractError(
            f"stabilization must be one of {_STAB_MODES[1:]}, got {stabilization!r}"
        )
    return stabilization == BOUNDED


def _stabilized_ratio(ratio: DensityRatioModel, data: Dataset,
                      coding: TreatmentCoding,
                      cache: dict) -> DensityRatioModel:
    def stab(model):
        key = id(model)
        if key not in cache:
            cache[key] = stabilize_propensity(model, data, coding)
        return cache[key]

    return DensityRatioModel(
        numerator_propensity=stab(ratio.numerator_propensity),
        denominator_propensity=stab(ratio.denominator_propensity),
        coding=coding,
    )


def stabilized_trio(data: Dataset, nuisances: NuisanceSet):
    """Bounded-weight stabilized versions of (f_a_c0, c1_ratio, m_ratio).
    Shared models (the C1-ratio numerator doubling as the M-ratio
    denominator, etc.) receive a single consistent shift."""
    coding = nuisances.coding
    cache: dict = {}
    c1_ratio = _stabilized_ratio(nuisances.c1_ratio, data, coding, cache)
    m_ratio = _stabilized_ratio(nuisances.m_ratio, data, coding, cache)
    f_a_c0 = cache.get(id(nuisances.f_a_c0))
    if f_a_c0 is None:
        f_a_c0 = stabilize_propensity(nuisances.f_a_c0, data, coding)
    return f_a_c0, c1_ratio, m_ratio


def evaluate_nuisances(
    data: Dataset,
    nuisances: NuisanceSet,
    stabilization: str | None = None,
    on_violation: str = "error",
) -> NuisanceValues:
    """Evaluate a NuisanceSet row-wise, optionally replacing every treatment
    model by its bounded-weight stabilized version first."""
    floor = nuisances.positivity_floor
    f_a_c0 = nuisances.f_a_c0
    c1_ratio = nuisances.c1_ratio
    m_ratio = nuisances.m_ratio
    if _check_stabilization(stabilization):
        f_a_c0, c1_ratio, m_ratio = stabilized_trio(data, nuisances)

    p_a = f_a_c0.mean(data)
    check_positivity(p_a, floor, "f(a|C0)", on_violation)
    cascade = nuisances.cascade
    return NuisanceValues(
        p_a=p_a,
        m_ratio=m_ratio.evaluate(data, positivity_floor=floor,
                                 on_violation=on_violation),
        c1_ratio=c1_ratio.evaluate(data, positivity_floor=floor,
                                   on_violation=on_violation),
        b_ref=cascade.b.mean(data, a_override=0),
        b_prime=cascade.b_prime.mean(data),
        b_pprime=cascade.b_pprime.mean(data),
    )


def influence_terms(data: Dataset, values: NuisanceValues):
    """The three weighted residual terms of the influence function (the
    fourth term is b_pprime minus beta)."""
    ref = data.a == 0.0
    comp = data.a == 1.0
    w_ref = np.where(ref, values.m_ratio / (1.0 - values.p_a), 0.0)
    w_comp = np.where(comp, 1.0 / (values.p_a * values.c1_ratio), 0.0)
    w_plain = np.where(ref, 1.0 / (1.0 - values.p_a), 0.0)
    for w in (w_ref, w_comp, w_plain):
        if not np.all(np.isfinite(w)):
            raise WeightError("non-finite inverse-probability weight")
    term1 = w_ref * (data.y - values.b_ref)
    term2 = w_comp * (values.b_ref - values.b_prime)
    term3 = w_plain * (values.b_prime - values.b_pprime)
    return term1, term2, term3


def eif_from_values(data: Dataset, values: NuisanceValues, beta: float) -> np.ndarray:
    term1, term2, term3 = influence_terms(data, values)
    return term1 + term2 + term3 + values.b_pprime - beta


def eif(
    data: Dataset,
    nuisances: NuisanceSet,
    beta: float,
    stabilization: str | None = None,
    on_violation: str = "error",
) -> np.ndarray:
    """Per-row efficient influence function at ``beta``."""
    values = evaluate_nuisances(data, nuisances, stabilization, on_violation)
    return eif_from_values(data, values, beta)


def _weight_diagnostics(data: Dataset, values: NuisanceValues) -> dict[str, float]:
    ref = data.a == 0.0
    comp = data.a == 1.0
    realized = np.concatenate([
        (values.m_ratio / (1.0 - values.p_a))[ref],
        (1.0 / (values.p_a * values.c1_ratio))[comp],
        (1.0 / (1.0 - values.p_a))[ref],
    ])
    return {"min_weight": float(realized.min()),
            "max_weight": float(realized.max())}


def beta_mr_from_values(data: Dataset, values: NuisanceValues) -> PointEstimate:
    """Closed-form solution of P_n EIF(beta) = 0 (the equation is linear in
    beta)."""
    term1, term2, term3 = influence_terms(data, values)
    diagnostics = {
        "term1_mean": float(np.mean(term1)),
        "term2_mean": float(np.mean(term2)),
        "term3_mean": float(np.mean(term3)),
    }
    diagnostics.update(_weight_diagnostics(data, values))
    value = float(np.mean(term1 + term2 + term3 + values.b_pprime))
    return PointEstimate(value=value, estimator_kind="mr", n=data.n,
                         diagnostics=diagnostics)


def beta_mle_from_values(data: Dataset, values: NuisanceValues) -> PointEstimate:
    return PointEstimate(value=float(np.mean(values.b_pprime)),
                         estimator_kind="mle", n=data.n)


def beta_a_from_values(data: Dataset, values: NuisanceValues) -> PointEstimate:
    ref = data.a == 0.0
    weights = np.where(ref, values.m_ratio / (1.0 - values.p_a), 0.0)
    if not np.all(np.isfinite(weights)):
        raise WeightError("non-finite weight in the mediator-ratio estimator")
    diagnostics = {"min_weight": float(weights[ref].min()),
                   "max_weight": float(weights[ref].max())}
    return PointEstimate(value=float(np.mean(weights * data.y)),
                         estimator_kind="ipw_a", n=data.n,
                         diagnostics=diagnostics)


def beta_b_from_values(data: Dataset, values: NuisanceValues) -> PointEstimate:
    comp = data.a == 1.0
    weights = np.where(comp, 1.0 / (values.p_a * values.c1_ratio), 0.0)
    if not np.all(np.isfinite(weights)):
        raise WeightError("non-finite weight in the confounder-ratio estimator")
    diagnostics = {"min_weight": float(weights[comp].min()),
                   "max_weight": float(weights[comp].max())}
    return PointEstimate(value=float(np.mean(weights * values.b_ref)),
                         estimator_kind="ipw_b", n=data.n,
                         diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Spec-level operations on fitted nuisances
# ---------------------------------------------------------------------------

def beta_mle(cascade: OutcomeCascade, data: Dataset) -> PointEstimate:
    """Substitution estimator: the empirical mean of the final cascade fit."""
    return PointEstimate(
        value=float(np.mean(cascade.b_pprime.mean(data))),
        estimator_kind="mle",
        n=data.n,
    )


def beta_a(
    data: Dataset,
    f_a_c0,
    m_ratio: DensityRatioModel,
    coding: TreatmentCoding,
    stabilization: str | None = None,
    positivity_floor: float = DEFAULT_POSITIVITY_FLOOR,
    on_violation: str = "error",
) -> PointEstimate:
    """Inverse-probability estimator weighting reference-arm outcomes by the
    mediator density ratio."""
    if _check_stabilization(stabilization):
        cache: dict = {}
        m_ratio = _stabilized_ratio(m_ratio, data, coding, cache)
        f_a_c0 = stabilize_propensity(f_a_c0, data, coding)
    p_a = f_a_c0.mean(data)
    check_positivity(p_a, positivity_floor, "f(a|C0)", on_violation)
    ratio = m_ratio.evaluate(data, positivity_floor=positivity_floor,
                             on_violation=on_violation)
    ref = data.a == 0.0
    if not ref.any():
        raise ContractError("no reference-arm rows")
    weights = np.where(ref, ratio / (1.0 - p_a), 0.0)
    if not np.all(np.isfinite(weights)):
        raise WeightError("non-finite weight in the mediator-ratio estimator")
    diagnostics = {"min_weight": float(weights[ref].min()),
                   "max_weight": float(weights[ref].max())}
    return PointEstimate(value=float(np.mean(weights * data.y)),
                         estimator_kind="ipw_a", n=data.n,
                         diagnostics=diagnostics)


def beta_b(
    data: Dataset,
    f_a_c0,
    c1_ratio: DensityRatioModel,
    b: FittedGlm,
    coding: TreatmentCoding,
    stabilization: str | None = None,
    positivity_floor: float = DEFAULT_POSITIVITY_FLOOR,
    on_violation: str = "error",
) -> PointEstimate:
    """Inverse-probability estimator weighting reference-arm outcome-model
    predictions by the inverse confounder density ratio."""
    if _check_stabilization(stabilization):
        cache: dict = {}
        c1_ratio = _stabilized_ratio(c1_ratio, data, coding, cache)
        f_a_c0 = stabilize_propensity(f_a_c0, data, coding)
    p_a = f_a_c0.mean(data)
    check_positivity(p_a, positivity_floor, "f(a|C0)", on_violation)
    ratio = c1_ratio.evaluate(data, positivity_floor=positivity_floor,
                              on_violation=on_violation)
    comp = data.a == 1.0
    if not comp.any():
        raise ContractError("no comparison-arm rows")
    weights = np.where(comp, 1.0 / (p_a * ratio), 0.0)
    if not np.all(np.isfinite(weights)):
        raise WeightError("non-finite weight in the confounder-ratio estimator")
    b_ref = b.mean(data, a_override=0)
    diagnostics = {"min_weight": float(weights[comp].min()),
                   "max_weight": float(weights[comp].max())}
    return PointEstimate(value=float(np.mean(weights * b_ref)),
                         estimator_kind="ipw_b", n=data.n,
                         diagnostics=diagnostics)


def beta_mr(
    data: Dataset,
    nuisances: NuisanceSet,
    stabilization: str | None = None,
    on_violation: str = "error",
) -> PointEstimate:
    """Locally efficient multiply robust estimator (closed form)."""
    values = evaluate_nuisances(data, nuisances, stabilization, on_violation)
    return beta_mr_from_values(data, values)


def aipw_mean(
    data: Dataset,
    level: float,
    outcome_model: FittedGlm,
    propensity,
    coding: TreatmentCoding,
    stabilization: str | None = None,
    positivity_floor: float = DEFAULT_POSITIVITY_FLOOR,
    on_violation: str = "error",
) -> PointEstimate:
    """Augmented inverse-probability estimator of E{Y(level)}; the outcome
    model conditions on (A, C0) only."""
    if level == coding.a:
        recoded = 1.0
    elif level == coding.a_prime:
        recoded = 0.0
    else:
        raise ContractError(
            f"level {level!r} is not one of the coded treatments "
            f"{{{coding.a}, {coding.a_prime}}}"
        )
    if outcome_model.formula is not None:
        allowed = {"A"} | set(data.c0_names)
        extra = [n for n in outcome_model.formula.names() if n not in allowed]
        if extra:
            raise ContractError(
                f"AIPW outcome model may only condition on (A, C0); got {extra}"
            )
    if _check_stabilization(stabilization):
        propensity = stabilize_propensity(propensity, data, coding)
    p_a = propensity.mean(data)
    check_positivity(p_a, positivity_floor, "f(level|C0)", on_violation)
    p_level = p_a if recoded == 1.0 else 1.0 - p_a
    indicator = data.a == recoded
    mhat = outcome_model.mean(data, a_override=recoded)
    weights = np.where(indicator, 1.0 / p_level, 0.0)
    if not np.all(np.isfinite(weights)):
        raise WeightError("non-finite AIPW weight")
    value = float(np.mean(weights * (data.y - mhat) + mhat))
    diagnostics = {"min_weight": float(weights[indicator].min()),
                   "max_weight": float(weights[indicator].max())}
    return PointEstimate(value=value, estimator_kind="aipw_mean", n=data.n,
                         diagnostics=diagnostics)


def pse(beta_hat: PointEstimate, ey_aprime: PointEstimate) -> PointEstimate:
    """Path-specific effect: the nested-counterfactual mean minus E{Y(a')}."""
    if beta_hat.n != ey_aprime.n:
        raise ContractError(
            f"estimates come from different samples (n={beta_hat.n} vs "
            f"n={ey_aprime.n})"
        )
    return PointEstimate(
        value=beta_hat.value - ey_aprime.value,
        estimator_kind="pse",
        n=beta_hat.n,
        diagnostics={"beta": beta_hat.value, "ey_aprime": ey_aprime.value},
    )


def percent_mediated(pse_value: float, total_effect: float) -> float:
    """One hundred times the path-specific effect over the total effect.

    May exceed 100 in magnitude when the total effect is small; sign follows
    the ratio."""
    if total_effect == 0.0:
        raise TotalEffectZeroError("total effect is zero; percent mediated "
                                   "is undefined")
    return 100.0 * pse_value / total_effect


def format_percent(value: float) -> str:
    """Table convention: percent mediated rounded to the integer
    (half away from zero), e.g. ``-54``."""
    rounded = math.floor(abs(value) + 0.5)
    return str(int(math.copysign(rounded, value)))
