"""Construction of the six nuisance estimates: the outcome cascade B, B',
B'' and the treatment-model trio behind the inverse-probability weights and
the two conditional density ratios.

Density ratios for the intermediate covariates and the mediator are never
modeled directly; they are always represented through treatment odds
(Bayes' theorem), so only binary-response fits are required:

    c1_ratio(C1, C0) = odds{A = a | C1, C0} / odds{A = a | C0}
    m_ratio(M, C1, C0) = odds{A = a | M, C1, C0} / odds{A = a | C1, C0}
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Union

import numpy as np

from .data import Dataset, Formula, TreatmentCoding
from .errors import (
    DegenerateResponseError,
    FormulaError,
    PositivityError,
    PositivityWarning,
    StratumError,
    WeightError,
)
from .glm import FittedGlm, GlmFamily, fit_on

if TYPE_CHECKING:
    from .stabilization import StabilizedPropensity

    PropensityModel = Union[FittedGlm, "StabilizedPropensity"]
else:
    PropensityModel = object

DEFAULT_POSITIVITY_FLOOR = 1e-3


def check_positivity(
    probs: np.ndarray,
    floor: float,
    what: str,
    on_violation: str = "error",
) -> None:
    """Enforce floor <= p <= 1 - floor; hard error in estimation mode,
    warning in simulation mode."""
    probs = np.asarray(probs)
    bad = np.flatnonzero((probs < floor) | (probs > 1.0 - floor))
    if bad.size == 0:
        return
    shown = ", ".join(str(i) for i in bad[:10])
    more = "" if bad.size <= 10 else f" (+{bad.size - 10} more)"
    message = (
        f"{what}: {bad.size} fitted probabilities outside "
        f"[{floor:g}, {1 - floor:g}] at rows [{shown}]{more}"
    )
    if on_violation == "error":
        raise PositivityError(message)
    warnings.warn(message, PositivityWarning)


def _odds(probs: np.ndarray) -> np.ndarray:
    return probs / (1.0 - probs)


# ---------------------------------------------------------------------------
# Density ratios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityRatioModel:
    """Ratio of a variable's conditional density under the two treatment
    arms, represented by two treatment models on nested conditioning sets.

    ``numerator_propensity`` conditions on the richer set (includes the
    ratio's variable); ``denominator_propensity`` on the coarser set. Both
    may be raw fits or stabilized wrappers.
    """

    numerator_propensity: PropensityModel
    denominator_propensity: PropensityModel
    coding: TreatmentCoding

    def evaluate(
        self,
        data: Dataset,
        rows: np.ndarray | None = None,
        positivity_floor: float = DEFAULT_POSITIVITY_FLOOR,
        on_violation: str = "error",
    ) -> np.ndarray:
        """Per-row odds(numerator)/odds(denominator) at the comparison
        level."""
        if rows is not None:
            data = data.subset(rows)
        p_num = self.numerator_propensity.mean(data)
        p_den = self.denominator_propensity.mean(data)
        check_positivity(p_num, positivity_floor, "density-ratio numerator",
                         on_violation)
        check_positivity(p_den, positivity_floor, "density-ratio denominator",
                         on_violation)
        ratio = _odds(p_num) / _odds(p_den)
        if not np.all(np.isfinite(ratio)) or np.any(ratio <= 0):
            raise WeightError("density ratio evaluated to a non-finite or "
                              "non-positive value")
        return ratio


def density_ratio(
    numerator: PropensityModel,
    denominator: PropensityModel,
    coding: TreatmentCoding,
) -> DensityRatioModel:
    return DensityRatioModel(
        numerator_propensity=numerator,
        denominator_propensity=denominator,
        coding=coding,
    )


def compatible_formula_union(base_logit_terms: Formula,
                             log_ratio_terms: Formula) -> Formula:
    """Regressor set for the richer treatment model: the deduplicated union
    of the coarser model's terms and the log-density-ratio's terms, base
    order first."""
    terms = list(base_logit_terms.terms)
    for term in log_ratio_terms.terms:
        if term not in terms:
            terms.append(term)
    return Formula(tuple(terms))


# ---------------------------------------------------------------------------
# Outcome cascade
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutcomeCascade:
    """The three nested outcome regressions.

    ``b`` is E(Y | M, C1, A, C0) fitted over all rows; ``b_prime`` regresses
    the pseudo-outcome B-hat evaluated at the reference arm on (C1, C0) over
    comparison-arm rows; ``b_pprime`` regresses the B'-hat pseudo-outcome on
    C0 over reference-arm rows.
    """

    b: FittedGlm
    b_prime: FittedGlm
    b_pprime: FittedGlm
    coding: TreatmentCoding


def _validate_conditioning(formula: Formula, allowed: set[str], what: str) -> None:
    extra = [name for name in formula.names() if name not in allowed]
    if extra:
        raise FormulaError(
            f"{what} may only reference {sorted(allowed)}; got extra {extra}"
        )


def fit_outcome_cascade(
    data: Dataset,
    b_formula: Formula,
    bprime_formula: Formula,
    bpprime_formula: Formula,
    coding: TreatmentCoding,
) -> OutcomeCascade:
    """Sequential least-squares fits of the outcome cascade.

    Pseudo-outcomes are recomputed from the fitted upstream model on every
    call (never cached), so bootstrap refits rebuild the full cascade.
    """
    _validate_conditioning(
        b_formula,
        {"A", "M"} | set(data.c0_names) | set(data.c1_names),
        "outcome formula",
    )
    _validate_conditioning(
        bprime_formula, set(data.c0_names) | set(data.c1_names),
        "first pseudo-outcome formula",
    )
    _validate_conditioning(
        bpprime_formula, set(data.c0_names), "second pseudo-outcome formula"
    )

    comparison = np.flatnonzero(data.a == 1.0)
    reference = np.flatnonzero(data.a == 0.0)
    if comparison.size < len(bprime_formula.terms):
        raise StratumError(
            f"comparison arm has {comparison.size} rows; cannot identify the "
            f"{len(bprime_formula.terms)} first pseudo-outcome coefficients"
        )
    if reference.size < len(bpprime_formula.terms):
        raise StratumError(
            f"reference arm has {reference.size} rows; cannot identify the "
            f"{len(bpprime_formula.terms)} second pseudo-outcome coefficients"
        )

    b = fit_on(data, b_formula, data.y, GlmFamily.LINEAR)
    u1 = b.mean(data, a_override=0)
    b_prime = fit_on(data.subset(comparison), bprime_formula, u1[comparison],
                     GlmFamily.LINEAR)
    u2 = b_prime.mean(data)
    b_pprime = fit_on(data.subset(reference), bpprime_formula, u2[reference],
                      GlmFamily.LINEAR)
    return OutcomeCascade(b=b, b_prime=b_prime, b_pprime=b_pprime, coding=coding)


def fit_propensity(
    data: Dataset,
    formula: Formula,
    family: GlmFamily,
    coding: TreatmentCoding,
) -> FittedGlm:
    """Binary-response fit of pr(A = a | conditioning set) with the recoded
    treatment as response."""
    if family is GlmFamily.LINEAR:
        raise FormulaError("propensity models must be logistic or probit")
    response = data.a
    if response.min() == response.max():
        raise DegenerateResponseError(
            "treatment column is constant; propensity is undefined"
        )
    return fit_on(data, formula, response, family)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorkingModelSpec:
    """Formulas (and treatment-model families) for all six nuisances."""

    b: Formula
    b_prime: Formula
    b_pprime: Formula
    treat_c0: Formula
    treat_c1_c0: Formula
    treat_m_c1_c0: Formula
    treat_c0_family: GlmFamily = GlmFamily.LOGISTIC
    treat_c1_c0_family: GlmFamily = GlmFamily.LOGISTIC
    treat_m_c1_c0_family: GlmFamily = GlmFamily.LOGISTIC


@dataclass(frozen=True)
class NuisanceSet:
    """The six fitted nuisances plus the positivity floor they were checked
    against and the min/max fitted treatment probabilities."""

    cascade: OutcomeCascade
    f_a_c0: PropensityModel
    c1_ratio: DensityRatioModel
    m_ratio: DensityRatioModel
    positivity_floor: float = DEFAULT_POSITIVITY_FLOOR
    diagnostics: Mapping[str, float] = field(default_factory=dict)

    @property
    def coding(self) -> TreatmentCoding:
        return self.cascade.coding


def assemble_nuisances(
    data: Dataset,
    spec: WorkingModelSpec,
    coding: TreatmentCoding,
    positivity_floor: float = DEFAULT_POSITIVITY_FLOOR,
) -> NuisanceSet:
    """Fit everything: the cascade, pr(A|C0), and the two density ratios
    built from pr(A|C1,C0) and pr(A|M,C1,C0).

    The shared pr(A|C1,C0) fit is the numerator of the C1 ratio and the
    denominator of the M ratio; pr(A|C0) doubles as the C1 ratio's
    denominator. Build the rich formulas with compatible_formula_union to
    keep the models mutually compatible.
    """
    cascade = fit_outcome_cascade(data, spec.b, spec.b_prime, spec.b_pprime, coding)
    f_a_c0 = fit_propensity(data, spec.treat_c0, spec.treat_c0_family, coding)
    f_a_c1c0 = fit_propensity(data, spec.treat_c1_c0, spec.treat_c1_c0_family, coding)
    f_a_mc1c0 = fit_propensity(data, spec.treat_m_c1_c0,
                               spec.treat_m_c1_c0_family, coding)

    diagnostics = {}
    for name, model in (("f_a_c0", f_a_c0), ("f_a_c1c0", f_a_c1c0),
                        ("f_a_mc1c0", f_a_mc1c0)):
        probs = model.mean(data)
        diagnostics[f"min_{name}"] = float(probs.min())
        diagnostics[f"max_{name}"] = float(probs.max())

    return NuisanceSet(
        cascade=cascade,
        f_a_c0=f_a_c0,
        c1_ratio=density_ratio(f_a_c1c0, f_a_c0, coding),
        m_ratio=density_ratio(f_a_mc1c0, f_a_c1c0, coding),
        positivity_floor=positivity_floor,
        diagnostics=diagnostics,
    )
