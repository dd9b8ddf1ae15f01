"""Synthetic data-generating process, the four working-model scenarios, the
Monte Carlo driver, and ground-truth oracles.

The generator draws, in causal order, a uniform baseline covariate, a
logistic treatment, a trivariate Gaussian intermediate block, a Gaussian
mediator, and a Gaussian outcome, all with linear means. Because every mean
is linear, the target parameter has a closed form by nested substitution of
conditional means; the oracle cross-checks that closed form against a large
Monte Carlo draw of the counterfactual composition and refuses to proceed on
disagreement.

Scenario nuisances deliberately mix correctly and incorrectly specified
working models. Their nested means are built by analytic plug-in of fitted
mediator- and confounder-mean models into the fitted outcome model (all
linear, so the substitution is the exact conditional expectation under the
fitted laws); the generic pseudo-outcome regressions used for real data
would quietly repair the mis-specification and defeat the design.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .data import Dataset, Formula, TreatmentCoding, formula
from .errors import ContractError, OracleError, PathmedError
from .estimators import (
    NuisanceValues,
    beta_a_from_values,
    beta_b_from_values,
    beta_mle_from_values,
    beta_mr_from_values,
)
from .glm import FittedGlm, GlmFamily, fit_on
from .nuisance import (
    DensityRatioModel,
    check_positivity,
    density_ratio,
    fit_propensity,
)
from .stabilization import stabilize_propensity, stabilized_substitution

SIM_CODING = TreatmentCoding(a=1, a_prime=0)
SCENARIO_IDS = ("int", "a", "b", "c")
DEFAULT_ESTIMATORS = ("mle", "ipw_a", "ipw_b", "mr")
KNOWN_ESTIMATORS = ("mle", "ipw_a", "ipw_b", "mr", "sub")
ORACLE_DRAWS = 10_000_000
_ORACLE_SEED = 1_729_406

C0_NAME = "c0"
C1_NAMES = ("c11", "c12", "c13")


# ---------------------------------------------------------------------------
# Data-generating process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DgpParams:
    """Coefficients of the generative equations (defaults reproduce the
    benchmark design: p0 = 1 baseline covariate, p1 = 3 intermediates,
    standard normal noise throughout)."""

    c0_low: float = 0.0
    c0_high: float = 2.0
    a_logit: tuple[float, float] = (0.9, 0.3)
    c1_intercept: tuple[float, float, float] = (0.8, 0.6, -0.3)
    c1_on_c0: tuple[float, float, float] = (1.0, 0.1, 0.2)
    c1_on_a: tuple[float, float, float] = (0.5, -0.4, 0.5)
    c1_on_c0a: tuple[float, float, float] = (-0.1, 0.8, -0.2)
    m_intercept: float = -0.5
    m_on_c0: float = -0.2
    m_on_a: float = 0.3
    m_on_c1: tuple[float, float, float] = (-0.2, 0.1, 0.5)
    m_on_ac1: tuple[float, float, float] = (0.4, 0.0, 0.0)
    y_intercept: float = 0.2
    y_on_c0: float = 0.2
    y_on_a: float = 0.6
    y_on_c1: tuple[float, float, float] = (1.0, 0.7, 0.3)
    y_on_m: float = -0.9
    y_on_am: float = -0.8

    def c1_mean(self, c0: np.ndarray, a) -> np.ndarray:
        c0 = np.asarray(c0, dtype=float)
        a = np.broadcast_to(np.asarray(a, dtype=float), c0.shape)
        return (
            np.asarray(self.c1_intercept)
            + np.outer(c0, self.c1_on_c0)
            + np.outer(a, self.c1_on_a)
            + np.outer(c0 * a, self.c1_on_c0a)
        )

    def m_mean(self, c1: np.ndarray, a, c0: np.ndarray) -> np.ndarray:
        c0 = np.asarray(c0, dtype=float)
        a = np.broadcast_to(np.asarray(a, dtype=float), c0.shape)
        return (
            self.m_intercept
            + self.m_on_c0 * c0
            + self.m_on_a * a
            + c1 @ np.asarray(self.m_on_c1)
            + (c1 * a[:, None]) @ np.asarray(self.m_on_ac1)
        )

    def y_mean(self, m: np.ndarray, c1: np.ndarray, a, c0: np.ndarray) -> np.ndarray:
        c0 = np.asarray(c0, dtype=float)
        a = np.broadcast_to(np.asarray(a, dtype=float), c0.shape)
        return (
            self.y_intercept
            + self.y_on_c0 * c0
            + self.y_on_a * a
            + c1 @ np.asarray(self.y_on_c1)
            + self.y_on_m * m
            + self.y_on_am * a * m
        )


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def substream(seed: int, rep: int) -> np.random.Generator:
    """Counter-based replicate stream: depends only on (seed, rep), so
    parallel and serial runs agree."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def generate(params: DgpParams, n: int, seed) -> Dataset:
    """Draw n i.i.d. rows in the causal order C0 -> A -> C1 -> M -> Y."""
    if n < 1:
        raise ContractError(f"need n >= 1, got {n}")
    rng = _as_generator(seed)
    c0 = params.c0_low + (params.c0_high - params.c0_low) * rng.random(n)
    p_a = expit(params.a_logit[0] + params.a_logit[1] * c0)
    a = (rng.random(n) < p_a).astype(float)
    c1 = params.c1_mean(c0, a) + rng.standard_normal((n, 3))
    m = params.m_mean(c1, a, c0) + rng.standard_normal(n)
    y = params.y_mean(m, c1, a, c0) + rng.standard_normal(n)
    return Dataset(c0=c0, a=a, c1=c1, m=m, y=y,
                   c0_names=(C0_NAME,), c1_names=C1_NAMES)


# ---------------------------------------------------------------------------
# Ground-truth oracles
# ---------------------------------------------------------------------------

def nested_mean_closed_form(params: DgpParams, a: float, a_prime: float) -> float:
    """Exact E(Y[M{a, C1(a')}, C1(a'), a']) by nested substitution of the
    linear conditional means, then averaging over the uniform baseline."""
    # E(Y | m, c1, A=a', c0) as an affine function of (m, c1, c0)
    const = params.y_intercept + params.y_on_a * a_prime
    coef_c0 = params.y_on_c0
    coef_c1 = np.asarray(params.y_on_c1, dtype=float)
    coef_m = params.y_on_m + params.y_on_am * a_prime
    # substitute m -> E(M | c1, A=a, c0)
    const += coef_m * (params.m_intercept + params.m_on_a * a)
    coef_c0 += coef_m * params.m_on_c0
    coef_c1 = coef_c1 + coef_m * (np.asarray(params.m_on_c1)
                                  + a * np.asarray(params.m_on_ac1))
    # substitute c1 -> E(C1 | A=a', c0)
    const += coef_c1 @ (np.asarray(params.c1_intercept)
                        + a_prime * np.asarray(params.c1_on_a))
    coef_c0 += coef_c1 @ (np.asarray(params.c1_on_c0)
                          + a_prime * np.asarray(params.c1_on_c0a))
    # average over C0 ~ U(low, high)
    return float(const + coef_c0 * 0.5 * (params.c0_low + params.c0_high))


def nested_mean_monte_carlo(
    params: DgpParams,
    a: float,
    a_prime: float,
    draws: int = ORACLE_DRAWS,
    seed: int = _ORACLE_SEED,
    chunk: int = 1_000_000,
) -> tuple[float, float]:
    """Monte Carlo of the counterfactual composition: C1 under a', M under
    (a, C1(a')), Y under (a', C1(a'), M). Returns (mean, standard error)."""
    rng = _as_generator(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < draws:
        size = min(chunk, draws - done)
        c0 = params.c0_low + (params.c0_high - params.c0_low) * rng.random(size)
        c1 = params.c1_mean(c0, a_prime) + rng.standard_normal((size, 3))
        m = params.m_mean(c1, a, c0) + rng.standard_normal(size)
        y = params.y_mean(m, c1, a_prime, c0) + rng.standard_normal(size)
        total += float(y.sum())
        total_sq += float((y * y).sum())
        done += size
    mean = total / draws
    var = (total_sq - draws * mean * mean) / (draws - 1)
    return mean, float(np.sqrt(var / draws))


@dataclass(frozen=True)
class OracleResult:
    value: float
    mc_value: float
    mc_se: float
    draws: int
    method: str = "closed_form_cross_checked_vs_monte_carlo"


@lru_cache(maxsize=8)
def _oracle(params: DgpParams, a: float, a_prime: float, draws: int,
            seed: int) -> OracleResult:
    closed = nested_mean_closed_form(params, a, a_prime)
    mc, se = nested_mean_monte_carlo(params, a, a_prime, draws, seed)
    if abs(closed - mc) > 3.0 * se:
        raise OracleError(
            f"ground-truth cross-check failed: closed form {closed:.6f} vs "
            f"Monte Carlo {mc:.6f} (se {se:.2e}) at {draws} draws"
        )
    return OracleResult(value=closed, mc_value=mc, mc_se=se, draws=draws)


def beta_oracle(params: DgpParams = DgpParams(),
                coding: TreatmentCoding = SIM_CODING,
                draws: int = ORACLE_DRAWS,
                seed: int = _ORACLE_SEED) -> OracleResult:
    if coding != SIM_CODING:
        raise ContractError("the synthetic design codes the reference arm as 0 "
                            "and the comparison arm as 1")
    return _oracle(params, 1.0, 0.0, draws, seed)


def true_beta(params: DgpParams = DgpParams(),
              coding: TreatmentCoding = SIM_CODING,
              draws: int = ORACLE_DRAWS,
              seed: int = _ORACLE_SEED) -> float:
    """Cross-checked target parameter for the synthetic design."""
    return beta_oracle(params, coding, draws, seed).value


def true_mean_aprime(params: DgpParams = DgpParams(),
                     draws: int = ORACLE_DRAWS,
                     seed: int = _ORACLE_SEED) -> float:
    """Cross-checked E{Y(a')} (the nested mean with both arms at the
    reference level)."""
    return _oracle(params, 0.0, 0.0, draws, seed).value


def true_mean_a(params: DgpParams = DgpParams(),
                draws: int = ORACLE_DRAWS,
                seed: int = _ORACLE_SEED) -> float:
    """Cross-checked E{Y(a)}."""
    return _oracle(params, 1.0, 1.0, draws, seed).value


# ---------------------------------------------------------------------------
# Scenario working models
# ---------------------------------------------------------------------------

_B_CORRECT = "1 + c0 + A + c11 + c12 + c13 + M + A:M"
_B_INCORRECT = "1 + c0 + A + c11 + c12 + c13 + M"
_MMEAN_CORRECT = "1 + c0 + A + c11 + c12 + c13 + A:c11"
_MMEAN_INCORRECT = "1 + c0 + A + c11 + c12 + c13"
_C1MEAN_CORRECT = "1 + c0 + A + c0:A"
_C1MEAN_INCORRECT = "1 + c0 + A"
_TREAT_C0 = "1 + c0"
_TREAT_C1C0_CORRECT = ("1 + c0 + c0^2 + c11 + c12 + c13 + "
                       "c0:c11 + c0:c12 + c0:c13")
_TREAT_C1C0_INCORRECT = "1 + c0 + c11 + c12 + c13"
_TREAT_MC1C0_CORRECT = (_TREAT_C1C0_CORRECT +
                        " + c11^2 + c11:c12 + c11:c13 + M + c11:M")
_TREAT_MC1C0_INCORRECT = "1 + c0 + c11 + c12 + c13 + M"
_BPRIME_GENERIC = "1 + c0 + c11 + c12 + c13"
_BPPRIME_GENERIC = "1 + c0"


@dataclass(frozen=True)
class ScenarioModels:
    """Complete formula/family assignment for one scenario.

    The two density ratios each pair two treatment models whose
    specification varies independently: under scenario ``a`` the mediator
    ratio keeps the correct pr(A|C1,C0) while the confounder ratio uses the
    incorrect one, and under scenario ``c`` the confounder ratio's
    denominator stays the correct logistic pr(A|C0) while the weighting
    propensity is the mis-specified probit. ``weight_treat_c0`` is the model
    behind the 1[A=.]/f(.|C0) weights.
    """

    scenario: str
    b: Formula
    m_mean: Formula
    c1_mean: Formula
    weight_treat_c0: Formula
    weight_treat_c0_family: GlmFamily
    c1ratio_num: Formula
    c1ratio_den: Formula
    mratio_num: Formula
    mratio_den: Formula
    bprime: Formula = field(default_factory=lambda: formula(_BPRIME_GENERIC))
    bpprime: Formula = field(default_factory=lambda: formula(_BPPRIME_GENERIC))


def scenario_models(scenario: str) -> ScenarioModels:
    """Working-model menu: ``int`` all correct; ``a`` mis-specifies the
    outcome model and the confounder pieces; ``b`` the mediator pieces;
    ``c`` the weighting propensity (probit link)."""
    if scenario not in SCENARIO_IDS:
        raise ContractError(f"scenario must be one of {SCENARIO_IDS}, "
                            f"got {scenario!r}")
    b = _B_INCORRECT if scenario == "a" else _B_CORRECT
    m_mean = _MMEAN_INCORRECT if scenario == "b" else _MMEAN_CORRECT
    c1_mean = _C1MEAN_INCORRECT if scenario == "a" else _C1MEAN_CORRECT
    weight_family = GlmFamily.PROBIT if scenario == "c" else GlmFamily.LOGISTIC
    c1ratio_num = (_TREAT_C1C0_INCORRECT if scenario == "a"
                   else _TREAT_C1C0_CORRECT)
    mratio_num = (_TREAT_MC1C0_INCORRECT if scenario == "b"
                  else _TREAT_MC1C0_CORRECT)
    return ScenarioModels(
        scenario=scenario,
        b=formula(b),
        m_mean=formula(m_mean),
        c1_mean=formula(c1_mean),
        weight_treat_c0=formula(_TREAT_C0),
        weight_treat_c0_family=weight_family,
        c1ratio_num=formula(c1ratio_num),
        c1ratio_den=formula(_TREAT_C0),
        mratio_num=formula(mratio_num),
        mratio_den=formula(_TREAT_C1C0_CORRECT),
    )


@dataclass(frozen=True)
class ScenarioFit:
    models: ScenarioModels
    b: FittedGlm
    m_mean: FittedGlm
    c1_means: tuple[FittedGlm, FittedGlm, FittedGlm]
    weight_treat_c0: object
    c1_ratio: DensityRatioModel
    m_ratio: DensityRatioModel


def fit_scenario(data: Dataset, models: ScenarioModels,
                 stabilization: str | None = "bounded") -> ScenarioFit:
    """Fit every scenario working model by maximum likelihood; under bounded
    stabilization every treatment model is then logit-shifted."""
    b = fit_on(data, models.b, data.y, GlmFamily.LINEAR)
    m_mean = fit_on(data, models.m_mean, data.m, GlmFamily.LINEAR)
    c1_means = tuple(
        fit_on(data, models.c1_mean, data.column(name), GlmFamily.LINEAR)
        for name in data.c1_names
    )

    fits: dict[tuple, object] = {}

    def treat(f: Formula, family: GlmFamily):
        key = (str(f), family)
        if key not in fits:
            model = fit_propensity(data, f, family, SIM_CODING)
            if stabilization == "bounded":
                model = stabilize_propensity(model, data, SIM_CODING)
            fits[key] = model
        return fits[key]

    weight_model = treat(models.weight_treat_c0, models.weight_treat_c0_family)
    c1_ratio = density_ratio(
        treat(models.c1ratio_num, GlmFamily.LOGISTIC),
        treat(models.c1ratio_den, GlmFamily.LOGISTIC),
        SIM_CODING,
    )
    m_ratio = density_ratio(
        treat(models.mratio_num, GlmFamily.LOGISTIC),
        treat(models.mratio_den, GlmFamily.LOGISTIC),
        SIM_CODING,
    )
    return ScenarioFit(models=models, b=b, m_mean=m_mean, c1_means=c1_means,
                       weight_treat_c0=weight_model, c1_ratio=c1_ratio,
                       m_ratio=m_ratio)


def scenario_values(
    data: Dataset,
    fit: ScenarioFit,
    positivity_floor: float = 1e-3,
    on_violation: str = "warn",
) -> NuisanceValues:
    """Per-row nuisance values with the nested means built by analytic
    plug-in: the mediator column is replaced by its fitted comparison-arm
    mean, then the intermediate block by its fitted reference-arm mean (all
    models linear, so substitution is the exact conditional expectation
    under the fitted laws)."""
    p_a = fit.weight_treat_c0.mean(data)
    check_positivity(p_a, positivity_floor, "f(a|C0)", on_violation)
    m_ratio = fit.m_ratio.evaluate(data, positivity_floor=positivity_floor,
                                   on_violation=on_violation)
    c1_ratio = fit.c1_ratio.evaluate(data, positivity_floor=positivity_floor,
                                     on_violation=on_violation)

    b_ref = fit.b.mean(data, a_override=0)
    m_at_comparison = fit.m_mean.mean(data, a_override=1)
    b_prime = fit.b.mean(data, a_override=0, m_override=m_at_comparison)

    c1_at_reference = np.column_stack(
        [model.mean(data, a_override=0) for model in fit.c1_means]
    )
    data_ref = data.with_blocks(c1=c1_at_reference)
    m_ref = fit.m_mean.mean(data_ref, a_override=1)
    b_pprime = fit.b.mean(data_ref, a_override=0, m_override=m_ref)

    return NuisanceValues(p_a=p_a, m_ratio=m_ratio, c1_ratio=c1_ratio,
                          b_ref=b_ref, b_prime=b_prime, b_pprime=b_pprime)


def scenario_estimates(
    data: Dataset,
    models: ScenarioModels,
    estimators: Sequence[str] = DEFAULT_ESTIMATORS,
    stabilization: str | None = "bounded",
    positivity_floor: float = 1e-3,
) -> dict[str, float]:
    """Fit one scenario and compute the requested estimators on one
    dataset."""
    unknown = [e for e in estimators if e not in KNOWN_ESTIMATORS]
    if unknown:
        raise ContractError(f"unknown estimator(s) {unknown}; "
                            f"choose from {KNOWN_ESTIMATORS}")
    fit = fit_scenario(data, models, stabilization=stabilization)
    values = scenario_values(data, fit, positivity_floor=positivity_floor)
    out: dict[str, float] = {}
    for name in estimators:
        if name == "mle":
            out[name] = beta_mle_from_values(data, values).value
        elif name == "ipw_a":
            out[name] = beta_a_from_values(data, values).value
        elif name == "ipw_b":
            out[name] = beta_b_from_values(data, values).value
        elif name == "mr":
            out[name] = beta_mr_from_values(data, values).value
        else:
            out[name] = stabilized_substitution(
                data, models.b, models.bprime, models.bpprime,
                fit.weight_treat_c0, fit.c1_ratio, fit.m_ratio, SIM_CODING,
                positivity_floor=positivity_floor, on_violation="warn",
            ).value
    return out


# ---------------------------------------------------------------------------
# Monte Carlo driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationReport:
    scenario: str
    n: int
    reps: int
    seed: int
    beta0: float
    stabilization: str | None
    estimators: tuple[str, ...]
    estimates: Mapping[str, np.ndarray]  # NaN where the replicate failed
    failures: tuple[tuple[int, str], ...]
    oracle: OracleResult
    positivity_flags: int = 0  # replicates with near-positivity warnings

    @property
    def unstable(self) -> bool:
        return len(self.failures) > 0.05 * self.reps

    def summary_rows(self) -> list[dict]:
        rows = []
        for name in self.estimators:
            values = self.estimates[name]
            ok = values[np.isfinite(values)]
            q25, q50, q75 = np.percentile(ok, [25, 50, 75])
            rows.append({
                "scenario": self.scenario,
                "estimator": name,
                "mean": float(ok.mean()),
                "bias": float(ok.mean() - self.beta0),
                "sd": float(ok.std(ddof=1)),
                "mse": float(np.mean((ok - self.beta0) ** 2)),
                "q25": float(q25),
                "q50": float(q50),
                "q75": float(q75),
                "beta0": self.beta0,
            })
        return rows


def _mc_replicate(args) -> tuple[int, dict[str, float] | str, int]:
    (params, models, n, seed, rep, estimators, stabilization, floor) = args
    import warnings

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            data = generate(params, n, substream(seed, rep))
            estimates = scenario_estimates(data, models, estimators,
                                           stabilization, floor)
        except PathmedError as exc:
            return rep, f"{exc.code}: {exc}", len(caught)
    return rep, estimates, len(caught)


def run_monte_carlo(
    scenario: str,
    n: int,
    reps: int,
    seed: int,
    estimators: Sequence[str] = DEFAULT_ESTIMATORS,
    stabilization: str | None = "bounded",
    params: DgpParams = DgpParams(),
    positivity_floor: float = 1e-3,
    jobs: int = 1,
) -> SimulationReport:
    """Replicate the estimator-by-scenario study: per replicate, draw a
    sample, fit the scenario nuisances, and compute the requested
    estimators (bounded-weight stabilization by default). Output is
    independent of ``jobs``."""
    if reps < 2:
        raise ContractError(f"need reps >= 2, got {reps}")
    models = scenario_models(scenario)
    oracle = beta_oracle(params)

    tasks = [(params, models, n, seed, rep, tuple(estimators),
              stabilization, positivity_floor) for rep in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_mc_replicate, tasks,
                                    chunksize=max(1, reps // (4 * jobs))))
    else:
        results = [_mc_replicate(task) for task in tasks]

    estimates = {name: np.full(reps, np.nan) for name in estimators}
    failures: list[tuple[int, str]] = []
    flagged = 0
    for rep, outcome, n_warnings in results:
        flagged += 1 if n_warnings else 0
        if isinstance(outcome, str):
            failures.append((rep, outcome))
        else:
            for name, value in outcome.items():
                estimates[name][rep] = value

    return SimulationReport(
        scenario=scenario, n=n, reps=reps, seed=seed, beta0=oracle.value,
        stabilization=stabilization, estimators=tuple(estimators),
        estimates=estimates, failures=tuple(failures), oracle=oracle,
        positivity_flags=flagged,
    )


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

REPLICATES_HEADER = ("scenario", "estimator", "rep", "estimate")
SUMMARY_HEADER = ("scenario", "estimator", "mean", "bias", "sd", "mse",
                  "q25", "q50", "q75", "beta0")


def write_replicates_csv(report: SimulationReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPLICATES_HEADER)
        for name in report.estimators:
            values = report.estimates[name]
            for rep in range(report.reps):
                value = values[rep]
                writer.writerow([report.scenario, name, rep,
                                 "" if not np.isfinite(value) else repr(float(value))])


def write_summary_csv(report: SimulationReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for row in report.summary_rows():
            writer.writerow([
                row["scenario"], row["estimator"],
                *(repr(float(row[k])) for k in
                  ("mean", "bias", "sd", "mse", "q25", "q50", "q75", "beta0")),
            ])
