import numpy as np
import pytest

from oracles import empirical_conditional_ratio

from conftest import CODING01, SATURATED_SPEC

from pathmed.data import Dataset, build_design, formula
from pathmed.errors import (
    DegenerateResponseError,
    FormulaError,
    PositivityError,
    StratumError,
)
from pathmed.glm import FittedGlm, GlmFamily, fit, fit_on
from pathmed.nuisance import (
    WorkingModelSpec,
    assemble_nuisances,
    compatible_formula_union,
    density_ratio,
    fit_outcome_cascade,
    fit_propensity,
)


class TestOutcomeCascade:
    def test_m_free_outcome_model_makes_bprime_redundant(self, sim_draw_small):
        # without an M term, the reference-arm prediction is already a
        # function of (C1, C0), so B' reproduces it when its formula nests
        # the outcome model's (C1, C0) terms
        data = sim_draw_small
        cascade = fit_outcome_cascade(
            data,
            b_formula=formula("1 + c0 + A + c11 + c12 + c13"),
            bprime_formula=formula("1 + c0 + c11 + c12 + c13"),
            bpprime_formula=formula("1 + c0"),
            coding=CODING01,
        )
        u1 = cascade.b.mean(data, a_override=0)
        np.testing.assert_allclose(cascade.b_prime.mean(data), u1, atol=1e-8)

    def test_constant_outcome_propagates(self, sim_draw_small):
        data = sim_draw_small.with_blocks(y=np.full(sim_draw_small.n, 3.0))
        cascade = fit_outcome_cascade(
            data,
            b_formula=formula("1 + c0 + A + c11 + M + A:M"),
            bprime_formula=formula("1 + c0 + c11"),
            bpprime_formula=formula("1 + c0"),
            coding=CODING01,
        )
        for model in (cascade.b, cascade.b_prime, cascade.b_pprime):
            np.testing.assert_allclose(model.mean(data), 3.0, atol=1e-9)

    def test_discrete_saturated_matches_enumeration(self, discrete_toy):
        # brute-force E[E{E(Y|M,C1,a',c0)|C1,a,c0}|a',c0] on the empirical law
        data = discrete_toy
        cascade = fit_outcome_cascade(data, SATURATED_SPEC.b,
                                      SATURATED_SPEC.b_prime,
                                      SATURATED_SPEC.b_pprime, CODING01)
        bpp = cascade.b_pprime.mean(data)
        for c0 in (0.0, 1.0):
            sel_c0 = data.c0[:, 0] == c0
            expected = 0.0
            ref = sel_c0 & (data.a == 0.0)
            for c1 in (0.0, 1.0):
                p_c1 = np.mean(data.c1[ref, 0] == c1)
                comp = sel_c0 & (data.a == 1.0) & (data.c1[:, 0] == c1)
                inner = 0.0
                for m in (0.0, 1.0):
                    p_m = np.mean(data.m[comp] == m)
                    cell = ref & (data.c1[:, 0] == c1) & (data.m == m)
                    inner += p_m * data.y[cell].mean()
                expected += p_c1 * inner
            np.testing.assert_allclose(bpp[sel_c0], expected, atol=1e-8)

    def test_strata_are_respected(self, sim_draw_small):
        # refitting B' with reference rows included at weight zero changes
        # nothing: the implementation must use only the comparison stratum
        data = sim_draw_small
        bprime_formula = formula("1 + c0 + c11 + c12 + c13")
        cascade = fit_outcome_cascade(
            data, formula("1 + c0 + A + c11 + c12 + c13 + M + A:M"),
            bprime_formula, formula("1 + c0"), CODING01,
        )
        u1 = cascade.b.mean(data, a_override=0)
        refit = fit(build_design(data, bprime_formula), u1, GlmFamily.LINEAR,
                    weights=(data.a == 1.0).astype(float))
        np.testing.assert_allclose(cascade.b_prime.coef, refit.coef, atol=1e-10)

    def test_empty_stratum(self, sim_draw_small):
        rows = np.flatnonzero(sim_draw_small.a == 1.0)
        data = sim_draw_small.subset(rows)
        with pytest.raises(StratumError):
            fit_outcome_cascade(data, formula("1 + c0 + A + M"),
                                formula("1 + c0"), formula("1 + c0"), CODING01)

    def test_conditioning_sets_enforced(self, sim_draw_small):
        with pytest.raises(FormulaError):
            fit_outcome_cascade(sim_draw_small, formula("1 + c0 + A + M"),
                                formula("1 + M"), formula("1 + c0"), CODING01)
        with pytest.raises(FormulaError):
            fit_outcome_cascade(sim_draw_small, formula("1 + c0 + A + M"),
                                formula("1 + c0"), formula("1 + c11"), CODING01)


class TestFitPropensity:
    def test_intercept_only_recovers_logit_share(self, sim_draw_small):
        model = fit_propensity(sim_draw_small, formula("1"),
                               GlmFamily.LOGISTIC, CODING01)
        share = sim_draw_small.a.mean()
        np.testing.assert_allclose(model.coef, [np.log(share / (1 - share))],
                                   atol=1e-9)

    def test_probit_family_accepted(self, sim_draw_small):
        model = fit_propensity(sim_draw_small, formula("1 + c0"),
                               GlmFamily.PROBIT, CODING01)
        assert model.converged
        probs = model.mean(sim_draw_small)
        assert np.all((probs > 0) & (probs < 1))

    def test_degenerate_response(self, sim_draw_small):
        rows = np.flatnonzero(sim_draw_small.a == 1.0)
        with pytest.raises(DegenerateResponseError):
            fit_propensity(sim_draw_small.subset(rows), formula("1 + c0"),
                           GlmFamily.LOGISTIC, CODING01)


class TestDensityRatio:
    def test_identical_models_give_unit_ratio(self, sim_draw_small):
        model = fit_propensity(sim_draw_small, formula("1 + c0"),
                               GlmFamily.LOGISTIC, CODING01)
        ratio = density_ratio(model, model, CODING01)
        np.testing.assert_array_equal(ratio.evaluate(sim_draw_small), 1.0)

    def test_odds_algebra(self):
        # numerator logit 0.5 + 1.0*M against denominator logit 0.5: the
        # ratio at m is exp(m)
        data = Dataset(c0=np.zeros(3), a=np.array([0.0, 1.0, 0.0]),
                       c1=np.zeros((3, 1)), m=np.array([1.0, 0.0, 2.0]),
                       y=np.zeros(3), c0_names=("c0",), c1_names=("c1",))
        numerator = FittedGlm(GlmFamily.LOGISTIC, formula("1 + M"),
                              np.array([0.5, 1.0]), True, 0)
        denominator = FittedGlm(GlmFamily.LOGISTIC, formula("1"),
                                np.array([0.5]), True, 0)
        ratio = density_ratio(numerator, denominator, CODING01)
        values = ratio.evaluate(data)
        assert abs(values[0] - 2.718282) < 1e-6
        np.testing.assert_allclose(values, np.exp(data.m), rtol=1e-12)

    def test_discrete_saturated_matches_empirical_frequencies(self, discrete_toy):
        numerator = fit_propensity(discrete_toy, SATURATED_SPEC.treat_m_c1_c0,
                                   GlmFamily.LOGISTIC, CODING01)
        denominator = fit_propensity(discrete_toy, SATURATED_SPEC.treat_c1_c0,
                                     GlmFamily.LOGISTIC, CODING01)
        ratio = density_ratio(numerator, denominator, CODING01)
        values = ratio.evaluate(discrete_toy, positivity_floor=1e-4)
        for row in (0, 17, 399, 1203):
            expected = empirical_conditional_ratio(discrete_toy, row)
            assert abs(values[row] - expected) < 1e-8

    def test_positivity_error_lists_rows(self, sim_draw_small):
        model = fit_propensity(sim_draw_small, formula("1 + c0"),
                               GlmFamily.LOGISTIC, CODING01)
        with pytest.raises(PositivityError, match="rows"):
            density_ratio(model, model, CODING01).evaluate(
                sim_draw_small, positivity_floor=0.5
            )


class TestCompatibleFormulaUnion:
    def test_base_plus_ratio_terms(self):
        out = compatible_formula_union(formula("1 + c0"), formula("c0 + c11"))
        assert str(out) == "1 + c0 + c11"

    def test_disjoint_union(self):
        out = compatible_formula_union(formula("1 + c0"), formula("M"))
        assert str(out) == "1 + c0 + M"

    def test_deduplication(self):
        out = compatible_formula_union(formula("1 + c0 + c0^2"), formula("c0^2"))
        assert str(out) == "1 + c0 + c0^2"


class TestAssembleNuisances:
    def test_simulation_draw_all_fits_converge(self, sim_draw):
        union = compatible_formula_union
        treat_c0 = formula("1 + c0")
        treat_c1c0 = union(treat_c0, formula("c0^2 + c11 + c12 + c13 + "
                                             "c0:c11 + c0:c12 + c0:c13"))
        treat_mc1c0 = union(treat_c1c0, formula("c11^2 + c11:c12 + c11:c13 + "
                                                "M + c11:M"))
        spec = WorkingModelSpec(
            b=formula("1 + c0 + A + c11 + c12 + c13 + M + A:M"),
            b_prime=formula("1 + c0 + c11 + c12 + c13"),
            b_pprime=formula("1 + c0"),
            treat_c0=treat_c0,
            treat_c1_c0=treat_c1c0,
            treat_m_c1_c0=treat_mc1c0,
        )
        nuisances = assemble_nuisances(sim_draw, spec, CODING01)
        for model in (nuisances.cascade.b, nuisances.cascade.b_prime,
                      nuisances.cascade.b_pprime, nuisances.f_a_c0,
                      nuisances.c1_ratio.numerator_propensity,
                      nuisances.m_ratio.numerator_propensity):
            assert model.converged
        assert 0 < nuisances.diagnostics["min_f_a_c0"] < \
            nuisances.diagnostics["max_f_a_c0"] < 1
        # compatibility containment: denominator terms are in the numerator
        for ratio in (nuisances.c1_ratio, nuisances.m_ratio):
            den_terms = set(ratio.denominator_propensity.formula.terms)
            num_terms = set(ratio.numerator_propensity.formula.terms)
            assert den_terms <= num_terms

    def test_single_comparison_row_is_a_stratum_error(self, sim_draw_small):
        ref_rows = np.flatnonzero(sim_draw_small.a == 0.0)
        comp_rows = np.flatnonzero(sim_draw_small.a == 1.0)[:1]
        data = sim_draw_small.subset(np.sort(np.r_[ref_rows, comp_rows]))
        spec = WorkingModelSpec(
            b=formula("1 + c0 + A + M"), b_prime=formula("1 + c0"),
            b_pprime=formula("1 + c0"), treat_c0=formula("1 + c0"),
            treat_c1_c0=formula("1 + c0 + c11"),
            treat_m_c1_c0=formula("1 + c0 + c11 + M"),
        )
        # one comparison row cannot identify the B' coefficients; the
        # cascade raises before any propensity is touched
        with pytest.raises(StratumError):
            assemble_nuisances(data, spec, CODING01)
