import numpy as np
import pytest

from conftest import CODING01

from pathmed.data import formula
from pathmed.errors import ContractError, InstabilityError, PositivityError
from pathmed.inference import bootstrap, bootstrap_table, resample_indices
from pathmed.glm import GlmFamily
from pathmed.nuisance import fit_propensity


class ConstantPipeline:
    def __call__(self, data):
        return 4.2


class MeanPipeline:
    def __call__(self, data):
        return float(data.y.mean())


class FlakyPipeline:
    """Fails (with a package error) on resamples that are too heavy on
    comparison-arm rows; the duplicate check keeps the full-sample run (which
    bootstrap performs first) healthy. Deterministic given the data."""

    def __init__(self, cutoff):
        self.cutoff = cutoff

    def __call__(self, data):
        is_resample = np.unique(data.y).size < data.n
        if is_resample and data.a.mean() > self.cutoff:
            raise PositivityError("synthetic failure")
        return float(data.y.mean())


class TestBootstrap:
    def test_constant_estimator(self, sim_draw_small):
        result = bootstrap(sim_draw_small, ConstantPipeline(), reps=25, seed=3)
        assert result.point == 4.2
        assert result.se == 0.0
        assert result.ci_lower == result.ci_upper == 4.2
        assert result.reps_succeeded == 25

    def test_determinism(self, sim_draw_small):
        first = bootstrap(sim_draw_small, MeanPipeline(), reps=50, seed=11)
        second = bootstrap(sim_draw_small, MeanPipeline(), reps=50, seed=11)
        assert first == second
        third = bootstrap(sim_draw_small, MeanPipeline(), reps=50, seed=12)
        assert third.se != first.se

    def test_jobs_do_not_change_output(self, sim_draw_small):
        serial = bootstrap(sim_draw_small, MeanPipeline(), reps=24, seed=5)
        parallel = bootstrap(sim_draw_small, MeanPipeline(), reps=24, seed=5,
                             jobs=2)
        assert serial == parallel

    def test_indices_depend_only_on_seed_and_rep(self):
        a = resample_indices(100, seed=9, rep=4)
        b = resample_indices(100, seed=9, rep=4)
        c = resample_indices(100, seed=9, rep=5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_mean_pipeline_se_is_plausible(self, sim_draw):
        # bootstrap se of the sample mean should approximate sd/sqrt(n)
        result = bootstrap(sim_draw, MeanPipeline(), reps=400, seed=21)
        analytic = sim_draw.y.std(ddof=1) / np.sqrt(sim_draw.n)
        assert 0.8 * analytic < result.se < 1.2 * analytic
        assert result.ci_lower < result.point < result.ci_upper

    def test_failed_replicates_are_excluded(self, sim_draw_small):
        share = sim_draw_small.a.mean()
        pipeline = FlakyPipeline(cutoff=share + 0.012)
        result = bootstrap(sim_draw_small, pipeline, reps=60, seed=2)
        assert 0 < result.reps_succeeded < 60

    def test_instability_error_carries_partial_results(self, sim_draw_small):
        pipeline = FlakyPipeline(cutoff=sim_draw_small.a.mean() - 0.005)
        with pytest.raises(InstabilityError) as info:
            bootstrap(sim_draw_small, pipeline, reps=40, seed=2)
        partial = info.value.partial
        assert partial is not None and "value" in partial

    def test_reps_contract(self, sim_draw_small):
        with pytest.raises(ContractError):
            bootstrap(sim_draw_small, MeanPipeline(), reps=1, seed=0)
        with pytest.raises(ContractError):
            bootstrap(sim_draw_small, MeanPipeline(), reps=10, seed=0, level=1.5)

    def test_table_shares_replicates(self, sim_draw_small):
        class TwoQuantities:
            def __call__(self, data):
                return {"mean": float(data.y.mean()),
                        "double": 2.0 * float(data.y.mean())}

        table = bootstrap_table(sim_draw_small, TwoQuantities(), reps=30, seed=7)
        assert set(table) == {"mean", "double"}
        np.testing.assert_allclose(table["double"].se, 2 * table["mean"].se,
                                   rtol=1e-12)

    def test_full_pipeline_failure_propagates(self, sim_draw_small):
        # the pipeline must run on the full sample before any resampling
        class AlwaysFails:
            def __call__(self, data):
                raise PositivityError("cannot run at all")

        with pytest.raises(PositivityError):
            bootstrap(sim_draw_small, AlwaysFails(), reps=10, seed=1)


class TestRefitsAreReal:
    def test_nuisance_refits_vary_across_resamples(self, sim_draw_small):
        # the propensity refit must differ between resamples (no caching)
        class PropensityCoef:
            def __call__(self, data):
                model = fit_propensity(data, formula("1 + c0"),
                                       GlmFamily.LOGISTIC, CODING01)
                return float(model.coef[1])

        result = bootstrap(sim_draw_small, PropensityCoef(), reps=20, seed=13)
        assert result.se > 0
