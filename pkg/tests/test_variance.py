"""Exact conditional-variance evaluators, MC estimation, and the two-value system."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resample_lab.core import ParticleSystem, RandomStream, TestFunction
from resample_lab.errors import InvalidConfigError, UnsupportedOrderingError
from resample_lab.resampling import SchemeId
from resample_lab.variance import (
    CounterExampleConfig,
    cond_var_mc,
    cond_var_multinomial,
    cond_var_residual,
    cond_var_residual_stratified,
    cond_var_stratified,
    cond_var_systematic_exact,
    counterexample_analytic,
    counterexample_test_function,
    exact_conditional_variance,
    make_counterexample,
    permuted_systematic_mc,
    variance_report,
)

import oracles

EXACT_EVALUATORS = {
    SchemeId.MULTINOMIAL: cond_var_multinomial,
    SchemeId.RESIDUAL: cond_var_residual,
    SchemeId.STRATIFIED: cond_var_stratified,
    SchemeId.SYSTEMATIC: cond_var_systematic_exact,
    SchemeId.RESIDUAL_STRATIFIED: cond_var_residual_stratified,
}

ORACLE_DISTRIBUTIONS = {
    SchemeId.MULTINOMIAL: oracles.multinomial_count_distribution,
    SchemeId.RESIDUAL: oracles.residual_count_distribution,
    SchemeId.STRATIFIED: oracles.stratified_count_distribution,
    SchemeId.SYSTEMATIC: oracles.systematic_count_distribution,
    SchemeId.RESIDUAL_STRATIFIED: oracles.residual_stratified_count_distribution,
}


def tabulated(fvals) -> TestFunction:
    fvals = np.asarray(fvals, dtype=float)
    return TestFunction(lambda x: fvals[np.asarray(x, dtype=int)], name="tab")


def system_from(weights) -> ParticleSystem:
    weights = np.asarray(weights, dtype=float)
    return ParticleSystem(np.arange(len(weights), dtype=float), weights)


class TestExactEvaluatorsAgainstEnumeration:
    @pytest.mark.parametrize("scheme", list(SchemeId), ids=lambda s: s.value)
    def test_matches_rational_oracle(self, scheme):
        rng = np.random.default_rng(31)
        for trial in range(15):
            m = int(rng.integers(2, 5))
            w = oracles.dyadic_weights(rng, m)
            n = int(rng.integers(1, 6))
            fvals = np.round(rng.uniform(-2, 2, size=m), 3)
            value = EXACT_EVALUATORS[scheme](system_from(w), tabulated(fvals), n)
            oracle = float(oracles.estimator_variance(ORACLE_DISTRIBUTIONS[scheme](w, n), fvals, n))
            assert value == pytest.approx(oracle, abs=1e-12)

    def test_hand_example_multinomial(self):
        value = cond_var_multinomial(system_from([0.5, 0.5]), tabulated([0.0, 1.0]), 4)
        assert value == pytest.approx(0.0625, abs=1e-15)


@pytest.mark.parametrize("scheme", list(SchemeId), ids=lambda s: s.value)
class TestDegenerateCases:
    def test_constant_function_zero_variance(self, scheme):
        system = system_from([0.3, 0.45, 0.25])
        value = EXACT_EVALUATORS[scheme](system, TestFunction.constant(3.7), 5)
        assert value == pytest.approx(0.0, abs=1e-14)

    def test_single_particle_zero_variance(self, scheme):
        value = EXACT_EVALUATORS[scheme](system_from([1.0]), TestFunction.identity(), 3)
        assert value == pytest.approx(0.0, abs=1e-15)


class TestResidualSpecifics:
    def test_integer_products_no_variance(self):
        assert cond_var_residual(system_from([0.6, 0.4]), tabulated([0, 1]), 5) == 0.0
        assert cond_var_residual_stratified(system_from([0.6, 0.4]), tabulated([0, 1]), 5) == 0.0

    def test_dominated_by_multinomial(self):
        rng = np.random.default_rng(32)
        for trial in range(100):
            m = int(rng.integers(2, 11))
            w = oracles.dyadic_weights(rng, m)
            n = int(rng.integers(1, 17))
            f = tabulated(rng.uniform(-1, 1, size=m))
            system = system_from(w)
            mult = cond_var_multinomial(system, f, n)
            resid = cond_var_residual(system, f, n)
            rstrat = cond_var_residual_stratified(system, f, n)
            assert resid <= mult + 1e-12
            assert rstrat <= resid + 1e-12


class TestStratifiedSpecifics:
    def test_uniform_weights_matched_strata(self):
        m = 5
        system = system_from(np.full(m, 1.0 / m))
        assert cond_var_stratified(system, tabulated(np.arange(m)), m) == pytest.approx(0.0, abs=1e-14)

    def test_dominated_by_multinomial(self):
        rng = np.random.default_rng(33)
        for trial in range(100):
            m = int(rng.integers(2, 11))
            w = oracles.dyadic_weights(rng, m)
            n = int(rng.integers(1, 17))
            f = tabulated(rng.uniform(-1, 1, size=m))
            system = system_from(w)
            assert cond_var_stratified(system, f, n) <= cond_var_multinomial(system, f, n) + 1e-12


class TestSystematicSpecifics:
    def test_half_half_always_balanced(self):
        system = system_from([0.5, 0.5])
        assert cond_var_systematic_exact(system, tabulated([-3.0, 7.0]), 2) == pytest.approx(0.0, abs=1e-15)

    def test_mean_is_unbiased(self):
        # the segment integration must reproduce the weighted mean exactly
        rng = np.random.default_rng(34)
        for _ in range(20):
            m = int(rng.integers(2, 8))
            w = oracles.dyadic_weights(rng, m)
            n = int(rng.integers(1, 9))
            fvals = rng.uniform(-1, 1, size=m)
            system = system_from(w)
            from resample_lab.resampling import systematic_breakpoints, systematic_counts

            edges = np.concatenate(([0.0], systematic_breakpoints(w, n)))
            mids = (edges[:-1] + edges[1:]) / 2
            mean = sum(
                (b - a) * np.dot(systematic_counts(w, n, mid), fvals) / n
                for a, b, mid in zip(edges[:-1], edges[1:], mids)
            )
            assert mean == pytest.approx(np.dot(w, fvals), abs=1e-12)


class TestCondVarMc:
    def test_deterministic_residual_estimates_zero(self):
        report = cond_var_mc(SchemeId.RESIDUAL, system_from([0.6, 0.4]), tabulated([0, 1]), 5, 50, RandomStream(1))
        assert report.mc_estimate == 0.0
        assert report.mc_stderr == 0.0

    def test_multinomial_converges_to_closed_form(self):
        report = cond_var_mc(
            SchemeId.MULTINOMIAL, system_from([0.5, 0.5]), tabulated([0, 1]), 4, 20_000, RandomStream(2)
        )
        assert abs(report.mc_estimate - 0.0625) <= 4 * report.mc_stderr

    def test_systematic_converges_to_exact(self):
        cfg = CounterExampleConfig(n=4, omega=0.75)
        system = make_counterexample(cfg)
        f = counterexample_test_function(cfg)
        report = cond_var_mc(SchemeId.SYSTEMATIC, system, f, 4, 20_000, RandomStream(3))
        assert abs(report.mc_estimate - 0.0625) <= 4 * report.mc_stderr + 1e-9

    @pytest.mark.parametrize("scheme", list(SchemeId), ids=lambda s: s.value)
    def test_every_scheme_converges_to_its_exact_value(self, scheme):
        rng = np.random.default_rng(35)
        w = oracles.dyadic_weights(rng, 5)
        f = tabulated(rng.uniform(-1, 1, size=5))
        system = system_from(w)
        exact = exact_conditional_variance(scheme, system, f, 6)
        report = cond_var_mc(scheme, system, f, 6, 20_000, RandomStream(36))
        assert abs(report.mc_estimate - exact) <= 4 * report.mc_stderr + 1e-9

    def test_deterministic_given_stream(self):
        a = cond_var_mc(SchemeId.STRATIFIED, system_from([0.3, 0.7]), tabulated([0, 1]), 3, 500, RandomStream(9))
        b = cond_var_mc(SchemeId.STRATIFIED, system_from([0.3, 0.7]), tabulated([0, 1]), 3, 500, RandomStream(9))
        assert a == b

    def test_replicates_floor(self):
        with pytest.raises(InvalidConfigError):
            cond_var_mc(SchemeId.MULTINOMIAL, system_from([1.0]), tabulated([1.0]), 1, 1, RandomStream(0))

    def test_report_round_trip(self):
        report = variance_report(
            SchemeId.SYSTEMATIC, system_from([0.25, 0.75]), tabulated([0, 1]), 4, 100, RandomStream(5)
        )
        payload = report.to_dict()
        assert list(payload) == list(report.CSV_FIELDS)
        assert payload["closed_form"] is None
        assert payload["exact_enumeration"] == pytest.approx(
            cond_var_systematic_exact(system_from([0.25, 0.75]), tabulated([0, 1]), 4)
        )


class TestCounterExample:
    def test_interleaved_layout(self):
        system = make_counterexample(CounterExampleConfig(n=4, omega=0.75))
        assert system.positions.tolist() == [0.0, 1.0, 0.0, 1.0]
        np.testing.assert_allclose(system.weights, [0.125, 0.375, 0.125, 0.375], atol=1e-15)

    def test_balanced_omega_gives_uniform_weights(self):
        system = make_counterexample(CounterExampleConfig(n=6, omega=0.5))
        np.testing.assert_allclose(system.weights, np.full(6, 1 / 6), atol=1e-15)

    def test_blocked_layout(self):
        system = make_counterexample(CounterExampleConfig(n=4, omega=0.75, ordering="blocked"))
        assert system.positions.tolist() == [0.0, 0.0, 1.0, 1.0]

    def test_permuted_layout_is_seeded(self):
        config = CounterExampleConfig(n=8, omega=0.75, ordering="permuted", permutation_seed=5)
        a = make_counterexample(config)
        b = make_counterexample(config)
        np.testing.assert_array_equal(a.positions, b.positions)
        assert sorted(a.positions.tolist()) == [0.0] * 4 + [1.0] * 4

    @pytest.mark.parametrize(
        "bad",
        [
            dict(n=5, omega=0.75),
            dict(n=0, omega=0.75),
            dict(n=4, omega=0.4),
            dict(n=4, omega=1.0),
            dict(n=4, omega=0.75, x0=1.0, x1=1.0),
            dict(n=4, omega=0.75, ordering="shuffled"),
            dict(n=4, omega=0.75, ordering="permuted"),
        ],
    )
    def test_invalid_configs(self, bad):
        with pytest.raises(InvalidConfigError):
            CounterExampleConfig(**bad)

    def test_analytic_values(self):
        triple = counterexample_analytic(CounterExampleConfig(n=4, omega=0.75))
        assert triple == pytest.approx((0.046875, 0.03125, 0.0625))
        # (1/n)(2w-1)(1-w)|f|^2 = 0.8 * 0.1 * 4 / 100 = 0.0032, cross-checked
        # by exact enumeration in TestExactEvaluatorsAgainstEnumeration
        triple = counterexample_analytic(CounterExampleConfig(n=100, omega=0.9, f0=0.0, f1=2.0))
        assert triple == pytest.approx((0.0036, 0.0032, 0.16))
        triple = counterexample_analytic(CounterExampleConfig(n=10, omega=0.5))
        assert triple == pytest.approx((1 / 40, 0.0, 0.0))

    def test_analytic_refuses_other_orderings(self):
        with pytest.raises(UnsupportedOrderingError):
            counterexample_analytic(CounterExampleConfig(n=4, omega=0.75, ordering="blocked"))

    def test_systematic_variance_does_not_decay(self):
        values = []
        for n in (4, 40, 400):
            cfg = CounterExampleConfig(n=n, omega=0.8)
            values.append(cond_var_systematic_exact(make_counterexample(cfg), counterexample_test_function(cfg), n))
        assert values[0] == pytest.approx(values[1], abs=1e-12)
        assert values[1] == pytest.approx(values[2], abs=1e-12)
        assert values[0] == pytest.approx(0.3 * 0.2, abs=1e-12)

    def test_residual_equals_stratified_on_interleaved(self):
        for omega in (0.6, 0.75, 0.95):
            cfg = CounterExampleConfig(n=8, omega=omega)
            system = make_counterexample(cfg)
            f = counterexample_test_function(cfg)
            assert cond_var_residual(system, f, 8) == pytest.approx(cond_var_stratified(system, f, 8), abs=1e-14)

    def test_permutation_tames_systematic(self):
        cfg = CounterExampleConfig(n=100, omega=0.75)
        system = make_counterexample(cfg)
        f = counterexample_test_function(cfg)
        report = permuted_systematic_mc(system, f, 100, 20_000, RandomStream(6))
        unpermuted = cond_var_systematic_exact(system, f, 100)
        multinomial = cond_var_multinomial(system, f, 100)
        assert report.mc_estimate + 4 * report.mc_stderr < unpermuted
        assert report.mc_estimate + 4 * report.mc_stderr < multinomial


@given(
    raw=st.lists(st.integers(min_value=1, max_value=64), min_size=2, max_size=7),
    n=st.integers(min_value=1, max_value=10),
    fseed=st.integers(min_value=0, max_value=10**6),
)
@settings(max_examples=60, deadline=None)
def test_dominance_chain_property(raw, n, fseed):
    weights = np.array(raw, dtype=float)
    system = ParticleSystem(np.arange(len(weights), dtype=float), weights)
    f = tabulated(np.random.default_rng(fseed).uniform(-2, 2, size=len(weights)))
    mult = cond_var_multinomial(system, f, n)
    resid = cond_var_residual(system, f, n)
    strat = cond_var_stratified(system, f, n)
    rstrat = cond_var_residual_stratified(system, f, n)
    assert resid <= mult + 1e-12
    assert strat <= mult + 1e-12
    assert rstrat <= resid + 1e-12
    for value in (mult, resid, strat, rstrat):
        assert value >= -1e-12
    assert exact_conditional_variance(SchemeId.SYSTEMATIC, system, f, n) >= -1e-12
