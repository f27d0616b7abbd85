"""Core machinery: normalization, inverse CDF, streams, particle systems."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resample_lab.core import (
    ParticleSystem,
    RandomStream,
    TestFunction,
    cdf_segments,
    effective_sample_size,
    inverse_cdf,
    normalize_weights,
    stratified_segments,
    uniform_draws,
    weighted_estimate,
)
from resample_lab.errors import DegenerateWeightsError, InvalidWeightError, OutOfRangeError

from oracles import dyadic_weights


class TestNormalizeWeights:
    def test_proportional(self):
        np.testing.assert_allclose(normalize_weights([2, 2, 4]), [0.25, 0.25, 0.5], rtol=0, atol=0)

    def test_single_particle(self):
        assert normalize_weights([1]).tolist() == [1.0]

    def test_all_zero_degenerate(self):
        with pytest.raises(DegenerateWeightsError):
            normalize_weights([0, 0, 0])

    @pytest.mark.parametrize("bad", [[-1, 2], [np.nan, 1], [np.inf, 1], []])
    def test_invalid_entries(self, bad):
        with pytest.raises(InvalidWeightError):
            normalize_weights(bad)

    @given(st.lists(st.integers(min_value=0, max_value=10**6), min_size=1, max_size=30).filter(lambda v: sum(v) > 0))
    @settings(deadline=None)
    def test_sums_to_one_and_proportional(self, raw):
        out = normalize_weights(raw)
        assert abs(out.sum() - 1.0) <= 1e-12
        total = sum(raw)
        np.testing.assert_allclose(out * total, raw, rtol=1e-12, atol=1e-12)


class TestInverseCdf:
    def test_boundary_is_right_closed(self):
        # u exactly on a cumulative boundary belongs to the lower index
        assert inverse_cdf(np.array([0.5, 0.5]), 0.5) == 0
        assert inverse_cdf(np.array([0.25, 0.25, 0.5]), 0.25) == 0
        assert inverse_cdf(np.array([0.25, 0.25, 0.5]), 0.5) == 1

    def test_single_particle(self):
        for u in (1e-12, 0.3, 1.0):
            assert inverse_cdf(np.array([1.0]), u) == 0

    def test_direct_scan_example(self):
        assert inverse_cdf(np.array([0.25, 0.25, 0.5]), 0.7) == 2

    @pytest.mark.parametrize("u", [0.0, -0.25, 1.0000000001, 2.0])
    def test_out_of_range(self, u):
        with pytest.raises(OutOfRangeError):
            inverse_cdf(np.array([0.5, 0.5]), u)

    def test_monotone_in_u(self):
        rng = np.random.default_rng(5)
        w = dyadic_weights(rng, 6)
        grid = np.linspace(1e-9, 1.0, 1001)
        idx = inverse_cdf(w, grid)
        assert np.all(np.diff(idx) >= 0)

    def test_zero_weight_never_selected(self):
        w = np.array([0.5, 0.0, 0.5])
        grid = np.linspace(1e-9, 1.0, 2001)
        idx = np.asarray(inverse_cdf(w, grid))
        assert not np.any(idx == 1)
        # trailing zero weight, u = 1 lands on the last positive particle
        assert inverse_cdf(np.array([0.5, 0.5, 0.0]), 1.0) == 1

    def test_selection_probability_exact(self):
        # P(inverse_cdf(U) = i) equals w_i: integrate the piecewise map
        rng = np.random.default_rng(11)
        for _ in range(20):
            w = dyadic_weights(rng, 7)
            lengths, indices = cdf_segments(w, 0.0, 1.0)
            masses = np.zeros(len(w))
            np.add.at(masses, indices, lengths)
            np.testing.assert_array_equal(masses, w)

    def test_vectorized_matches_scalar(self):
        w = np.array([0.125, 0.5, 0.375])
        us = np.array([0.1, 0.125, 0.2, 0.625, 0.99])
        vec = inverse_cdf(w, us)
        assert vec.tolist() == [inverse_cdf(w, float(u)) for u in us]


class TestUniformDraws:
    def test_count_zero(self):
        assert uniform_draws(RandomStream(1), 0).shape == (0,)

    def test_determinism_and_stream_independence(self):
        a = uniform_draws(RandomStream(123, 4), 100)
        b = uniform_draws(RandomStream(123, 4), 100)
        c = uniform_draws(RandomStream(123, 5), 100)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_open_left_closed_right(self):
        u = uniform_draws(RandomStream(7), 100_000)
        assert np.all(u > 0.0) and np.all(u <= 1.0)

    def test_law_of_large_numbers(self):
        u = uniform_draws(RandomStream(2), 100_000)
        assert abs(u.mean() - 0.5) < 0.005

    def test_negative_count_rejected(self):
        with pytest.raises(ValueError):
            uniform_draws(RandomStream(1), -1)


class TestRandomStream:
    def test_replicate_rule(self):
        base = RandomStream(9, 100)
        assert base.replicate(3) == RandomStream(9, 103)

    def test_generator_reproducible(self):
        g1 = RandomStream(42, 1).generator().random(5)
        g2 = RandomStream(42, 1).generator().random(5)
        np.testing.assert_array_equal(g1, g2)


class TestStratifiedSegments:
    def test_partition_of_unit_interval(self):
        rng = np.random.default_rng(3)
        w = dyadic_weights(rng, 9)
        lengths, particle_idx, stratum_idx = stratified_segments(w, 4)
        assert abs(lengths.sum() - 1.0) <= 1e-12
        per_stratum = np.zeros(4)
        np.add.at(per_stratum, stratum_idx, lengths)
        np.testing.assert_allclose(per_stratum, 0.25, rtol=0, atol=1e-12)
        per_particle = np.zeros(len(w))
        np.add.at(per_particle, particle_idx, lengths)
        np.testing.assert_allclose(per_particle, w, rtol=0, atol=1e-12)


class TestParticleSystem:
    def test_weights_normalized_at_construction(self):
        system = ParticleSystem([0.0, 1.0], [2.0, 6.0])
        np.testing.assert_array_equal(system.weights, [0.25, 0.75])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ParticleSystem([0.0, 1.0], [1.0])

    def test_ess_bounds(self):
        uniform = ParticleSystem.equally_weighted(np.arange(8.0))
        assert uniform.ess() == pytest.approx(8.0)
        degenerate = ParticleSystem(np.arange(4.0), [0, 0, 1, 0])
        assert degenerate.ess() == pytest.approx(1.0)
        assert effective_sample_size(np.array([1.0])) == pytest.approx(1.0)

    def test_permuted(self):
        system = ParticleSystem([10.0, 20.0, 30.0], [0.2, 0.3, 0.5])
        permuted = system.permuted([2, 0, 1])
        np.testing.assert_array_equal(permuted.positions, [30.0, 10.0, 20.0])
        np.testing.assert_array_equal(permuted.weights, [0.5, 0.2, 0.3])


class TestTestFunction:
    def test_vectorized_and_scalar_fallback(self):
        positions = np.array([1.0, 2.0, 3.0])
        vectorized = TestFunction(lambda x: x * 2, name="double")
        scalar = TestFunction(lambda x: float(x) * 2, name="double-scalar")
        np.testing.assert_array_equal(vectorized.values(positions), [2, 4, 6])
        np.testing.assert_array_equal(scalar.values(positions), [2, 4, 6])

    def test_non_finite_rejected(self):
        f = TestFunction(lambda x: np.where(x > 0, np.inf, 1.0))
        with pytest.raises(ValueError):
            f.values(np.array([-1.0, 1.0]))

    def test_builders(self):
        positions = np.array([3.0, -1.0])
        assert TestFunction.constant(2.5).values(positions).tolist() == [2.5, 2.5]
        assert TestFunction.identity().values(positions).tolist() == [3.0, -1.0]

    def test_estimate_invariant_under_permutation(self):
        rng = np.random.default_rng(17)
        system = ParticleSystem(rng.normal(size=6), dyadic_weights(rng, 6))
        f = TestFunction.identity()
        permuted = system.permuted(rng.permutation(6))
        assert weighted_estimate(system, f) == pytest.approx(weighted_estimate(permuted, f), abs=1e-15)
