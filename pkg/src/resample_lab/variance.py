"""Conditional variance of the resampled estimator, per scheme.

Exact evaluators for the one-step conditional variance
Var[(1/n) sum_i f(offspring_i) | system], Monte Carlo estimation with batch
standard errors, and the interleaved two-value system on which systematic
resampling fails to dominate multinomial resampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ParticleSystem, RandomStream, TestFunction, inverse_cdf, stratified_segments
from .errors import InvalidConfigError, UnsupportedOrderingError
from .resampling import (
    SchemeId,
    residual_decomposition,
    resample,
    systematic_breakpoints,
    systematic_counts,
)


def cond_var_multinomial(system: ParticleSystem, f: TestFunction, n: int) -> float:
    """(1/n) { sum_i w_i f(x_i)^2 - [sum_i w_i f(x_i)]^2 }."""
    fvals = f.values(system.positions)
    w = system.weights
    return float((np.dot(w, fvals**2) - np.dot(w, fvals) ** 2) / n)


def cond_var_residual(system: ParticleSystem, f: TestFunction, n: int) -> float:
    """Variance of the multinomially-drawn remainder; 0 when every n*w_i is integer."""
    dec = residual_decomposition(system.weights, n)
    if dec.residual_weights is None:
        return 0.0
    fvals = f.values(system.positions)
    w = system.weights
    r = n - dec.total_floor
    return float(
        np.dot(w, fvals**2) / n
        - np.dot(dec.floor_counts, fvals**2) / n**2
        - (r / n**2) * np.dot(dec.residual_weights, fvals) ** 2
    )


def _stratified_variance(weights: np.ndarray, fvals: np.ndarray, n: int) -> float:
    # Var[(1/n) sum_k f(idx_k)] with idx_k drawn from stratum k of (0,1]:
    # (1/n^2) sum_k { n I2_k - (n I_k)^2 } where I_k, I2_k are the stratum
    # integrals of f and f^2.  The f^2 part telescopes to (1/n) sum w f^2,
    # leaving sum_k I_k^2.  Stratum integrals are finite sums over the
    # merged breakpoint segments, so the result is exact up to rounding.
    lengths, particle_idx, stratum_idx = stratified_segments(weights, n)
    integrals = np.zeros(n)
    np.add.at(integrals, stratum_idx, lengths * fvals[particle_idx])
    return float(np.dot(weights, fvals**2) / n - np.sum(integrals**2))


def cond_var_stratified(system: ParticleSystem, f: TestFunction, n: int) -> float:
    """One independent uniform per stratum; variances add across strata."""
    return _stratified_variance(system.weights, f.values(system.positions), n)


def cond_var_residual_stratified(system: ParticleSystem, f: TestFunction, n: int) -> float:
    """Residual deterministic part plus stratified draws over the residual weights."""
    dec = residual_decomposition(system.weights, n)
    if dec.residual_weights is None:
        return 0.0
    fvals = f.values(system.positions)
    r = n - dec.total_floor
    return (r / n) ** 2 * _stratified_variance(dec.residual_weights, fvals, r)


def cond_var_systematic_exact(system: ParticleSystem, f: TestFunction, n: int) -> float:
    """Exact conditional variance of systematic resampling.

    The estimator is a piecewise-constant function of the single uniform
    shift, with at most m breakpoints; its variance is a finite segment sum
    (exact up to float rounding), not a quadrature.
    """
    fvals = f.values(system.positions)
    w = system.weights
    edges = np.concatenate(([0.0], systematic_breakpoints(w, n)))
    probs = np.diff(edges)
    mids = (edges[:-1] + edges[1:]) / 2.0
    estimates = np.array([np.dot(systematic_counts(w, n, u), fvals) / n for u in mids])
    mean = float(np.dot(probs, estimates))
    return float(np.dot(probs, estimates**2) - mean**2)


def closed_form_variance(scheme: SchemeId, system: ParticleSystem, f: TestFunction, n: int) -> float | None:
    """Closed-form conditional variance, or None for systematic (none exists)."""
    dispatch = {
        SchemeId.MULTINOMIAL: cond_var_multinomial,
        SchemeId.RESIDUAL: cond_var_residual,
        SchemeId.STRATIFIED: cond_var_stratified,
        SchemeId.RESIDUAL_STRATIFIED: cond_var_residual_stratified,
    }
    fn = dispatch.get(scheme)
    return None if fn is None else fn(system, f, n)


def exact_conditional_variance(scheme: SchemeId, system: ParticleSystem, f: TestFunction, n: int) -> float:
    """Exact conditional variance for any scheme (systematic via segment integration)."""
    if scheme is SchemeId.SYSTEMATIC:
        return cond_var_systematic_exact(system, f, n)
    value = closed_form_variance(scheme, system, f, n)
    assert value is not None
    return value


def _batch_variance(samples: np.ndarray) -> tuple[float, float]:
    """Sample variance with a batch-means standard error (up to 100 batches)."""
    b = len(samples)
    if np.all(samples == samples[0]):
        # constant sample: zero by definition, not summation noise
        return 0.0, 0.0
    mean = samples.mean()
    sq = (samples - mean) ** 2
    estimate = float(sq.sum() / (b - 1))
    k = min(100, b)
    batch_means = np.array([part.mean() for part in np.array_split(sq, k)])
    stderr = float(batch_means.std(ddof=1) / math.sqrt(k) * (b / (b - 1)))
    return estimate, stderr


@dataclass(frozen=True)
class VarianceReport:
    """Per-scheme conditional-variance results with Monte Carlo uncertainty."""

    scheme: SchemeId
    n: int
    closed_form: float | None
    exact_enumeration: float | None
    mc_estimate: float
    mc_stderr: float
    replicates: int

    CSV_FIELDS = ("scheme", "n", "closed_form", "exact_enumeration", "mc_estimate", "mc_stderr", "replicates")

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "n": self.n,
            "closed_form": self.closed_form,
            "exact_enumeration": self.exact_enumeration,
            "mc_estimate": self.mc_estimate,
            "mc_stderr": self.mc_stderr,
            "replicates": self.replicates,
        }


def cond_var_mc(
    scheme: SchemeId,
    system: ParticleSystem,
    f: TestFunction,
    n: int,
    replicates: int,
    stream: RandomStream,
) -> VarianceReport:
    """Monte Carlo conditional variance of the resampled estimator.

    Replicate r resamples with the derived stream ``stream.replicate(r)``,
    so the result is independent of any execution order or thread layout.
    """
    if replicates < 2:
        raise InvalidConfigError("replicates must be >= 2")
    fvals = f.values(system.positions)
    estimates = np.empty(replicates)
    for r in range(replicates):
        out = resample(scheme, system, n, stream.replicate(r))
        estimates[r] = np.dot(out.counts, fvals) / n
    mc, stderr = _batch_variance(estimates)
    return VarianceReport(scheme, n, None, None, mc, stderr, replicates)


def variance_report(
    scheme: SchemeId,
    system: ParticleSystem,
    f: TestFunction,
    n: int,
    replicates: int,
    stream: RandomStream,
) -> VarianceReport:
    """Full report row: closed form (when one exists), exact value, and MC."""
    mc = cond_var_mc(scheme, system, f, n, replicates, stream)
    closed = closed_form_variance(scheme, system, f, n)
    exact = cond_var_systematic_exact(system, f, n) if scheme is SchemeId.SYSTEMATIC else None
    return VarianceReport(scheme, n, closed, exact, mc.mc_estimate, mc.mc_stderr, replicates)


def permuted_systematic_mc(
    system: ParticleSystem,
    f: TestFunction,
    n: int,
    replicates: int,
    stream: RandomStream,
) -> VarianceReport:
    """MC variance of systematic resampling with a fresh random relabelling per replicate.

    All randomness (permutation, then shift) is consumed sequentially from a
    single generator, so the result is deterministic given the stream.
    """
    if replicates < 2:
        raise InvalidConfigError("replicates must be >= 2")
    fvals = f.values(system.positions)
    w = system.weights
    m = system.size
    gen = stream.generator()
    offsets = np.arange(n)
    estimates = np.empty(replicates)
    for r in range(replicates):
        perm = gen.permutation(m)
        points = (offsets + (1.0 - gen.random())) / n
        indices = inverse_cdf(w[perm], points)
        estimates[r] = fvals[perm][indices].mean()
    mc, stderr = _batch_variance(estimates)
    return VarianceReport(SchemeId.SYSTEMATIC, n, None, None, mc, stderr, replicates)


_ORDERINGS = ("interleaved", "blocked", "permuted")


@dataclass(frozen=True)
class CounterExampleConfig:
    """Two-value particle population with alternating (or reordered) labels.

    The n/2 particles at ``x1`` share weight 2*omega/n each, the n/2 at
    ``x0`` share 2*(1-omega)/n, with 1/2 <= omega < 1 and n even.
    """

    n: int
    omega: float
    x0: float = 0.0
    x1: float = 1.0
    f0: float = 0.0
    f1: float = 1.0
    ordering: str = "interleaved"
    permutation_seed: int | None = None

    def __post_init__(self):
        if self.n < 2 or self.n % 2 != 0:
            raise InvalidConfigError("n must be an even integer >= 2")
        if not (0.5 <= self.omega < 1.0):
            raise InvalidConfigError("omega must satisfy 1/2 <= omega < 1")
        if self.x0 == self.x1:
            raise InvalidConfigError("x0 and x1 must be distinct")
        if self.ordering not in _ORDERINGS:
            raise InvalidConfigError(f"ordering must be one of {_ORDERINGS}")
        if self.ordering == "permuted" and self.permutation_seed is None:
            raise InvalidConfigError("permuted ordering requires permutation_seed")

    @property
    def f_gap(self) -> float:
        return abs(self.f1 - self.f0)


def make_counterexample(config: CounterExampleConfig) -> ParticleSystem:
    """Build the two-value system in the requested ordering."""
    half = config.n // 2
    positions = np.empty(config.n)
    weights = np.empty(config.n)
    positions[0::2] = config.x0
    positions[1::2] = config.x1
    weights[0::2] = 2.0 * (1.0 - config.omega) / config.n
    weights[1::2] = 2.0 * config.omega / config.n
    if config.ordering == "blocked":
        positions = np.concatenate((np.full(half, config.x0), np.full(half, config.x1)))
        weights = np.concatenate(
            (np.full(half, 2.0 * (1.0 - config.omega) / config.n), np.full(half, 2.0 * config.omega / config.n))
        )
    elif config.ordering == "permuted":
        perm = RandomStream(config.permutation_seed).generator().permutation(config.n)
        positions, weights = positions[perm], weights[perm]
    return ParticleSystem(positions, weights)


def counterexample_test_function(config: CounterExampleConfig) -> TestFunction:
    """Two-point function mapping x0 -> f0 and x1 -> f1."""
    x1, f0, f1 = config.x1, config.f0, config.f1
    return TestFunction(
        lambda x: np.where(np.asarray(x) == x1, f1, f0),
        bound=max(abs(f0), abs(f1)),
        name="two-point",
    )


class CounterExampleVariances(NamedTuple):
    multinomial: float
    residual_stratified: float
    systematic: float


def counterexample_analytic(config: CounterExampleConfig) -> CounterExampleVariances:
    """The three analytic conditional variances for the interleaved ordering.

    multinomial:          (1/n) * (1-omega) * omega * |f|^2
    residual/stratified:  (1/n) * (2*omega-1) * (1-omega) * |f|^2
    systematic:           (omega-1/2) * (1-omega) * |f|^2   (no decay in n)
    """
    if config.ordering != "interleaved":
        raise UnsupportedOrderingError("analytic formulas hold for the interleaved ordering only")
    gap2 = config.f_gap**2
    omega, n = config.omega, config.n
    return CounterExampleVariances(
        multinomial=(1.0 - omega) * omega * gap2 / n,
        residual_stratified=(2.0 * omega - 1.0) * (1.0 - omega) * gap2 / n,
        systematic=(omega - 0.5) * (1.0 - omega) * gap2,
    )
