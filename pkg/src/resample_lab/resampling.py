"""The four classical resampling schemes plus the residual-stratified combination.

Each scheme maps a weighted particle system to ``n`` equally-weighted
offspring under the unbiasedness constraint E[N_i | system] = n * w_i.
Offspring index layout is deterministic: draw order for multinomial,
stratum order for stratified/systematic, and ancestor-major deterministic
copies followed by the random draws for the residual schemes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import ParticleSystem, RandomStream, inverse_cdf, stratified_segments, uniform_draws
from .errors import InvalidConfigError


class SchemeId(enum.Enum):
    """Names of the supported resampling schemes."""

    MULTINOMIAL = "multinomial"
    RESIDUAL = "residual"
    STRATIFIED = "stratified"
    SYSTEMATIC = "systematic"
    RESIDUAL_STRATIFIED = "residual-stratified"

    @classmethod
    def parse(cls, name: str) -> "SchemeId":
        """Case-insensitive lookup; raises InvalidConfigError for unknown names."""
        normalized = name.strip().lower()
        for scheme in cls:
            if scheme.value == normalized:
                return scheme
        valid = ", ".join(s.value for s in cls)
        raise InvalidConfigError(f"unknown scheme {name!r}; valid schemes: {valid}")

    def __str__(self) -> str:
        return self.value


def valid_scheme_names() -> list[str]:
    return [s.value for s in SchemeId]


@dataclass(frozen=True)
class ResampleOutput:
    """Selected ancestor indices (length n) and duplication counts (length m)."""

    indices: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "counts", counts)
        if counts.sum() != len(indices):
            raise ValueError("counts must sum to the number of offspring")
        if not np.array_equal(np.bincount(indices, minlength=len(counts)), counts):
            raise ValueError("counts inconsistent with indices")

    @property
    def n(self) -> int:
        return len(self.indices)

    @property
    def m(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class ResidualDecomposition:
    """Deterministic floor counts, their total R, and the residual weights.

    ``residual_weights`` is None exactly when R == n (fully deterministic
    resampling; the residual-weight formula would divide by zero).
    Satisfies n*w_i - floor(n*w_i) == (n - R) * residual_weights[i].
    """

    floor_counts: np.ndarray
    total_floor: int
    residual_weights: np.ndarray | None


def residual_decomposition(weights: np.ndarray, n: int) -> ResidualDecomposition:
    scaled = n * np.asarray(weights, dtype=float)
    floors = np.floor(scaled).astype(np.int64)
    total = int(floors.sum())
    if total >= n:
        return ResidualDecomposition(floors, total, None)
    residual = (scaled - floors) / (n - total)
    return ResidualDecomposition(floors, total, residual)


def _require_n(n: int) -> None:
    if n < 1:
        raise InvalidConfigError("number of offspring n must be >= 1")


def _output_from_indices(indices: np.ndarray, m: int) -> ResampleOutput:
    indices = np.asarray(indices, dtype=np.int64)
    return ResampleOutput(indices, np.bincount(indices, minlength=m))


def multinomial_resample(system: ParticleSystem, n: int, stream: RandomStream) -> ResampleOutput:
    """n conditionally i.i.d. inverse-CDF draws from the weighted empirical law."""
    _require_n(n)
    u = uniform_draws(stream, n)
    indices = inverse_cdf(system.weights, u)
    return _output_from_indices(indices, system.size)


def stratified_resample(system: ParticleSystem, n: int, stream: RandomStream) -> ResampleOutput:
    """One independent uniform per stratum ((i-1)/n, i/n], inverted through the CDF."""
    _require_n(n)
    u = uniform_draws(stream, n)
    points = (np.arange(n) + u) / n
    indices = inverse_cdf(system.weights, points)
    return _output_from_indices(indices, system.size)


def systematic_counts(weights: np.ndarray, n: int, u01: float) -> np.ndarray:
    """Duplication counts for the systematic scheme at shift u01 in (0, 1].

    The single physical draw U on (0, 1/n] is represented by u01 = n*U;
    stratum i then uses the point ((i-1) + u01) / n.  This map is the
    scheme: both the sampler and the exact variance integrator call it.
    """
    points = (np.arange(n) + u01) / n
    indices = inverse_cdf(weights, points)
    return np.bincount(indices, minlength=len(weights))


def systematic_breakpoints(weights: np.ndarray, n: int) -> np.ndarray:
    """Sorted breakpoints of u01 -> counts in (0, 1]; at most m of them.

    Between consecutive breakpoints the count vector is constant, so exact
    expectations over the single uniform reduce to finite segment sums.
    """
    cum = np.cumsum(np.asarray(weights, dtype=float))[:-1]
    scaled = cum * n
    frac = scaled - np.floor(scaled)
    frac = frac[(frac > 0.0) & (frac < 1.0)]
    return np.unique(np.concatenate((frac, [1.0])))


def systematic_resample(system: ParticleSystem, n: int, stream: RandomStream) -> ResampleOutput:
    """All strata share a single uniform shift; exactly one draw is consumed."""
    _require_n(n)
    u01 = float(uniform_draws(stream, 1)[0])
    points = (np.arange(n) + u01) / n
    indices = inverse_cdf(system.weights, points)
    return _output_from_indices(indices, system.size)


def _residual_indices(floors: np.ndarray, random_indices: np.ndarray) -> np.ndarray:
    deterministic = np.repeat(np.arange(len(floors)), floors)
    return np.concatenate((deterministic, np.asarray(random_indices, dtype=np.int64)))


def residual_resample(system: ParticleSystem, n: int, stream: RandomStream) -> ResampleOutput:
    """floor(n*w_i) deterministic copies plus a multinomial draw of the remainder.

    When every n*w_i is an integer the output is fully deterministic and no
    uniforms are consumed.
    """
    _require_n(n)
    dec = residual_decomposition(system.weights, n)
    if dec.residual_weights is None:
        return _output_from_indices(_residual_indices(dec.floor_counts, np.empty(0, np.int64)), system.size)
    u = uniform_draws(stream, n - dec.total_floor)
    random_indices = inverse_cdf(dec.residual_weights, u)
    return _output_from_indices(_residual_indices(dec.floor_counts, random_indices), system.size)


def residual_stratified_resample(system: ParticleSystem, n: int, stream: RandomStream) -> ResampleOutput:
    """Residual scheme with the n-R random draws stratified over the residual weights.

    Strata are the n-R equal sub-intervals of (0, 1] (width 1/(n-R)).
    """
    _require_n(n)
    dec = residual_decomposition(system.weights, n)
    if dec.residual_weights is None:
        return _output_from_indices(_residual_indices(dec.floor_counts, np.empty(0, np.int64)), system.size)
    r = n - dec.total_floor
    u = uniform_draws(stream, r)
    points = (np.arange(r) + u) / r
    random_indices = inverse_cdf(dec.residual_weights, points)
    return _output_from_indices(_residual_indices(dec.floor_counts, random_indices), system.size)


_SCHEME_FUNCTIONS = {
    SchemeId.MULTINOMIAL: multinomial_resample,
    SchemeId.RESIDUAL: residual_resample,
    SchemeId.STRATIFIED: stratified_resample,
    SchemeId.SYSTEMATIC: systematic_resample,
    SchemeId.RESIDUAL_STRATIFIED: residual_stratified_resample,
}


def resample(scheme: SchemeId, system: ParticleSystem, n: int, stream: RandomStream) -> ResampleOutput:
    """Dispatch to the named scheme."""
    return _SCHEME_FUNCTIONS[scheme](system, n, stream)


def apply_resample(system: ParticleSystem, output: ResampleOutput) -> ParticleSystem:
    """Materialize the offspring system: ancestor positions, weights all 1/n."""
    if output.m != system.size:
        raise ValueError("resample output does not match system size")
    if np.any(output.indices < 0) or np.any(output.indices >= system.size):
        raise ValueError("ancestor index out of bounds")
    positions = system.positions[output.indices]
    return ParticleSystem(positions, np.full(output.n, 1.0 / output.n))


def _stratified_expected_counts(weights: np.ndarray, n: int) -> np.ndarray:
    lengths, particle_idx, _ = stratified_segments(weights, n)
    expected = np.zeros(len(weights))
    np.add.at(expected, particle_idx, n * lengths)
    return expected


def exact_expected_counts(scheme: SchemeId, system: ParticleSystem, n: int) -> np.ndarray:
    """E[N_i | system] computed by exact integration over the scheme's uniforms.

    Piecewise-constant interval arithmetic only; no sampling.  Useful as the
    unbiasedness check E[N_i] == n * w_i.
    """
    _require_n(n)
    w = system.weights
    if scheme is SchemeId.MULTINOMIAL:
        cum = np.cumsum(w)
        lengths = np.diff(np.concatenate(([0.0], cum)))
        return n * lengths
    if scheme is SchemeId.STRATIFIED:
        return _stratified_expected_counts(w, n)
    if scheme is SchemeId.SYSTEMATIC:
        edges = np.concatenate(([0.0], systematic_breakpoints(w, n)))
        expected = np.zeros(system.size)
        for a, b in zip(edges[:-1], edges[1:]):
            expected += (b - a) * systematic_counts(w, n, (a + b) / 2.0)
        return expected
    dec = residual_decomposition(w, n)
    expected = dec.floor_counts.astype(float)
    if dec.residual_weights is None:
        return expected
    r = n - dec.total_floor
    if scheme is SchemeId.RESIDUAL:
        cum = np.cumsum(dec.residual_weights)
        expected += r * np.diff(np.concatenate(([0.0], cum)))
        return expected
    if scheme is SchemeId.RESIDUAL_STRATIFIED:
        return expected + _stratified_expected_counts(dec.residual_weights, r)
    raise InvalidConfigError(f"unknown scheme {scheme!r}")


def _batched_counts_from_points(weights: np.ndarray, points: np.ndarray, m: int) -> np.ndarray:
    """Per-row duplication counts for a (replicates, draws) matrix of CDF points."""
    indices = inverse_cdf(weights, points)
    counts = np.zeros((points.shape[0], m), dtype=np.int64)
    # one-hot reduction in chunks to bound memory at ~2e7 cells
    chunk = max(1, int(2e7) // max(1, points.shape[1] * m))
    for start in range(0, points.shape[0], chunk):
        block = indices[start : start + chunk]
        counts[start : start + chunk] = (block[:, :, None] == np.arange(m)).sum(axis=1)
    return counts


def mc_counts(
    scheme: SchemeId, system: ParticleSystem, n: int, replicates: int, stream: RandomStream
) -> np.ndarray:
    """Duplication counts for ``replicates`` independent resampling draws.

    All uniforms come from a single batched draw on ``stream`` (row r holds
    replicate r's draws), so the result is deterministic given the stream.
    """
    _require_n(n)
    if replicates < 1:
        raise InvalidConfigError("replicates must be >= 1")
    w = system.weights
    m = system.size
    gen = stream.generator()
    if scheme is SchemeId.MULTINOMIAL:
        u = 1.0 - gen.random((replicates, n))
        return _batched_counts_from_points(w, u, m)
    if scheme is SchemeId.STRATIFIED:
        u = 1.0 - gen.random((replicates, n))
        return _batched_counts_from_points(w, (np.arange(n) + u) / n, m)
    if scheme is SchemeId.SYSTEMATIC:
        u01 = 1.0 - gen.random((replicates, 1))
        return _batched_counts_from_points(w, (np.arange(n) + u01) / n, m)
    dec = residual_decomposition(w, n)
    base = np.tile(dec.floor_counts, (replicates, 1))
    if dec.residual_weights is None:
        return base
    r = n - dec.total_floor
    u = 1.0 - gen.random((replicates, r))
    if scheme is SchemeId.RESIDUAL:
        points = u
    elif scheme is SchemeId.RESIDUAL_STRATIFIED:
        points = (np.arange(r) + u) / r
    else:
        raise InvalidConfigError(f"unknown scheme {scheme!r}")
    return base + _batched_counts_from_points(dec.residual_weights, points, m)


def mc_expected_counts(
    scheme: SchemeId, system: ParticleSystem, n: int, replicates: int, stream: RandomStream
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo mean of N_i with its standard error, per ancestor."""
    counts = mc_counts(scheme, system, n, replicates, stream)
    mean = counts.mean(axis=0)
    if replicates > 1:
        stderr = counts.std(axis=0, ddof=1) / np.sqrt(replicates)
    else:
        stderr = np.zeros(system.size)
    return mean, stderr
