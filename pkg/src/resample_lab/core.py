"""Particle systems, weight normalization, inverse-CDF machinery, and seeded streams.

Everything here is a pure function of its inputs; randomness only enters
through an explicit :class:`RandomStream`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateWeightsError, InvalidWeightError, OutOfRangeError

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomStream:
    """Seeded, replayable source of uniforms.

    A stream is identified by ``(seed, stream_id)``: the same pair always
    reproduces the same draw sequence, distinct stream ids give independent
    sequences (counter-based Philox keyed on both words).
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = [self.seed & _MASK64, self.stream_id & _MASK64]
        return np.random.Generator(np.random.Philox(key=key))

    def replicate(self, index: int) -> "RandomStream":
        """Stream for replicate ``index``: same seed, stream_id + index."""
        return RandomStream(self.seed, self.stream_id + index)


def uniform_draws(stream: RandomStream, count: int) -> np.ndarray:
    """Draw ``count`` i.i.d. uniforms on the half-open interval (0, 1].

    The underlying generator emits [0, 1); the transform ``u -> 1 - u``
    shifts that to (0, 1] so an exact zero can never be produced.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    return 1.0 - stream.generator().random(count)


def normalize_weights(raw) -> np.ndarray:
    """Scale nonnegative raw weights so they sum to one.

    Raises InvalidWeightError for negative/NaN/infinite entries and
    DegenerateWeightsError when every entry is zero.
    """
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidWeightError("weights must be a non-empty 1-D sequence")
    if np.isnan(arr).any() or np.isinf(arr).any() or (arr < 0).any():
        raise InvalidWeightError("weights must be finite and >= 0")
    total = arr.sum()
    if total == 0.0:
        raise DegenerateWeightsError("all weights are zero")
    return arr / total


def inverse_cdf(weights: np.ndarray, u) -> np.ndarray | int:
    """Invert the cumulative distribution of normalized weights.

    ``u`` may be a scalar or an array of values in (0, 1].  Returns the
    0-based index i such that u lies in the half-open interval
    (sum_{j<i} w_j, sum_{j<=i} w_j]; boundaries belong to the lower index
    (right-closed convention).  Zero-weight particles own empty intervals
    and are never selected.  Cumulative sums are ordinary left-to-right
    partial sums; population sizes here are small enough that compensated
    summation would buy nothing.
    """
    weights = np.asarray(weights, dtype=float)
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr <= 0.0) or np.any(u_arr > 1.0):
        raise OutOfRangeError("u must lie in (0, 1]")
    cum = np.cumsum(weights)
    idx = np.searchsorted(cum, u_arr, side="left")
    # Float round-off can leave cum[-1] slightly below 1; any u in that
    # residue belongs to the last positively-weighted particle.
    if np.any(idx == len(weights)):
        last_positive = int(np.flatnonzero(weights > 0)[-1])
        idx = np.where(idx == len(weights), last_positive, idx)
    if np.isscalar(u) or u_arr.ndim == 0:
        return int(idx)
    return idx


def cdf_segments(weights: np.ndarray, lo: float, hi: float):
    """Partition (lo, hi] into maximal segments on which the inverse CDF is constant.

    Returns ``(lengths, indices)``: segment lengths and the 0-based particle
    index selected on each segment.  Exact up to float rounding; no quadrature.
    """
    cum = np.cumsum(np.asarray(weights, dtype=float))
    interior = np.unique(cum[(cum > lo) & (cum < hi)])
    edges = np.concatenate(([lo], interior, [hi]))
    lengths = np.diff(edges)
    keep = lengths > 0.0
    mids = (edges[:-1] + edges[1:]) / 2.0
    indices = inverse_cdf(weights, mids[keep])
    return lengths[keep], np.atleast_1d(indices)


def stratified_segments(weights: np.ndarray, n: int):
    """Split (0, 1] by both the cumulative weights and the n stratum boundaries.

    Returns ``(lengths, particle_idx, stratum_idx)`` for the maximal
    segments on which both the inverse CDF and the stratum index are
    constant.  This is the shared backbone of exact stratum integrals and
    exact per-stratum expected counts; cost O((m + n) log(m + n)).
    """
    w = np.asarray(weights, dtype=float)
    cum = np.cumsum(w)
    interior_cum = cum[(cum > 0.0) & (cum < 1.0)]
    grid = np.arange(1, n) / n
    edges = np.unique(np.concatenate(([0.0], interior_cum, grid, [1.0])))
    lengths = np.diff(edges)
    keep = lengths > 0.0
    mids = ((edges[:-1] + edges[1:]) / 2.0)[keep]
    lengths = lengths[keep]
    particle_idx = np.atleast_1d(inverse_cdf(w, mids))
    stratum_idx = np.minimum((mids * n).astype(np.int64), n - 1)
    return lengths, particle_idx, stratum_idx


def effective_sample_size(weights: np.ndarray) -> float:
    """ESS diagnostic 1 / sum(w^2): m for uniform weights, 1 when degenerate."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


@dataclass(frozen=True)
class ParticleSystem:
    """Ordered particle positions with normalized weights.

    Raw weights are normalized at construction; the particle ORDER matters
    (stratified and systematic resampling are order-sensitive).  Positions
    are stored as a float array whose leading axis indexes particles;
    scalar states use shape (m,), vector states (m, d).
    """

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float)
        if positions.ndim == 0:
            positions = positions.reshape(1)
        weights = normalize_weights(self.weights)
        if len(positions) != len(weights):
            raise ValueError("positions and weights must have the same length")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def equally_weighted(cls, positions) -> "ParticleSystem":
        positions = np.asarray(positions, dtype=float)
        m = len(positions)
        return cls(positions, np.full(m, 1.0 / m))

    @property
    def size(self) -> int:
        return len(self.weights)

    def is_equally_weighted(self, tol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.size) <= tol))

    def permuted(self, permutation) -> "ParticleSystem":
        """Same system with particles relabelled by ``permutation``."""
        perm = np.asarray(permutation)
        return ParticleSystem(self.positions[perm], self.weights[perm])

    def ess(self) -> float:
        return effective_sample_size(self.weights)


@dataclass(frozen=True)
class TestFunction:
    """A bounded scalar function of the state, evaluated particle-wise.

    ``fn`` should accept the full positions array and return one value per
    particle; plain scalar callables are mapped element-wise as a fallback.
    """

    __test__ = False  # not a pytest class, despite the name

    fn: Callable
    bound: float = math.inf
    name: str = "f"

    def values(self, positions: np.ndarray) -> np.ndarray:
        try:
            out = np.asarray(self.fn(positions), dtype=float)
        except (TypeError, ValueError):
            out = np.asarray([self.fn(x) for x in positions], dtype=float)
        if out.shape != (len(positions),):
            out = np.asarray([self.fn(x) for x in positions], dtype=float)
        if not np.all(np.isfinite(out)):
            raise ValueError(f"test function {self.name!r} produced non-finite values")
        return out

    @classmethod
    def constant(cls, value: float, name: str = "const") -> "TestFunction":
        return cls(lambda x: np.full(len(x), float(value)), bound=abs(value), name=name)

    @classmethod
    def identity(cls, bound: float = math.inf, name: str = "x") -> "TestFunction":
        return cls(lambda x: np.asarray(x, dtype=float).reshape(len(x), -1)[:, 0], bound=bound, name=name)


def weighted_estimate(system: ParticleSystem, f: TestFunction) -> float:
    """Self-normalized estimate sum_i w_i f(x_i) of the filtered moment."""
    return float(np.dot(system.weights, f.values(system.positions)))
