"""Large-sample behavior of resampling: floor-sum limit, kappa limits, CLT scaling.

Quadrature targets are computed by deterministic composite midpoint
integration refined until two successive panel doublings agree to 1e-9,
so they are far more accurate than any Monte Carlo noise they are
compared against.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats as scipy_stats

from .core import ParticleSystem, RandomStream, TestFunction
from .errors import DegenerateKappaError, InvalidConfigError, SupportConditionViolatedError
from .filtering import FilterConfig, StateSpaceModel, run_filter
from .resampling import SchemeId
from .variance import exact_conditional_variance

#: defaults for the support-condition gate (distance-to-integer tolerance and
#: the estimated-mass threshold above which floor-limit experiments abort)
SUPPORT_TOLERANCE = 1e-6
SUPPORT_THRESHOLD = 1e-3


@dataclass(frozen=True)
class DensityPair:
    """Sampling density nu, weight function g = mu/nu, and the size ratio alpha.

    ``g`` must be nonnegative and bounded by ``g_bound``; ``domain`` is the
    1-D interval carrying all the nu-mass, used by the quadrature oracle.
    """

    nu_sampler: Callable[[int, np.random.Generator], np.ndarray]
    nu_pdf: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    g_bound: float
    alpha: float
    domain: tuple[float, float]
    name: str = "pair"

    def __post_init__(self):
        if self.alpha <= 0:
            raise InvalidConfigError("alpha must be > 0")
        lo, hi = self.domain
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise InvalidConfigError("domain must be a finite interval (lo, hi)")


def reference_pair(alpha: float = 1.0) -> DensityPair:
    """nu uniform on (0,1) with g(x) = 2x, so mu has density 2x."""
    return DensityPair(
        nu_sampler=lambda count, gen: gen.random(count),
        nu_pdf=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        g=lambda x: 2.0 * np.asarray(x, dtype=float),
        g_bound=2.0,
        alpha=alpha,
        domain=(0.0, 1.0),
        name="reference",
    )


def quadrature(
    integrand: Callable[[np.ndarray], np.ndarray],
    domain: tuple[float, float],
    min_panels: int = 1 << 20,
    tol: float = 1e-9,
    max_doublings: int = 4,
) -> float:
    """Composite midpoint rule, panels doubled until two refinements agree to tol."""
    lo, hi = domain

    def midpoint(panels: int) -> float:
        edges = np.linspace(lo, hi, panels + 1)
        mids = (edges[:-1] + edges[1:]) / 2.0
        width = (hi - lo) / panels
        return float(np.sum(np.asarray(integrand(mids), dtype=float)) * width)

    panels = min_panels
    value = midpoint(panels)
    for _ in range(max_doublings):
        panels *= 2
        refined = midpoint(panels)
        if abs(refined - value) < tol:
            return refined
        value = refined
    raise RuntimeError(f"quadrature did not converge to {tol} within {panels} panels")


def nu_integral(pair: DensityPair, integrand: Callable[[np.ndarray], np.ndarray], **kwargs) -> float:
    """Deterministic quadrature of nu(x) * integrand(x) over the pair's domain."""
    return quadrature(lambda x: pair.nu_pdf(x) * integrand(x), pair.domain, **kwargs)


def weighted_system(pair: DensityPair, m: int, stream: RandomStream) -> ParticleSystem:
    """m i.i.d. nu-draws with self-normalized weights proportional to g."""
    positions = np.asarray(pair.nu_sampler(m, stream.generator()), dtype=float)
    return ParticleSystem(positions, pair.g(positions))


def floor_weight_sum(system: ParticleSystem, f: TestFunction, n: int) -> float:
    """sum_i floor(n * w_i) / n * f(x_i)."""
    if n < 1:
        raise InvalidConfigError("n must be >= 1")
    fvals = f.values(system.positions)
    return float(np.dot(np.floor(n * system.weights) / n, fvals))


def support_condition_estimate(
    pair: DensityPair, samples: int, tolerance: float, stream: RandomStream
) -> float:
    """Estimated mu-mass of the states where alpha*g(x) is within tolerance of an integer.

    Self-normalized importance sampling from nu; returns a value in [0, 1].
    """
    if samples < 1:
        raise InvalidConfigError("samples must be >= 1")
    positions = np.asarray(pair.nu_sampler(samples, stream.generator()), dtype=float)
    gvals = np.asarray(pair.g(positions), dtype=float)
    weights = gvals / gvals.sum()
    ag = pair.alpha * gvals
    near_integer = np.abs(ag - np.round(ag)) < tolerance
    return float(np.clip(weights[near_integer].sum(), 0.0, 1.0))


def lemma1_target(pair: DensityPair, f: TestFunction) -> float:
    """Quadrature value of nu{ (1/alpha) * floor(alpha * g) * f }."""
    alpha = pair.alpha
    return nu_integral(pair, lambda x: np.floor(alpha * pair.g(x)) / alpha * f.values(x))


@dataclass
class LimitCheckResult:
    """Floor-sum estimates per population size against the quadrature target."""

    m_grid: list[int]
    n_grid: list[int]
    values: np.ndarray  # shape (replicates, len(m_grid))
    target: float
    support_violation_estimate: float

    def means(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def iqrs(self) -> np.ndarray:
        return np.percentile(self.values, 75, axis=0) - np.percentile(self.values, 25, axis=0)

    @property
    def replicates(self) -> int:
        return self.values.shape[0]


def _run_indexed(count: int, job: Callable[[int], object], threads: int) -> list:
    """Run job(0..count-1), optionally on a thread pool; output order is fixed."""
    if threads <= 1:
        return [job(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, range(count)))


def lemma1_experiment(
    pair: DensityPair,
    f: TestFunction,
    m_grid: Sequence[int],
    replicates: int,
    stream: RandomStream,
    support_samples: int = 100_000,
    threads: int = 1,
) -> LimitCheckResult:
    """Empirical check that the floor-weight sum approaches its quadrature target.

    Aborts with SupportConditionViolatedError when the estimated mass of
    near-integer alpha*g exceeds the threshold; replicate r at grid index j
    uses the derived stream ``stream.replicate(1 + j * replicates + r)``
    (offset 0 is reserved for the support check).
    """
    m_grid = [int(m) for m in m_grid]
    if sorted(m_grid) != m_grid or len(set(m_grid)) != len(m_grid):
        raise InvalidConfigError("m_grid must be strictly increasing")
    violation = support_condition_estimate(pair, support_samples, SUPPORT_TOLERANCE, stream.replicate(0))
    if violation > SUPPORT_THRESHOLD:
        raise SupportConditionViolatedError(
            f"estimated mass {violation:.3g} of near-integer alpha*g exceeds {SUPPORT_THRESHOLD}"
        )
    target = lemma1_target(pair, f)
    n_grid = [round(pair.alpha * m) for m in m_grid]
    values = np.empty((replicates, len(m_grid)))
    for j, (m, n) in enumerate(zip(m_grid, n_grid)):

        def job(r: int, m=m, n=n, j=j) -> float:
            system = weighted_system(pair, m, stream.replicate(1 + j * replicates + r))
            return floor_weight_sum(system, f, n)

        values[:, j] = _run_indexed(replicates, job, threads)
    return LimitCheckResult(m_grid, n_grid, values, target, violation)


def _floor_fraction(pair: DensityPair, x: np.ndarray) -> np.ndarray:
    return np.floor(pair.alpha * pair.g(x)) / pair.alpha


def residual_kappa(pair: DensityPair, f: TestFunction, **quad_kwargs) -> float:
    """Limit of n times the residual conditional variance, by quadrature.

    kappa = nu{(g - h) f^2} - [nu{(g - h) f}]^2 / (1 - nu{h})
    with h = floor(alpha*g)/alpha.  Raises DegenerateKappaError when the
    denominator vanishes (resampling asymptotically deterministic).
    """
    residual_part = lambda x: pair.g(x) - _floor_fraction(pair, x)
    denominator = 1.0 - nu_integral(pair, lambda x: _floor_fraction(pair, x), **quad_kwargs)
    if denominator <= 1e-12:
        raise DegenerateKappaError("1 - nu{floor(alpha g)/alpha} vanishes; no variance limit")
    second_moment = nu_integral(pair, lambda x: residual_part(x) * f.values(x) ** 2, **quad_kwargs)
    first_moment = nu_integral(pair, lambda x: residual_part(x) * f.values(x), **quad_kwargs)
    return second_moment - first_moment**2 / denominator


def multinomial_kappa(pair: DensityPair, f: TestFunction, **quad_kwargs) -> float:
    """mu(f^2) - mu(f)^2, the multinomial scaled-variance limit."""
    second = nu_integral(pair, lambda x: pair.g(x) * f.values(x) ** 2, **quad_kwargs)
    first = nu_integral(pair, lambda x: pair.g(x) * f.values(x), **quad_kwargs)
    return second - first**2


@dataclass(frozen=True)
class ScaledVarianceRow:
    n: int
    m: int
    replicates: int
    scaled_var: float
    scaled_var_stderr: float
    target: float | None

    CSV_FIELDS = ("n", "m", "replicates", "scaled_var", "scaled_var_stderr", "target")

    def to_dict(self) -> dict:
        return {field: getattr(self, field) for field in self.CSV_FIELDS}


def scaled_condvar_experiment(
    scheme: SchemeId,
    pair: DensityPair,
    f: TestFunction,
    n_grid: Sequence[int],
    replicates: int,
    stream: RandomStream,
    threads: int = 1,
) -> list[ScaledVarianceRow]:
    """Average of n x (exact conditional variance) on fresh weighted systems.

    The variance itself is evaluated exactly per replicate (closed form, or
    segment integration for systematic); only the particle positions are
    random.  Targets are attached for multinomial and residual.
    """
    if replicates < 2:
        raise InvalidConfigError("replicates must be >= 2")
    target: float | None = None
    if scheme is SchemeId.MULTINOMIAL:
        target = multinomial_kappa(pair, f)
    elif scheme is SchemeId.RESIDUAL:
        target = residual_kappa(pair, f)
    rows = []
    for j, n in enumerate(int(n) for n in n_grid):
        m = max(1, round(n / pair.alpha))

        def job(r: int, n=n, m=m, j=j) -> float:
            system = weighted_system(pair, m, stream.replicate(j * replicates + r))
            return n * exact_conditional_variance(scheme, system, f, n)

        values = np.array(_run_indexed(replicates, job, threads))
        rows.append(
            ScaledVarianceRow(
                n, m, replicates, float(values.mean()), float(values.std(ddof=1) / np.sqrt(replicates)), target
            )
        )
    return rows


@dataclass(frozen=True)
class CltRow:
    """Scaled replicate variance of the filter estimate at one population size."""

    n: int
    m: int
    replicates: int
    scaled_var: float
    scaled_var_stderr: float
    target: float | None
    mean_estimate: float
    normality_stat: float
    estimates: np.ndarray

    CSV_FIELDS = ScaledVarianceRow.CSV_FIELDS

    def to_dict(self) -> dict:
        return {field: getattr(self, field) for field in self.CSV_FIELDS}


def clt_experiment(
    scheme: SchemeId,
    model: StateSpaceModel,
    f: TestFunction,
    k: int,
    reference: float,
    n_grid: Sequence[int],
    replicates: int,
    stream: RandomStream,
    alpha: float = 1.0,
    threads: int = 1,
) -> list[CltRow]:
    """Replicated filter runs probing sqrt(n)-rate convergence at time index k.

    For each n the filter runs to horizon k+1 with m = round(n/alpha)
    initial particles, resampling with ``scheme`` at every step; replicate r
    at grid index j uses ``stream.replicate(j * replicates + r)``, so two
    schemes called with the same stream are compared on paired streams.
    Reports n times the replicate variance of the estimate, its standard
    error, and an Anderson-Darling normality statistic of
    sqrt(n) * (estimate - reference).
    """
    if replicates < 2:
        raise InvalidConfigError("replicates must be >= 2")
    rows = []
    for j, n in enumerate(int(n) for n in n_grid):
        m = max(1, round(n / alpha))
        config = FilterConfig(m=m, n=n, scheme=scheme, horizon=k + 1, resample_every=1)

        def job(r: int, config=config, j=j) -> float:
            trace = run_filter(model, config, [f], stream.replicate(j * replicates + r))
            return trace.rows[-1].estimates[f.name]

        estimates = np.array(_run_indexed(replicates, job, threads))
        centered = estimates - estimates.mean()
        variance = float(np.sum(centered**2) / (replicates - 1))
        fourth = float(np.mean(centered**4))
        var_of_var = max(fourth - variance**2, 0.0) / replicates
        normality = float(scipy_stats.anderson(np.sqrt(n) * (estimates - reference), dist="norm").statistic)
        rows.append(
            CltRow(
                n=n,
                m=m,
                replicates=replicates,
                scaled_var=n * variance,
                scaled_var_stderr=n * float(np.sqrt(var_of_var)),
                target=None,
                mean_estimate=float(estimates.mean()),
                normality_stat=normality,
                estimates=estimates,
            )
        )
    return rows
