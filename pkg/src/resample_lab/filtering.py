"""Sequential importance sampling with resampling, and the linear-Gaussian oracle.

The engine never sees raw observations: a model closes over its data and
exposes the per-step likelihood as a function of the state.  Propagation
and resampling draw from disjoint derived streams so swapping the
resampling scheme does not perturb the propagation draws.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import ParticleSystem, RandomStream, TestFunction, weighted_estimate
from .errors import DegenerateWeightsError, InvalidConfigError, InvalidWeightError
from .resampling import SchemeId, apply_resample, resample

# Stream-id layout inside one filter run: step k propagates from block k,
# resamples from block k + _RESAMPLE_OFFSET.  Replicate fan-outs (offsets
# < 2^31) therefore never collide with per-step streams.
_STEP_BLOCK = 1 << 32
_RESAMPLE_OFFSET = 1 << 31


def propagation_stream(base: RandomStream, k: int) -> RandomStream:
    return RandomStream(base.seed, base.stream_id + k * _STEP_BLOCK)


def resampling_stream(base: RandomStream, k: int) -> RandomStream:
    return RandomStream(base.seed, base.stream_id + k * _STEP_BLOCK + _RESAMPLE_OFFSET)


@dataclass(frozen=True)
class StateSpaceModel:
    """Samplers and densities of a state-space model, as callables.

    initial_sampler(count, gen)        draws from the time-0 proposal
    initial_weight(positions)          initial importance ratio per particle
    proposal_sampler(positions, k, gen) one transition step of every particle
    weight_ratio(prev, new, k)         incremental importance ratio
    likelihood(positions, k)           observation likelihood g_k (bootstrap mode)

    In bootstrap mode (proposal equal to the state transition) the weight
    ratio reduces to the likelihood of the new positions.
    """

    initial_sampler: Callable[[int, np.random.Generator], np.ndarray]
    initial_weight: Callable[[np.ndarray], np.ndarray]
    proposal_sampler: Callable[[np.ndarray, int, np.random.Generator], np.ndarray]
    weight_ratio: Callable[[np.ndarray, np.ndarray, int], np.ndarray]
    likelihood: Callable[[np.ndarray, int], np.ndarray]
    likelihood_bound: float = math.inf


@dataclass(frozen=True)
class FilterConfig:
    m: int
    n: int
    scheme: SchemeId
    horizon: int
    resample_every: int | None = 1

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise InvalidConfigError("particle counts m and n must be >= 1")
        if self.horizon < 0:
            raise InvalidConfigError("horizon must be >= 0")
        if self.resample_every is not None and self.resample_every < 1:
            raise InvalidConfigError("resample_every must be a positive integer or None")


@dataclass(frozen=True)
class TraceRow:
    step: int
    estimates: dict[str, float]
    ess: float
    logz_increment: float
    resampled: bool


@dataclass
class FilterTrace:
    """Per-step filtered estimates and diagnostics."""

    function_names: list[str]
    rows: list[TraceRow] = field(default_factory=list)

    def steps(self) -> np.ndarray:
        return np.array([row.step for row in self.rows], dtype=int)

    def estimate_series(self, name: str) -> np.ndarray:
        return np.array([row.estimates[name] for row in self.rows])

    def ess_series(self) -> np.ndarray:
        return np.array([row.ess for row in self.rows])

    def logz_series(self) -> np.ndarray:
        return np.array([row.logz_increment for row in self.rows])

    def resampled_series(self) -> np.ndarray:
        return np.array([row.resampled for row in self.rows], dtype=bool)

    def header(self) -> list[str]:
        return ["k"] + [f"estimate_{name}" for name in self.function_names] + ["ess", "resampled"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="\n") as handle:
            writer = csv.writer(handle)
            writer.writerow(self.header())
            for row in self.rows:
                writer.writerow(
                    [row.step]
                    + [repr(row.estimates[name]) for name in self.function_names]
                    + [repr(row.ess), int(row.resampled)]
                )

    def to_dict(self) -> dict:
        return {
            "header": self.header(),
            "rows": [
                {
                    "k": row.step,
                    "estimates": row.estimates,
                    "ess": row.ess,
                    "logz_increment": row.logz_increment,
                    "resampled": row.resampled,
                }
                for row in self.rows
            ],
        }


def _validated_raw_weights(raw, context: str) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if np.isnan(raw).any() or np.isinf(raw).any() or (raw < 0).any():
        raise InvalidWeightError(f"model produced invalid weights {context}")
    if raw.sum() == 0.0:
        raise DegenerateWeightsError(f"all weights vanished {context}")
    return raw


def _init(model: StateSpaceModel, m: int, stream: RandomStream) -> tuple[ParticleSystem, float]:
    gen = stream.generator()
    positions = np.asarray(model.initial_sampler(m, gen), dtype=float)
    raw = _validated_raw_weights(model.initial_weight(positions), "at initialization")
    return ParticleSystem(positions, raw), float(np.log(raw.mean()))


def _step(
    system: ParticleSystem, model: StateSpaceModel, k: int, stream: RandomStream
) -> tuple[ParticleSystem, float]:
    gen = stream.generator()
    new_positions = np.asarray(model.proposal_sampler(system.positions, k, gen), dtype=float)
    ratios = model.weight_ratio(system.positions, new_positions, k)
    raw = _validated_raw_weights(system.weights * np.asarray(ratios, dtype=float), f"at time {k}")
    return ParticleSystem(new_positions, raw), float(np.log(raw.sum()))


def sisr_init(model: StateSpaceModel, m: int, stream: RandomStream) -> ParticleSystem:
    """Draw m particles from the time-0 proposal and weight them."""
    if m < 1:
        raise InvalidConfigError("m must be >= 1")
    return _init(model, m, stream)[0]


def sisr_step(
    system: ParticleSystem, model: StateSpaceModel, k: int, stream: RandomStream
) -> ParticleSystem:
    """Propagate every particle one step and update the weights multiplicatively."""
    return _step(system, model, k, stream)[0]


def _trace_row(
    system: ParticleSystem, k: int, functions: Sequence[TestFunction], logz_inc: float, resampled: bool
) -> TraceRow:
    estimates = {f.name: weighted_estimate(system, f) for f in functions}
    return TraceRow(k, estimates, system.ess(), logz_inc, resampled)


def bootstrap_step(
    system: ParticleSystem,
    model: StateSpaceModel,
    k: int,
    n: int,
    scheme: SchemeId,
    stream: RandomStream,
    functions: Sequence[TestFunction] = (),
) -> tuple[ParticleSystem, TraceRow]:
    """One prediction/filtering cycle of the bootstrap filter.

    Extends the equally-weighted population, reweights by the observation
    likelihood, records the estimates, then resamples down to n
    equally-weighted particles.
    """
    if not system.is_equally_weighted():
        raise InvalidConfigError("bootstrap_step requires an equally-weighted input population")
    weighted, logz_inc = _step(system, model, k, propagation_stream(stream, k))
    row = _trace_row(weighted, k, functions, logz_inc, resampled=True)
    out = resample(scheme, weighted, n, resampling_stream(stream, k))
    return apply_resample(weighted, out), row


def run_filter(
    model: StateSpaceModel,
    config: FilterConfig,
    functions: Sequence[TestFunction],
    stream: RandomStream,
) -> FilterTrace:
    """Run the filter for ``config.horizon`` steps and record one row per step.

    Estimates are taken on the weighted population before resampling.
    Resampling to ``config.n`` particles happens after every
    ``resample_every``-th step (never, when ``resample_every`` is None).
    Step errors carry the failing time index.
    """
    trace = FilterTrace([f.name for f in functions])
    system = None
    for k in range(config.horizon):
        if k == 0:
            system, logz_inc = _init(model, config.m, propagation_stream(stream, 0))
        else:
            system, logz_inc = _step(system, model, k, propagation_stream(stream, k))
        due = config.resample_every is not None and (k + 1) % config.resample_every == 0
        trace.rows.append(_trace_row(system, k, functions, logz_inc, due))
        if due:
            out = resample(config.scheme, system, config.n, resampling_stream(stream, k))
            system = apply_resample(system, out)
    return trace


@dataclass(frozen=True)
class LinearGaussianParams:
    """x_{k+1} = a x_k + sigma_w w_k,  y_k = x_k + sigma_v v_k,  x_0 ~ N(mean, var)."""

    a: float = 0.9
    sigma_w: float = 0.6
    sigma_v: float = 1.0
    prior_mean: float = 0.0
    prior_var: float = 1.0

    def __post_init__(self):
        if self.sigma_w <= 0 or self.sigma_v <= 0 or self.prior_var <= 0:
            raise InvalidConfigError("noise variances must be positive")


def kalman_oracle(params: LinearGaussianParams, observations) -> tuple[np.ndarray, np.ndarray]:
    """Exact filtered means and variances for the scalar linear-Gaussian model."""
    observations = np.asarray(observations, dtype=float)
    means = np.empty(len(observations))
    variances = np.empty(len(observations))
    pred_mean, pred_var = params.prior_mean, params.prior_var
    r = params.sigma_v**2
    for k, y in enumerate(observations):
        gain = pred_var / (pred_var + r)
        means[k] = pred_mean + gain * (y - pred_mean)
        variances[k] = (1.0 - gain) * pred_var
        pred_mean = params.a * means[k]
        pred_var = params.a**2 * variances[k] + params.sigma_w**2
    return means, variances


def gaussian_likelihood(y: float, x: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-((y - x) ** 2) / (2.0 * sigma**2)) / math.sqrt(2.0 * math.pi * sigma**2)


def linear_gaussian_model(params: LinearGaussianParams, observations) -> StateSpaceModel:
    """Bootstrap-mode model: proposal is the state transition, ratio is the likelihood."""
    observations = np.asarray(observations, dtype=float)

    def likelihood(x, k):
        return gaussian_likelihood(observations[k], x, params.sigma_v)

    return StateSpaceModel(
        initial_sampler=lambda count, gen: params.prior_mean
        + math.sqrt(params.prior_var) * gen.standard_normal(count),
        initial_weight=lambda positions: likelihood(positions, 0),
        proposal_sampler=lambda positions, k, gen: params.a * positions
        + params.sigma_w * gen.standard_normal(len(positions)),
        weight_ratio=lambda prev, new, k: likelihood(new, k),
        likelihood=likelihood,
        likelihood_bound=1.0 / math.sqrt(2.0 * math.pi * params.sigma_v**2),
    )


def generate_observations(params: LinearGaussianParams, horizon: int, stream: RandomStream) -> np.ndarray:
    """Simulate a synthetic observation sequence from the model."""
    gen = stream.generator()
    x = params.prior_mean + math.sqrt(params.prior_var) * gen.standard_normal()
    observations = np.empty(horizon)
    for k in range(horizon):
        observations[k] = x + params.sigma_v * gen.standard_normal()
        x = params.a * x + params.sigma_w * gen.standard_normal()
    return observations


def save_observations(path, observations) -> None:
    with open(path, "w", newline="\n") as handle:
        writer = csv.writer(handle)
        writer.writerow(["k", "y"])
        for k, y in enumerate(np.asarray(observations, dtype=float)):
            writer.writerow([k, repr(float(y))])


def load_observations(path) -> np.ndarray:
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        pairs = sorted((int(row["k"]), float(row["y"])) for row in reader)
    return np.array([y for _, y in pairs])


# Fixed synthetic sequence shipped with the package so reference numbers are
# reproducible bit-for-bit.
REFERENCE_OBSERVATION_SEED = 20_050_217
REFERENCE_HORIZON = 50


def packaged_observations_path() -> Path:
    return Path(__file__).parent / "data" / "lingauss_obs_50.csv"


def packaged_observations() -> np.ndarray:
    return load_observations(packaged_observations_path())
