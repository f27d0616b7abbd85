"""Command-line front end: reproducible experiments, CSV/JSON artifacts.

Every command writes its primary table to ``--output`` (CSV by default,
JSON mirror with ``--format json``) plus a ``<output>.meta.json`` sidecar
echoing the full configuration, the effective seed, and the version string,
so artifacts are reproducible bit-for-bit.  Exit codes: 0 success, 2
usage/config error, 3 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import ParticleSystem, RandomStream, TestFunction
from .errors import (
    DegenerateKappaError,
    DegenerateWeightsError,
    InvalidConfigError,
    ResampleLabError,
    SupportConditionViolatedError,
)
from .filtering import (
    FilterConfig,
    LinearGaussianParams,
    kalman_oracle,
    linear_gaussian_model,
    load_observations,
    packaged_observations_path,
    run_filter,
)
from .resampling import SchemeId, resample, valid_scheme_names
from .variance import (
    CounterExampleConfig,
    counterexample_analytic,
    counterexample_test_function,
    make_counterexample,
    variance_report,
)
from . import asymptotics

SEED_ENV_VAR = "RESAMPLE_LAB_SEED"

_FUNCTIONS = {
    "one": lambda: TestFunction.constant(1.0, name="one"),
    "x": lambda: TestFunction(lambda x: np.asarray(x, dtype=float), name="x"),
}

_MODELS = ("lingauss",)
_PAIRS = ("reference",)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _json_safe(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value]
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _write_artifact(args, header: list[str], rows: list[list], metadata: dict) -> None:
    output = Path(args.output)
    metadata = {
        "version": __version__,
        "command": args.command_name,
        "seed": args.effective_seed,
        "format": args.format,
        "threads": args.threads,
        **metadata,
    }
    if args.format == "csv":
        with open(output, "w", newline="\n") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    else:
        payload = {"header": header, "rows": [[_json_safe(v) for v in row] for row in rows]}
        with open(output, "w", newline="\n") as handle:
            json.dump(payload, handle, sort_keys=True, indent=2)
            handle.write("\n")
    sidecar = output.with_name(output.name + ".meta.json")
    with open(sidecar, "w", newline="\n") as handle:
        json.dump(_json_safe(metadata), handle, sort_keys=True, indent=2)
        handle.write("\n")
    print(f"wrote {output} and {sidecar}")


def _parse_weights(args) -> np.ndarray:
    if args.weights is not None:
        tokens = [tok for tok in args.weights.split(",") if tok.strip()]
    elif args.weights_file is not None:
        tokens = [line.strip() for line in Path(args.weights_file).read_text().splitlines() if line.strip()]
    else:
        raise InvalidConfigError("provide --weights or --weights-file")
    try:
        return np.array([float(tok) for tok in tokens])
    except ValueError as exc:
        raise InvalidConfigError(f"could not parse weights: {exc}") from exc


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise InvalidConfigError(f"could not parse {flag}: {exc}") from exc


def _parse_int_list(text: str, flag: str) -> list[int]:
    return [int(v) for v in _parse_float_list(text, flag)]


def _parse_counterexample_spec(text: str, seed: int) -> CounterExampleConfig:
    fields: dict = {}
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if "=" not in token:
            raise InvalidConfigError(f"bad counterexample token {token!r}; expected key=value")
        key, value = token.split("=", 1)
        key = key.strip()
        if key in ("n", "permutation_seed"):
            fields[key] = int(float(value))
        elif key in ("omega", "x0", "x1", "f0", "f1"):
            fields[key] = float(value)
        elif key == "ordering":
            fields[key] = value.strip()
        else:
            raise InvalidConfigError(f"unknown counterexample key {key!r}")
    if fields.get("ordering") == "permuted":
        fields.setdefault("permutation_seed", seed)
    return CounterExampleConfig(**fields)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise InvalidConfigError(f"bad {SEED_ENV_VAR} value {env!r}") from exc
    return 0


def _test_function(name: str) -> TestFunction:
    if name not in _FUNCTIONS:
        raise InvalidConfigError(f"unknown function {name!r}; valid: {', '.join(sorted(_FUNCTIONS))}")
    return _FUNCTIONS[name]()


def _pair(args) -> asymptotics.DensityPair:
    if args.pair not in _PAIRS:
        raise InvalidConfigError(f"unknown pair {args.pair!r}; valid: {', '.join(_PAIRS)}")
    return asymptotics.reference_pair(alpha=args.alpha)


def _lingauss_params(args) -> LinearGaussianParams:
    return LinearGaussianParams(
        a=args.a,
        sigma_w=args.sigma_w,
        sigma_v=args.sigma_v,
        prior_mean=args.prior_mean,
        prior_var=args.prior_var,
    )


def _observations(args) -> np.ndarray:
    path = args.observations if args.observations is not None else packaged_observations_path()
    return load_observations(path)


def _variance_rows(system: ParticleSystem, f: TestFunction, n: int, replicates: int, stream: RandomStream):
    header = ["scheme", "n", "closed_form", "exact_enumeration", "mc_estimate", "mc_stderr", "replicates"]
    rows = []
    for index, scheme in enumerate(SchemeId):
        report = variance_report(scheme, system, f, n, replicates, stream.replicate(index * replicates))
        rows.append(
            [
                scheme.value,
                report.n,
                report.closed_form,
                report.exact_enumeration,
                report.mc_estimate,
                report.mc_stderr,
                report.replicates,
            ]
        )
    return header, rows


def cmd_resample(args) -> None:
    weights = _parse_weights(args)
    system = ParticleSystem(np.arange(len(weights), dtype=float), weights)
    scheme = SchemeId.parse(args.scheme)
    output = resample(scheme, system, args.n, RandomStream(args.effective_seed))
    header = ["record", "position", "value"]
    rows = [["index", j, int(v)] for j, v in enumerate(output.indices)]
    rows += [["count", i, int(v)] for i, v in enumerate(output.counts)]
    _write_artifact(
        args,
        header,
        rows,
        {
            "params": {
                "scheme": scheme.value,
                "n": args.n,
                "weights": [float(w) for w in system.weights],
            }
        },
    )


def cmd_variance(args) -> None:
    stream = RandomStream(args.effective_seed)
    metadata: dict = {"params": {"n": args.n, "replicates": args.replicates}}
    if args.counterexample is not None:
        config = _parse_counterexample_spec(args.counterexample, args.effective_seed)
        system = make_counterexample(config)
        f = counterexample_test_function(config)
        n = config.n if args.n is None else args.n
        metadata["params"]["counterexample"] = args.counterexample
        if config.ordering == "interleaved":
            analytic = counterexample_analytic(config)
            metadata["counterexample_analytic"] = {
                "multinomial": analytic.multinomial,
                "residual_stratified": analytic.residual_stratified,
                "systematic": analytic.systematic,
            }
    else:
        if args.n is None:
            raise InvalidConfigError("--n is required without --counterexample")
        weights = _parse_weights(args)
        system = ParticleSystem(np.arange(len(weights), dtype=float), weights)
        if args.f is None:
            raise InvalidConfigError("--f is required without --counterexample")
        fvals = np.array(_parse_float_list(args.f, "--f"))
        if len(fvals) != system.size:
            raise InvalidConfigError("--f must list one value per particle")
        f = TestFunction(lambda x: fvals[np.asarray(x, dtype=int)], name="tabulated")
        n = args.n
        metadata["params"]["weights"] = [float(w) for w in system.weights]
        metadata["params"]["f"] = [float(v) for v in fvals]
    header, rows = _variance_rows(system, f, n, args.replicates, stream)
    _write_artifact(args, header, rows, metadata)


def cmd_counterexample(args) -> None:
    config = CounterExampleConfig(
        n=args.n,
        omega=args.omega,
        x0=args.x0,
        x1=args.x1,
        f0=args.f0,
        f1=args.f1,
        ordering=args.ordering,
        permutation_seed=args.permutation_seed
        if args.permutation_seed is not None
        else (args.effective_seed if args.ordering == "permuted" else None),
    )
    system = make_counterexample(config)
    f = counterexample_test_function(config)
    stream = RandomStream(args.effective_seed)
    metadata: dict = {
        "params": {
            "omega": config.omega,
            "n": config.n,
            "ordering": config.ordering,
            "f0": config.f0,
            "f1": config.f1,
            "replicates": args.replicates,
        }
    }
    if config.ordering == "interleaved":
        analytic = counterexample_analytic(config)
        metadata["counterexample_analytic"] = {
            "multinomial": analytic.multinomial,
            "residual_stratified": analytic.residual_stratified,
            "systematic": analytic.systematic,
        }
    header, rows = _variance_rows(system, f, config.n, args.replicates, stream)
    _write_artifact(args, header, rows, metadata)


def cmd_filter(args) -> None:
    if args.model not in _MODELS:
        raise InvalidConfigError(f"unknown model {args.model!r}; valid: {', '.join(_MODELS)}")
    params = _lingauss_params(args)
    observations = _observations(args)
    horizon = args.horizon if args.horizon is not None else len(observations)
    if horizon > len(observations):
        raise InvalidConfigError(f"horizon {horizon} exceeds the {len(observations)} available observations")
    model = linear_gaussian_model(params, observations)
    scheme = SchemeId.parse(args.scheme)
    config = FilterConfig(
        m=args.m,
        n=args.n if args.n is not None else args.m,
        scheme=scheme,
        horizon=horizon,
        resample_every=args.resample_every if args.resample_every > 0 else None,
    )
    f = TestFunction(lambda x: np.asarray(x, dtype=float), name="mean")
    trace = run_filter(model, config, [f], RandomStream(args.effective_seed))
    header = trace.header()
    rows = [
        [row.step] + [row.estimates[name] for name in trace.function_names] + [row.ess, row.resampled]
        for row in trace.rows
    ]
    kalman_means, kalman_vars = kalman_oracle(params, observations[:horizon])
    _write_artifact(
        args,
        header,
        rows,
        {
            "params": {
                "model": args.model,
                "scheme": scheme.value,
                "m": config.m,
                "n": config.n,
                "horizon": horizon,
                "resample_every": config.resample_every,
                "a": params.a,
                "sigma_w": params.sigma_w,
                "sigma_v": params.sigma_v,
                "prior_mean": params.prior_mean,
                "prior_var": params.prior_var,
                "observations": str(args.observations) if args.observations else "packaged",
            },
            "kalman_means": [float(v) for v in kalman_means],
            "kalman_variances": [float(v) for v in kalman_vars],
        },
    )


def cmd_asymptotics_lemma1(args) -> None:
    pair = _pair(args)
    f = _test_function(args.f)
    m_grid = _parse_int_list(args.m_grid, "--m-grid")
    result = asymptotics.lemma1_experiment(
        pair, f, m_grid, args.replicates, RandomStream(args.effective_seed), threads=args.threads
    )
    header = ["m", "n", "replicates", "floor_sum_mean", "floor_sum_iqr", "target"]
    rows = [
        [m, n, result.replicates, mean, iqr, result.target]
        for m, n, mean, iqr in zip(result.m_grid, result.n_grid, result.means(), result.iqrs())
    ]
    _write_artifact(
        args,
        header,
        rows,
        {
            "params": {"pair": args.pair, "alpha": args.alpha, "f": args.f, "m_grid": m_grid, "replicates": args.replicates},
            "target": result.target,
            "support_violation_estimate": result.support_violation_estimate,
        },
    )


def cmd_asymptotics_support(args) -> None:
    pair = _pair(args)
    estimate = asymptotics.support_condition_estimate(
        pair, args.samples, args.tolerance, RandomStream(args.effective_seed)
    )
    header = ["samples", "tolerance", "estimate"]
    rows = [[args.samples, args.tolerance, estimate]]
    _write_artifact(
        args,
        header,
        rows,
        {"params": {"pair": args.pair, "alpha": args.alpha, "samples": args.samples, "tolerance": args.tolerance}},
    )


def cmd_asymptotics_kappa(args) -> None:
    pair = _pair(args)
    f = _test_function(args.f)
    scheme = SchemeId.parse(args.scheme)
    n_grid = _parse_int_list(args.n_grid, "--n-grid")
    rows_data = asymptotics.scaled_condvar_experiment(
        scheme, pair, f, n_grid, args.replicates, RandomStream(args.effective_seed), threads=args.threads
    )
    header = list(asymptotics.ScaledVarianceRow.CSV_FIELDS)
    rows = [[row.n, row.m, row.replicates, row.scaled_var, row.scaled_var_stderr, row.target] for row in rows_data]
    metadata = {
        "params": {
            "pair": args.pair,
            "alpha": args.alpha,
            "f": args.f,
            "scheme": scheme.value,
            "n_grid": n_grid,
            "replicates": args.replicates,
        },
        "residual_kappa": asymptotics.residual_kappa(pair, f),
        "multinomial_kappa": asymptotics.multinomial_kappa(pair, f),
    }
    _write_artifact(args, header, rows, metadata)


def cmd_asymptotics_clt(args) -> None:
    params = _lingauss_params(args)
    observations = _observations(args)
    if args.k >= len(observations):
        raise InvalidConfigError(f"--k {args.k} exceeds the {len(observations)} available observations")
    model = linear_gaussian_model(params, observations)
    means, _ = kalman_oracle(params, observations)
    scheme = SchemeId.parse(args.scheme)
    f = TestFunction(lambda x: np.asarray(x, dtype=float), name="mean")
    n_grid = _parse_int_list(args.n_grid, "--n-grid")
    rows_data = asymptotics.clt_experiment(
        scheme,
        model,
        f,
        args.k,
        float(means[args.k]),
        n_grid,
        args.replicates,
        RandomStream(args.effective_seed),
        alpha=args.alpha,
        threads=args.threads,
    )
    header = list(asymptotics.ScaledVarianceRow.CSV_FIELDS)
    rows = [[row.n, row.m, row.replicates, row.scaled_var, row.scaled_var_stderr, row.target] for row in rows_data]
    metadata = {
        "params": {
            "scheme": scheme.value,
            "k": args.k,
            "n_grid": n_grid,
            "replicates": args.replicates,
            "alpha": args.alpha,
            "a": params.a,
            "sigma_w": params.sigma_w,
            "sigma_v": params.sigma_v,
            "prior_mean": params.prior_mean,
            "prior_var": params.prior_var,
        },
        "reference": float(means[args.k]),
        "normality_stats": [row.normality_stat for row in rows_data],
        "mean_estimates": [row.mean_estimate for row in rows_data],
    }
    _write_artifact(args, header, rows, metadata)


def _add_common(parser: argparse.ArgumentParser, default_output: str) -> None:
    parser.add_argument("--seed", type=int, default=None, help=f"RNG seed (falls back to ${SEED_ENV_VAR}, then 0)")
    parser.add_argument("--output", default=default_output, help="output file path")
    parser.add_argument("--format", choices=("csv", "json"), default="csv", help="primary output format")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (never changes numerical results)")


def _add_lingauss(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--a", type=float, default=0.9)
    parser.add_argument("--sigma-w", type=float, default=0.6, dest="sigma_w")
    parser.add_argument("--sigma-v", type=float, default=1.0, dest="sigma_v")
    parser.add_argument("--prior-mean", type=float, default=0.0, dest="prior_mean")
    parser.add_argument("--prior-var", type=float, default=1.0, dest="prior_var")
    parser.add_argument("--observations", default=None, help="observation CSV (k,y); default: packaged file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resample-lab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"resample-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("resample", help="run one resampling draw and write indices and counts")
    p.add_argument("--scheme", required=True, choices=valid_scheme_names())
    p.add_argument("--weights", default=None, help="comma-separated weights")
    p.add_argument("--weights-file", default=None, help="file with one weight per line")
    p.add_argument("--n", type=int, required=True)
    _add_common(p, "resample.csv")
    p.set_defaults(handler=cmd_resample, command_name="resample")

    p = sub.add_parser("variance", help="per-scheme conditional-variance report for one system")
    p.add_argument("--weights", default=None)
    p.add_argument("--weights-file", default=None)
    p.add_argument("--f", default=None, help="comma-separated f values, one per particle")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--replicates", type=int, default=10_000)
    p.add_argument("--counterexample", default=None, help="e.g. omega=0.75,n=4")
    _add_common(p, "variance.csv")
    p.set_defaults(handler=cmd_variance, command_name="variance")

    p = sub.add_parser("counterexample", help="two-value system: analytic and measured variances")
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x0", type=float, default=0.0)
    p.add_argument("--x1", type=float, default=1.0)
    p.add_argument("--f0", type=float, default=0.0)
    p.add_argument("--f1", type=float, default=1.0)
    p.add_argument("--ordering", choices=("interleaved", "blocked", "permuted"), default="interleaved")
    p.add_argument("--permutation-seed", type=int, default=None, dest="permutation_seed")
    p.add_argument("--replicates", type=int, default=10_000)
    _add_common(p, "counterexample.csv")
    p.set_defaults(handler=cmd_counterexample, command_name="counterexample")

    p = sub.add_parser("filter", help="run the particle filter and write its trace")
    p.add_argument("--model", default="lingauss")
    p.add_argument("--scheme", required=True, choices=valid_scheme_names())
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--n", type=int, default=None, help="post-resampling population (default: m)")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--resample-every", type=int, default=1, dest="resample_every", help="0 disables resampling")
    _add_lingauss(p)
    _add_common(p, "filter.csv")
    p.set_defaults(handler=cmd_filter, command_name="filter")

    p = sub.add_parser("asymptotics", help="large-sample experiments")
    asub = p.add_subparsers(dest="experiment", required=True)

    q = asub.add_parser("lemma1", help="floor-weight-sum limit experiment")
    q.add_argument("--pair", default="reference")
    q.add_argument("--alpha", type=float, default=1.0)
    q.add_argument("--f", default="one", choices=sorted(_FUNCTIONS))
    q.add_argument("--m-grid", default="10000,40000,100000", dest="m_grid")
    q.add_argument("--replicates", type=int, default=30)
    _add_common(q, "lemma1.csv")
    q.set_defaults(handler=cmd_asymptotics_lemma1, command_name="asymptotics lemma1")

    q = asub.add_parser("support", help="estimate the near-integer alpha*g mass")
    q.add_argument("--pair", default="reference")
    q.add_argument("--alpha", type=float, default=1.0)
    q.add_argument("--samples", type=int, default=100_000)
    q.add_argument("--tolerance", type=float, default=asymptotics.SUPPORT_TOLERANCE)
    _add_common(q, "support.csv")
    q.set_defaults(handler=cmd_asymptotics_support, command_name="asymptotics support")

    q = asub.add_parser("kappa", help="scaled conditional variance vs its quadrature target")
    q.add_argument("--pair", default="reference")
    q.add_argument("--alpha", type=float, default=1.0)
    q.add_argument("--f", default="x", choices=sorted(_FUNCTIONS))
    q.add_argument("--scheme", default="residual", choices=valid_scheme_names())
    q.add_argument("--n-grid", default="1000,10000", dest="n_grid")
    q.add_argument("--replicates", type=int, default=10)
    _add_common(q, "kappa.csv")
    q.set_defaults(handler=cmd_asymptotics_kappa, command_name="asymptotics kappa")

    q = asub.add_parser("clt", help="sqrt(n)-scaling of the filter estimate")
    q.add_argument("--scheme", default="multinomial", choices=valid_scheme_names())
    q.add_argument("--k", type=int, default=10)
    q.add_argument("--n-grid", default="500,2000,8000", dest="n_grid")
    q.add_argument("--replicates", type=int, default=500)
    q.add_argument("--alpha", type=float, default=1.0)
    _add_lingauss(q)
    _add_common(q, "clt.csv")
    q.set_defaults(handler=cmd_asymptotics_clt, command_name="asymptotics clt")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.effective_seed = _resolve_seed(args)
        args.handler(args)
    except (DegenerateWeightsError, DegenerateKappaError, SupportConditionViolatedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ResampleLabError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
