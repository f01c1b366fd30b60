"""Batch command-line front end: train, adapt, simulate, elbo."""

import argparse
import sys

import numpy as np

from . import io as mio
from . import model as mdl
from .data import accumulate
from .elbo import NonFiniteElboError, elbo_total
from .engine import FitConfig, fit_stats, update_qy
from .linalg import FactorizationError
from .model import ModelParams, PriorConfig
from .numerics import ConvergenceError
from .synth import CounterRng, GenSpec, sample

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

_INPUT_ERRORS = (ValueError, KeyError, OSError, mio.FormatError)
_NUMERICAL_ERRORS = (
    FactorizationError,
    NonFiniteElboError,
    ConvergenceError,
    np.linalg.LinAlgError,
)


def _parse_anneal(text):
    """'k1:n1,k2:n2,...' -> ((k1, n1), ...)."""
    schedule = []
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        kappa, _, span = piece.partition(":")
        schedule.append((float(kappa), int(span)))
    return tuple(schedule)


def _config_get(config, key, cast, default):
    if key in config:
        return cast(config[key])
    return default


def _csv_or_scalar(text):
    values = [float(v) for v in text.split(",")]
    return values[0] if len(values) == 1 else np.array(values)


def _build_fit_config(config, args):
    def pick(flag, key, cast, default):
        if getattr(args, flag, None) is not None:
            return cast(getattr(args, flag))
        return _config_get(config, key, cast, default)

    anneal = pick("anneal", "anneal", str, "")
    return FitConfig(
        max_iterations=pick("iters", "iters", int, 500),
        elbo_rel_tol=pick("tol", "tol", float, 1e-7),
        anneal_schedule=_parse_anneal(anneal) if anneal else (),
        hyperopt_every=pick("hyperopt_every", "hyperopt_every", int, 0),
        mindiv_every=pick("mindiv_every", "mindiv_every", int, 0),
        seed=pick("seed", "seed", int, 0),
        whiten=_config_get(config, "whiten", lambda v: v.lower() in ("1", "true", "yes"), False),
    )


def _build_train_prior(config, variant, d):
    if not mdl.has_alpha_arm(variant):
        raise ValueError(
            f"{variant} takes its priors from a previously trained model; use the adapt command"
        )
    kwargs = dict(
        variant=variant,
        a_alpha=_config_get(config, "a_alpha", float, 1e-3),
        b_alpha=_config_get(config, "b_alpha", float, 1e-3),
        mu0=_config_get(config, "mu0", _csv_or_scalar, 0.0),
        beta=_config_get(config, "beta", _csv_or_scalar, 1.0),
    )
    if variant == mdl.V1_WISHART_INFORMATIVE:
        scale = _config_get(config, "psi0_scale", float, 1.0)
        kwargs["psi0"] = scale * np.eye(d)
        kwargs["nu_d"] = _config_get(config, "nu_d", float, float(d + 2))
    elif not mdl.has_wishart_arm(variant):
        kwargs["a_w"] = _config_get(config, "a_w", float, 1e-3)
        kwargs["b_w"] = _config_get(config, "b_w", float, 1e-3)
    return PriorConfig(**kwargs)


def _save_fit(path, variant, state, params, report, prior):
    saved = mio.SavedModel(
        variant=variant,
        mu=params.mu,
        V=params.V,
        W=params.W,
        qv=state.qv,
        qw=state.qw,
        prior=prior,
        elbo=report.elbo_trace[-1] if report.elbo_trace else report.initial_elbo,
        qalpha=state.qalpha,
        rotation=report.rotation,
    )
    mio.write_model_file(path, saved)


def cmd_train(args):
    dataset, partition = mio.load_dataset(args.data, args.labels)
    config = mio.parse_config(args.config) if args.config else {}
    variant = args.variant or config.get("variant", mdl.V1_WISHART_NONINFORMATIVE)
    if variant not in mdl.VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    n_y = args.ny if args.ny is not None else _config_get(config, "ny", int, 2)
    stats = accumulate(dataset, partition)
    prior = _build_train_prior(config, variant, stats.dim)
    fit_config = _build_fit_config(config, args)
    state, params, report = fit_stats(stats, prior, fit_config, n_y)
    # hyperopt may have refreshed the hyperparameters; persist the ones in effect
    _save_fit(args.out, variant, state, params, report, report.final_prior)
    if args.trace:
        mio.write_trace_csv(args.trace, report)
    return EXIT_OK


def cmd_adapt(args):
    saved = mio.read_model_file(args.prior)
    dataset, partition = mio.load_dataset(args.data, args.labels)
    if dataset.dim != saved.dim:
        raise ValueError(f"data dimension {dataset.dim} does not match prior model {saved.dim}")
    arm = type(saved.qw).__name__
    inferred = {
        "QWWishart": mdl.V3_GAUSSV_WISHART,
        "QWGammaDiag": mdl.V4_GAUSSV_GAMMA_DIAGONAL,
        "QWGammaIso": mdl.V4_GAUSSV_GAMMA_ISOTROPIC,
    }[arm]
    variant = args.variant or inferred
    if variant != inferred:
        raise ValueError(
            f"prior model carries a {arm} precision posterior, incompatible with {variant}"
        )
    kwargs = dict(
        variant=variant,
        v_row_means=saved.qv.mean,
        v_row_precisions=saved.qv.prec,
    )
    if variant == mdl.V3_GAUSSV_WISHART:
        kwargs["psi0"] = saved.qw.psi
        kwargs["nu_d"] = saved.qw.nu
    elif variant == mdl.V4_GAUSSV_GAMMA_DIAGONAL:
        kwargs["a_w"] = saved.qw.a
        kwargs["b_w"] = saved.qw.b
    else:
        kwargs["a_w"] = saved.qw.a
        kwargs["b_w"] = saved.qw.b
    prior = PriorConfig(**kwargs)
    config = mio.parse_config(args.config) if args.config else {}
    fit_config = _build_fit_config(config, args)
    if saved.rotation is not None:
        dataset = type(dataset)(vectors=dataset.vectors @ saved.rotation, ids=dataset.ids)
    stats = accumulate(dataset, partition)
    state, params, report = fit_stats(stats, prior, fit_config, saved.rank)
    saved_out = mio.SavedModel(
        variant=variant,
        mu=params.mu,
        V=params.V,
        W=params.W,
        qv=state.qv,
        qw=state.qw,
        prior=prior,
        elbo=report.elbo_trace[-1] if report.elbo_trace else report.initial_elbo,
        qalpha=None,
        rotation=saved.rotation,
    )
    mio.write_model_file(args.out, saved_out)
    if args.trace:
        mio.write_trace_csv(args.trace, report)
    return EXIT_OK


def _params_from_spec_config(config, seed):
    d = int(config["d"])
    ny = int(config["ny"])
    mu = _csv_or_scalar(config.get("mu", "0"))
    mu = np.full(d, float(mu)) if np.isscalar(mu) else np.asarray(mu, dtype=float)
    if mu.shape != (d,):
        raise ValueError(f"mu must be scalar or length-{d}")
    v_scale = float(config.get("v_scale", "1"))
    w_scale = float(config.get("w_scale", "1"))
    # parameter stream is decoupled from the data stream by seed+1
    rng = CounterRng(seed + 1)
    v = v_scale * rng.gaussians(d * ny).reshape(d, ny)
    return ModelParams(mu=mu, V=v, W=w_scale * np.eye(d))


def cmd_simulate(args):
    if (args.model is None) == (args.spec is None):
        raise ValueError("simulate needs exactly one of --model or --spec")
    if args.model:
        saved = mio.read_model_file(args.model)
        mu, v, w = saved.mu, saved.V, saved.W
        if saved.rotation is not None:
            r = saved.rotation
            mu, v, w = r @ mu, r @ v, r @ w @ r.T
        params = ModelParams(mu=mu, V=v, W=w)
    else:
        params = _params_from_spec_config(mio.parse_config(args.spec), args.seed)
    counts = (args.per_speaker,) * args.speakers
    dataset, partition, _ = sample(GenSpec(params=params, counts=counts, seed=args.seed))
    mio.write_data_file(args.out + ".data", dataset.vectors)
    speaker_names = [f"spk{partition.assignment[i]:05d}" for i in range(dataset.n)]
    mio.write_labels_file(args.out + ".labels", dataset.ids, speaker_names)
    return EXIT_OK


def cmd_elbo(args):
    saved = mio.read_model_file(args.model)
    dataset, partition = mio.load_dataset(args.data, args.labels)
    if dataset.dim != saved.dim:
        raise ValueError(f"data dimension {dataset.dim} does not match model {saved.dim}")
    if saved.rotation is not None:
        dataset = type(dataset)(vectors=dataset.vectors @ saved.rotation, ids=dataset.ids)
    stats = accumulate(dataset, partition)
    qy = update_qy(stats, saved.qv, saved.qw)
    breakdown = elbo_total(stats, qy, saved.qv, saved.qw, saved.qalpha, saved.prior)
    for name, value in breakdown.as_dict().items():
        print(f"{name}={value:.17g}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="bsplda", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model on a labelled dataset")
    train.add_argument("--data", required=True)
    train.add_argument("--labels", required=True)
    train.add_argument("--config", default=None)
    train.add_argument("--out", required=True)
    train.add_argument("--variant", default=None, choices=list(mdl.VARIANTS))
    train.add_argument("--ny", type=int, default=None)
    train.add_argument("--iters", type=int, default=None)
    train.add_argument("--tol", type=float, default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--anneal", default=None)
    train.add_argument("--hyperopt-every", dest="hyperopt_every", type=int, default=None)
    train.add_argument("--mindiv-every", dest="mindiv_every", type=int, default=None)
    train.add_argument("--trace", default=None)
    train.set_defaults(func=cmd_train)

    adapt = sub.add_parser("adapt", help="adapt a trained model to new data")
    adapt.add_argument("--prior", required=True)
    adapt.add_argument("--data", required=True)
    adapt.add_argument("--labels", required=True)
    adapt.add_argument("--config", default=None)
    adapt.add_argument("--out", required=True)
    adapt.add_argument("--variant", default=None, choices=list(mdl.VARIANTS))
    adapt.add_argument("--iters", type=int, default=None)
    adapt.add_argument("--tol", type=float, default=None)
    adapt.add_argument("--seed", type=int, default=None)
    adapt.add_argument("--anneal", default=None)
    adapt.add_argument("--hyperopt-every", dest="hyperopt_every", type=int, default=None)
    adapt.add_argument("--mindiv-every", dest="mindiv_every", type=int, default=None)
    adapt.add_argument("--trace", default=None)
    adapt.set_defaults(func=cmd_adapt)

    sim = sub.add_parser("simulate", help="sample a synthetic dataset")
    sim.add_argument("--model", default=None)
    sim.add_argument("--spec", default=None)
    sim.add_argument("--speakers", type=int, required=True)
    sim.add_argument("--per-speaker", dest="per_speaker", type=int, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    elbo_cmd = sub.add_parser("elbo", help="print the bound of a model on a dataset")
    elbo_cmd.add_argument("--model", required=True)
    elbo_cmd.add_argument("--data", required=True)
    elbo_cmd.add_argument("--labels", required=True)
    elbo_cmd.set_defaults(func=cmd_elbo)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _NUMERICAL_ERRORS as exc:
        print(f"bsplda: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _INPUT_ERRORS as exc:
        print(f"bsplda: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
