"""Command-line entry point: ``hscfate <subcommand> ...``.

Every subcommand writes into ``--out`` and leaves a ``manifest.txt`` there
holding the resolved settings, the seed, a config hash and library
versions. The worker count is left out on purpose, since it cannot change
any output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path as FsPath

import numpy as np

from .assessment import assess_model, assess_posterior
from .diagnostics import posterior_summary, write_summary_csv, write_trace_csv
from .evidence import (
    conditional_marginal,
    harmonic_mean_path,
    heterogeneity_compare,
    per_animal_estimates,
    write_evidence_csv,
)
from .io import ParseError, ValidationError, load_dataset, read_config, read_manifest, write_manifest
from .mcmc import ChainConfig, ChainDraws, ChainState, InitializationFailure, PriorSpec, run_chain
from .model import RATE_NAMES, InfeasiblePath, ModelSpec, PopulationState, RateVector
from .simulate import ScheduleSpec, simulate_cohort

__all__ = ["main", "build_parser", "rerun_argv"]

# settings that cannot affect results and so stay out of manifests and hashes
_UNRECORDED = {"workers", "out", "config", "command", "func"}


class UsageError(Exception):
    pass


def _rates(text: str) -> RateVector:
    vals = {}
    for part in text.split(","):
        key, sep, val = part.partition("=")
        if not sep or key.strip() not in RATE_NAMES:
            raise argparse.ArgumentTypeError(f"expected name=value pairs over {RATE_NAMES}, got {part!r}")
        vals[key.strip()] = float(val)
    return RateVector.from_mapping(vals)


def _initial(text: str) -> PopulationState:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("initial state is z_d,z_G,x_d,x_G")
    return PopulationState(*parts)


def _spacing(text: str):
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 2:
        return tuple(parts)
    raise argparse.ArgumentTypeError("spacing is a gap or low,high")


def _prior(text: str) -> PriorSpec:
    try:
        return PriorSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _model_arg(p, required=True):
    p.add_argument("--model", required=required, help="event set, e.g. SCD or SCDAs")
    p.add_argument("--niche-cap", type=int, default=None, help="cap on compartment 1 size")
    p.add_argument("--initial", type=_initial, default="10,10,5,5", help="z_d,z_G,x_d,x_G")


def _common(p, seed=True):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key = value file; flags given on the command line win")
    if seed:
        p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1, help="concurrent animals (does not change results)")


def _schedule_args(p):
    p.add_argument("--horizon", type=float, default=None, help="weeks (default: dataset horizon or 100)")
    p.add_argument("--spacing", type=_spacing, default=None, help="gap or low,high in weeks (default 2,6)")
    p.add_argument("--sample-size", type=int, default=None, help="fixed N (default: resample observed, else 100)")


def _chain_args(p):
    p.add_argument("--prior", type=_prior, default="gamma:5,50", help="gamma:a,b or uniform:0,u, or name=prior;...")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--burnin", type=int, default=500)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--moves", type=int, default=None, help="path proposals per animal per cycle")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hscfate", description="Stochastic stem-cell fate models: simulate, fit, compare, assess.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a virtual cohort")
    _model_arg(p)
    p.add_argument("--rates", type=_rates, required=True, help="e.g. lambda=0.09,nu=0.08,mu=0.14")
    p.add_argument("--n-animals", type=int, default=50)
    p.add_argument("--die-out", choices=("hsc", "both"), default="hsc")
    _schedule_args(p)
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler on a dataset")
    p.add_argument("--data", required=True)
    _model_arg(p)
    _chain_args(p)
    p.add_argument("--pooling", choices=("pooled", "per-animal"), default="pooled")
    p.add_argument("--resume", help="checkpoint file from an earlier fit with the same settings")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evidence", help="integrated likelihoods and Bayes factors")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True, help="comma-separated, e.g. SCD,SCDAs")
    p.add_argument("--baseline", default=None, help="model the Bayes factors are relative to (default: first)")
    p.add_argument("--condition", action="append", choices=("path", "lambda", "nu", "mu"), default=None)
    p.add_argument("--niche-cap", type=int, default=None)
    p.add_argument("--initial", type=_initial, default="10,10,5,5")
    _chain_args(p)
    p.add_argument("--n-theta", type=int, default=20, help="posterior draws used per conditioning rate")
    p.add_argument("--inner-iters", type=int, default=300)
    p.add_argument("--inner-burnin", type=int, default=100)
    p.add_argument("--trim", type=float, default=0.0, help="fraction of smallest log-likelihoods dropped")
    p.add_argument("--heterogeneity", action="store_true", help="also compare per-animal against pooled fits")
    _common(p)
    p.set_defaults(func=cmd_evidence)

    p = sub.add_parser("assess", help="compare a virtual cohort with observed animals")
    _model_arg(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--rates", type=_rates)
    g.add_argument("--draws", help="draws.jsonl of a pooled fit; --k sets are chosen at random")
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--n-virtual", type=int, default=50)
    p.add_argument("--data", default=None)
    p.add_argument("--ks-method", choices=("asymp", "exact"), default="asymp")
    _schedule_args(p)
    _common(p)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("summarize", help="posterior means, HPD intervals and cusum traces")
    p.add_argument("--draws", required=True)
    p.add_argument("--model", default=None, help="default: read from the manifest beside the draws")
    p.add_argument("--mass", type=float, default=0.95)
    _common(p, seed=False)
    p.set_defaults(func=cmd_summarize)
    return parser


def _spec(args) -> ModelSpec:
    try:
        return ModelSpec.from_name(args.model, niche_cap=args.niche_cap)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _record(args) -> dict:
    out = {}
    for key, val in sorted(vars(args).items()):
        if key in _UNRECORDED or val is None:
            continue
        if isinstance(val, RateVector):
            val = ",".join(f"{k}={v!r}" for k, v in val.to_mapping().items() if v)
        elif isinstance(val, PopulationState):
            val = ",".join(str(v) for v in val.as_array())
        elif isinstance(val, PriorSpec):
            val = val.describe()
        elif isinstance(val, (tuple, list)):
            val = ",".join(str(v) for v in val)
        out[key] = val
    return out


def _finish(args, out: FsPath, extra: dict | None = None) -> None:
    rec = _record(args)
    rec["command"] = args.command
    blob = json.dumps(rec, sort_keys=True, default=str).encode()
    rec["config_hash"] = hashlib.sha256(blob).hexdigest()[:16]
    rec.update(extra or {})
    write_manifest(out / "manifest.txt", rec)


def _schedule(args, data=None) -> ScheduleSpec:
    horizon = args.horizon or (data.horizon if data is not None else 100.0)
    spacing = args.spacing if args.spacing is not None else (2.0, 6.0)
    if args.sample_size is not None:
        return ScheduleSpec(horizon, spacing, args.sample_size)
    if data is not None:
        return ScheduleSpec.from_observed(data.series, horizon=horizon, spacing=spacing)
    return ScheduleSpec(horizon, spacing, 100)


def cmd_simulate(args, out: FsPath) -> None:
    spec = _spec(args)
    coh = simulate_cohort(
        args.rates, spec, args.initial, _schedule(args), args.n_animals, args.seed, args.workers, args.die_out
    )
    coh.to_csv(out / "cohort.csv")
    _finish(args, out, {"die_out_rate": repr(coh.die_out_rate)})
    print(f"wrote {coh.n_animals} animals to {out / 'cohort.csv'}; die-out rate {coh.die_out_rate:.3f}")


def _chain_config(args, seed) -> ChainConfig:
    return ChainConfig(
        iterations=args.iters, burn_in=args.burnin, thinning=args.thin,
        path_moves_per_cycle=args.moves, seed=seed, prior=args.prior,
    )


def cmd_fit(args, out: FsPath) -> None:
    spec = _spec(args)
    data = load_dataset(args.data)
    cfg = _chain_config(args, args.seed)
    pooling = args.pooling.replace("-", "_")
    state = None
    if args.resume:
        state = ChainState.load(args.resume)
        if state.config_hash != cfg.resume_key() or state.seed != cfg.seed:
            raise UsageError("checkpoint was written under different chain settings")
        if state.cycle > cfg.iterations:
            raise UsageError(f"checkpoint is at cycle {state.cycle}, beyond --iters {cfg.iterations}")
    draws = run_chain(
        data.series, spec, config=cfg, pooling=pooling, initial=args.initial,
        horizon=data.horizon, workers=args.workers, state=state,
    )
    draws.to_jsonl(out / "draws.jsonl")
    draws.final_state.save(out / "checkpoint.json")
    if pooling == "pooled" and len(draws) >= 10:
        summ = posterior_summary(draws)
        write_summary_csv(out / "summary.csv", spec.name, summ)
        write_trace_csv(out / "trace.csv", draws, spec.rate_names)
    _finish(args, out, {"model_name": spec.name, "chain_hash": cfg.hash(), "n_kept": len(draws)})
    acc = ", ".join(f"{k} {v:.2f}" for k, v in draws.acceptance.rates().items())
    print(f"kept {len(draws)} draws in {out / 'draws.jsonl'}; acceptance {acc}")


def cmd_evidence(args, out: FsPath) -> None:
    data = load_dataset(args.data)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    if not models:
        raise UsageError("no models given")
    baseline = args.baseline or models[0]
    if baseline not in models:
        raise UsageError(f"baseline {baseline} is not among --models")
    conditions = args.condition or ["path"]
    estimates, het_rows = [], []
    for m_idx, name in enumerate(models):
        try:
            spec = ModelSpec.from_name(name, niche_cap=args.niche_cap)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        cfg = _chain_config(args, args.seed + 1000 * m_idx)
        draws = run_chain(data.series, spec, config=cfg, initial=args.initial, horizon=data.horizon, workers=args.workers)
        for cond in conditions:
            if cond == "path":
                estimates.append(harmonic_mean_path(draws, trim=args.trim))
                continue
            if cond not in spec.rate_names:
                print(f"skipping {cond} for {name}: not a rate of this model", file=sys.stderr)
                continue
            col = draws.rate(cond)
            idx = np.linspace(0, col.size - 1, min(args.n_theta, col.size)).astype(int)
            inner = ChainConfig(
                iterations=args.inner_iters, burn_in=args.inner_burnin, path_moves_per_cycle=args.moves,
                seed=cfg.seed + 500, prior=args.prior,
            )
            estimates.append(conditional_marginal(
                col[idx], cond, data.series, spec, args.prior, inner, trim=args.trim,
                initial=args.initial, horizon=data.horizon, workers=args.workers,
            ))
        if args.heterogeneity:
            het = run_chain(
                data.series, spec, config=cfg, pooling="per_animal", initial=args.initial,
                horizon=data.horizon, workers=args.workers,
            )
            ratio = heterogeneity_compare(per_animal_estimates(het, args.trim), harmonic_mean_path(draws, args.trim))
            het_rows.append((name, ratio))
    write_evidence_csv(out / "evidence.csv", estimates, baseline)
    if het_rows:
        with open(out / "heterogeneity.csv", "w") as fh:
            fh.write("model,bf_heterogeneous_vs_pooled\n")
            for name, ratio in het_rows:
                fh.write(f"{name},{ratio!r}\n")
    _finish(args, out, {"baseline": baseline})
    print(f"wrote {out / 'evidence.csv'}")


def cmd_assess(args, out: FsPath) -> None:
    spec = _spec(args)
    data = load_dataset(args.data) if args.data else None
    observed = data.series if data is not None else None
    sched = _schedule(args, data)
    kw = dict(initial=args.initial, method=args.ks_method, workers=args.workers)
    if args.rates is not None:
        reports = [assess_model(args.rates, spec, observed, args.n_virtual, sched, args.seed, **kw)]
    else:
        draws = ChainDraws.from_jsonl(args.draws, spec.name)
        if draws.pooling != "pooled":
            raise UsageError("--draws must come from a pooled fit")
        reports = assess_posterior(draws.rate_vectors(), spec, observed, args.k, args.n_virtual, sched, args.seed, **kw)
    for i, rep in enumerate(reports):
        stem = "assessment" if len(reports) == 1 else f"assessment_{i + 1}"
        rep.to_csv(out / f"{stem}.csv", per_animal=str(out / f"{stem}_per_animal.csv"))
    _finish(args, out, {"die_out_rates": ",".join(repr(r.die_out_rate) for r in reports)})
    for rep in reports:
        ps = ", ".join(f"{k} {v:.3g}" for k, v in rep.p_values.items())
        print(f"die-out {rep.die_out_rate:.3f}; KS p-values: {ps}")


def cmd_summarize(args, out: FsPath) -> None:
    model = args.model
    if model is None:
        man = FsPath(args.draws).with_name("manifest.txt")
        if not man.exists():
            raise UsageError("no --model given and no manifest beside the draws")
        model = read_manifest(man).get("model_name") or read_manifest(man).get("model")
    spec = ModelSpec.from_name(model)
    draws = ChainDraws.from_jsonl(args.draws, spec.name)
    if draws.pooling != "pooled":
        raise UsageError("summaries are for pooled fits")
    summ = posterior_summary(draws, args.mass, spec.rate_names)
    write_summary_csv(out / "summary.csv", spec.name, summ)
    write_trace_csv(out / "trace.csv", draws, spec.rate_names)
    _finish(args, out, {"model_name": spec.name})
    for s in summ:
        print(f"{s.rate:>7s} mean {s.mean:.4g}  HPD [{s.hpd_low:.4g}, {s.hpd_high:.4g}]  ESS {s.ess:.0f}")


def rerun_argv(manifest: dict, out) -> list:
    """Command line that repeats the run recorded in ``manifest`` into ``out``."""
    parser = build_parser()
    cmd = manifest["command"]
    sub = parser._subparsers._group_actions[0].choices[cmd]
    argv = [cmd]
    for action in sub._actions:
        if action.dest not in manifest or not action.option_strings:
            continue
        opt = next(o for o in action.option_strings if o.startswith("--"))
        val = manifest[action.dest]
        if action.nargs == 0:
            if val == "True":
                argv.append(opt)
        elif isinstance(action, argparse._AppendAction):
            for v in val.split(","):
                argv += [opt, v]
        else:
            argv += [opt, val]
    return argv + ["--out", str(out)]


def _apply_config(parser, sub, args, argv):
    """Re-parse with values from ``--config`` as defaults."""
    conf = read_config(args.config)
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, val in conf.items():
        if key not in known or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        action = known[key]
        if action.nargs == 0:
            defaults[key] = val.lower() in ("1", "true", "yes", "on")
        elif isinstance(action, argparse._AppendAction):
            defaults[key] = [v.strip() for v in val.split(",")]
        else:
            defaults[key] = val
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _main(argv)
    except SystemExit as exc:  # argparse reports usage errors this way
        return exc.code if isinstance(exc.code, int) else 2


def _main(argv) -> int:
    parser = build_parser()
    if argv and "--config" in argv and argv[0] in parser._subparsers._group_actions[0].choices:
        # required flags may live in the config file, so relax them for the first pass
        sub = parser._subparsers._group_actions[0].choices[argv[0]]
        saved = {a.dest: a.required for a in sub._actions}
        for a in sub._actions:
            a.required = False
        args = parser.parse_args(argv)
        for a in sub._actions:
            a.required = saved[a.dest]
    else:
        sub = None
        args = parser.parse_args(argv)
    try:
        if sub is not None and args.config:
            args = _apply_config(parser, sub, args, argv)
        out = FsPath(args.out)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, out)
    except UsageError as exc:
        print(f"hscfate: error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ValidationError, InitializationFailure, InfeasiblePath, FileNotFoundError, ValueError) as exc:
        print(f"hscfate: data error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
