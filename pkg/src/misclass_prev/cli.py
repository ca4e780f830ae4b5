"""Command line front end.

Four subcommands: ``fit`` runs one estimator on a cohort file,
``compare`` runs the full estimator battery and writes the comparison
report, ``simulate`` draws synthetic cohorts or replication studies
from a scenario file, and ``report`` re-renders a saved comparison csv
as an aligned text table.

Results go to stdout or ``--out``; logs, the resolved seed, and the
effective configuration echo go to stderr. Exit codes: 0 on success,
2 for input problems (bad files, bad flags), 3 for statistical
failures (non-convergence, failed chain diagnostics).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .bayes import fit_bc, fit_bec
from .data_model import (
    AnalysisConfig,
    AssayProfile,
    build_design_matrix,
    load_cohort,
    read_analysis_config,
    save_cohort,
)
from .errors import InputError, NonConvergenceError, StatisticalError
from .mcmc import SamplerConfig
from .mle import LiuVariant, ModelTag, fit_liu, fit_std
from .report import (
    _reparse,
    _text_table,
    build_comparison_report,
    coefficient_csv_rows,
    marginal_prevalence_bayes,
    marginal_prevalence_liu,
    marginal_prevalence_std,
    prevalence_csv_rows,
    render_csv_text,
    render_text,
    se_csv_rows,
    write_csv,
)
from .rogan_gladen import IntervalMethod, rogan_gladen_interval
from .simulate import (
    ESTIMATOR_NAMES,
    EstimatorSpec,
    load_bundled_scenario,
    read_scenario,
    replicate_study,
    simulate,
)

log = logging.getLogger("misclass_prev.cli")

VARIANT_NAMES = {
    "both": LiuVariant.BOTH_FREE,
    "fp": LiuVariant.FALSE_POSITIVE_ONLY,
    "fn": LiuVariant.FALSE_NEGATIVE_ONLY,
    "equal": LiuVariant.ERRORS_EQUAL,
}


def _add_data_flags(sub):
    sub.add_argument("--data", required=True, help="cohort csv file")
    sub.add_argument("--config", help="analysis config (column map, assay blocks)")
    sub.add_argument("--outcome", default="outcome", help="outcome label, selects assay block")


def _add_assay_flags(sub):
    sub.add_argument("--se", type=float, help="assay sensitivity")
    sub.add_argument("--sp", type=float, help="assay specificity")
    sub.add_argument(
        "--se-prior-n",
        type=float,
        help="prior effective sample size for sensitivity (switches on beta priors)",
    )
    sub.add_argument("--sp-prior-n", type=float, help="prior effective sample size for specificity")


def _add_sampler_flags(sub, chains=4, warmup=2000, samples=2000):
    sub.add_argument("--chains", type=int, default=chains)
    sub.add_argument("--warmup", type=int, default=warmup)
    sub.add_argument("--samples", type=int, default=samples)


def _add_output_flags(sub):
    sub.add_argument("--format", choices=("text", "csv"), default="text")
    sub.add_argument("--out", help="write the result here instead of stdout")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="misclass-prev",
        description="prevalence and covariate estimation under outcome misclassification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit one model on a cohort file")
    _add_data_flags(fit)
    fit.add_argument("--model", required=True, choices=tuple(t.value for t in ModelTag))
    _add_assay_flags(fit)
    fit.add_argument("--variant", choices=tuple(VARIANT_NAMES), default="both")
    _add_sampler_flags(fit)
    fit.add_argument("--bootstrap", type=int, help="interval resamples (std/liu)")
    fit.add_argument(
        "--interval",
        choices=("bootstrap", "delta"),
        default="bootstrap",
        help="interval construction for the std model",
    )
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--save-draws", help="write posterior draws csv (bc/bec)")
    fit.add_argument("--allow-nonconverged", action="store_true")
    _add_output_flags(fit)

    comp = sub.add_parser("compare", help="run the estimator battery and compare")
    _add_data_flags(comp)
    comp.add_argument(
        "--models",
        default="std,liu,bc,bec",
        help="comma separated subset of std,liu,bc,bec",
    )
    _add_assay_flags(comp)
    comp.add_argument("--variant", choices=tuple(VARIANT_NAMES), default="both")
    _add_sampler_flags(comp)
    comp.add_argument("--bootstrap", type=int, help="interval resamples (std/liu)")
    comp.add_argument("--seed", type=int, default=0)
    comp.add_argument("--allow-nonconverged", action="store_true")
    comp.add_argument("--coef-out", help="also write the coefficient block csv here")
    comp.add_argument("--se-out", help="also write the standard-error block csv here")
    _add_output_flags(comp)

    sim = sub.add_parser("simulate", help="draw synthetic cohorts or run a study")
    sim.add_argument("--scenario", required=True, help="bundled scenario name or .ini path")
    sim.add_argument("--seed", type=int, help="override the scenario seed")
    sim.add_argument("--truth-out", help="write per-subject latent truth csv here")
    sim.add_argument("--reps", type=int, help="run a replication study with this many cohorts")
    sim.add_argument(
        "--estimators",
        default="observed,rg,std,liu",
        help=f"comma separated subset of {','.join(ESTIMATOR_NAMES)} (study mode)",
    )
    sim.add_argument("--workers", type=int, help="parallel replicate workers (study mode)")
    _add_sampler_flags(sim, chains=2, warmup=800, samples=800)
    sim.add_argument("--se", type=float, help="analysis sensitivity override (study mode)")
    sim.add_argument("--sp", type=float, help="analysis specificity override (study mode)")
    _add_output_flags(sim)

    rep = sub.add_parser("report", help="re-render a saved comparison csv as text")
    rep.add_argument("--in", dest="infile", required=True, help="csv written by fit or compare")
    rep.add_argument("--out", help="write the result here instead of stdout")

    return parser


def _emit(text, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        log.info("wrote %s", out_path)
    else:
        sys.stdout.write(text)


def _echo(args, extra=""):
    seed = getattr(args, "seed", None)
    line = f"misclass-prev {args.command}: seed = {seed if seed is not None else 'n/a'}"
    if extra:
        line += f"; {extra}"
    print(line, file=sys.stderr)


def _load_config(args):
    if getattr(args, "config", None):
        return read_analysis_config(args.config)
    return AnalysisConfig()


def _resolve_assay(args, config, outcome_label, required):
    """Merge assay settings from flags over the config file blocks."""
    block = config.assays.get(outcome_label.lower()) or config.assays.get("") or {}
    se = args.se if args.se is not None else block.get("se")
    sp = args.sp if args.sp is not None else block.get("sp")
    if se is None or sp is None:
        if required:
            raise InputError(
                "assay accuracy is required here; pass --se/--sp or provide an "
                f"[assay] or [assay.{outcome_label.lower()}] config block"
            )
        return None
    se_n = getattr(args, "se_prior_n", None)
    sp_n = getattr(args, "sp_prior_n", None)
    if se_n is None:
        se_n = block.get("se_prior_n")
    if sp_n is None:
        sp_n = block.get("sp_prior_n")
    if se_n is not None or sp_n is not None:
        return AssayProfile.with_beta_priors(
            se, sp, se_prior_n=se_n or 1000.0, sp_prior_n=sp_n or 1000.0
        )
    return AssayProfile(sensitivity=float(se), specificity=float(sp))


def _assay_echo(assay):
    if assay is None:
        return "no assay"
    return (
        f"assay Se = {assay.sensitivity} Sp = {assay.specificity} ({assay.mode.value})"
    )


def _gate_convergence(fit, allow):
    if fit.converged:
        return
    if allow:
        log.warning(
            "%s fit flagged non-converged (%s); continuing because "
            "--allow-nonconverged is set",
            fit.model_tag.value,
            fit.condition_warning,
        )
        return
    raise NonConvergenceError(
        f"{fit.model_tag.value} fit did not converge: {fit.condition_warning}"
    )


def _fixed_point_assay(assay):
    """The point (se, sp) view of a profile, for external corrections."""
    if assay.mode.value == "fixed":
        return assay
    return AssayProfile(sensitivity=assay.sensitivity, specificity=assay.specificity)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _fit_one(args, y, X, assay, rng_seed):
    """Dispatch one model fit; returns (fit, prevalence, extras_rows)."""
    model = ModelTag(args.model)
    extras = []

    if model is ModelTag.STD:
        if assay is None:
            raise InputError("the std pipeline needs --se/--sp for the external correction")
        fit = fit_std(y, X)
        _gate_convergence(fit, args.allow_nonconverged)
        prev = None
        if fit.converged:
            prev = marginal_prevalence_std(
                y,
                X,
                fit,
                _fixed_point_assay(assay),
                n_boot=args.bootstrap or 1000,
                rng=np.random.default_rng([rng_seed, 0xB007]),
                interval=IntervalMethod.BOOTSTRAP
                if args.interval == "bootstrap"
                else IntervalMethod.DELTA,
            )
        return fit, prev, extras

    if model is ModelTag.LIU:
        fit = fit_liu(y, X, variant=VARIANT_NAMES[args.variant])
        _gate_convergence(fit, args.allow_nonconverged)
        rates = fit.error_rates_hat
        extras.append(("error_rate_r0", rates.r0, rates.se_r0))
        extras.append(("error_rate_r1", rates.r1, rates.se_r1))
        prev = None
        if fit.converged:
            prev = marginal_prevalence_liu(
                X,
                fit,
                n_boot=args.bootstrap or 500,
                rng=np.random.default_rng([rng_seed, 0xB007]),
            )
        return fit, prev, extras

    config = SamplerConfig(
        chains=args.chains, warmup=args.warmup, samples=args.samples, seed=rng_seed
    )
    if model is ModelTag.BC:
        if assay is None:
            raise InputError("the bc pipeline needs --se/--sp for the external correction")
        fit, draws = fit_bc(y, X, config=config)
    else:
        if assay is None:
            raise InputError("the bec pipeline needs --se/--sp")
        fit, draws = fit_bec(y, X, assay, config=config)
        if assay.mode.value != "fixed":
            # the sampled accuracy coordinates live in the draws, after
            # the coefficients; summarize them alongside the fit table
            flat = draws.flat()
            for j, name in enumerate(draws.param_names[-2:]):
                col = flat[:, flat.shape[1] - 2 + j]
                extras.append((name, float(col.mean()), float(col.std(ddof=1))))
    _gate_convergence(fit, args.allow_nonconverged)
    if args.save_draws:
        draws.to_csv(args.save_draws)
        log.info("wrote %d draws to %s", draws.n_total, args.save_draws)
    prev = marginal_prevalence_bayes(
        draws,
        X,
        model,
        assay=_fixed_point_assay(assay) if model is ModelTag.BC else None,
        allow_bad_chains=args.allow_nonconverged,
    )
    return fit, prev, extras


def _fit_rows(fit, prev, extras):
    """One rectangular table for a single fit: coefficients then extras."""
    rows = [["coefficient", "estimate", "se"]]
    for j, name in enumerate(fit.column_names):
        se = None if fit.beta_se is None else float(fit.beta_se[j])
        rows.append([name, float(fit.beta_hat[j]), se])
    for name, value, se in extras:
        rows.append([name, value, se])
    if prev is not None:
        rows.append(["marginal_prevalence", prev.point, None])
        rows.append(["prevalence_lower", prev.lower, None])
        rows.append(["prevalence_upper", prev.upper, None])
    return rows


def _run_fit(args):
    config = _load_config(args)
    model = ModelTag(args.model)
    assay = _resolve_assay(args, config, args.outcome, required=model is not ModelTag.LIU)
    _echo(args, f"model = {args.model}; {_assay_echo(assay)}")

    cohort = load_cohort(args.data, column_map=config.column_map, outcome_label=args.outcome)
    X = build_design_matrix(cohort)
    y = cohort.outcomes()

    fit, prev, extras = _fit_one(args, y, X, assay, args.seed)
    rows = _fit_rows(fit, prev, extras)

    if args.format == "csv":
        out = "\n".join(
            ",".join("" if v is None else (repr(v) if isinstance(v, float) else str(v)) for v in r)
            for r in rows
        ) + "\n"
    else:
        head = (
            f"model: {fit.model_tag.value}  loglik: {fit.loglik:.6f}  "
            f"converged: {str(fit.converged).lower()}\n"
        )
        if fit.condition_warning:
            head += f"note: {fit.condition_warning}\n"
        out = head + "\n" + _text_table(_reparse(rows)) + "\n"
        if prev is not None:
            out += (
                f"\nmarginal prevalence: {prev.point:.6g} "
                f"[{prev.lower:.6g}, {prev.upper:.6g}] ({prev.interval_method.value})\n"
            )
    _emit(out, args.out)
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


def _run_compare(args):
    config = _load_config(args)
    assay = _resolve_assay(args, config, args.outcome, required=True)
    wanted = [w.strip().upper() for w in args.models.split(",") if w.strip()]
    bad = [w for w in wanted if w not in tuple(t.value for t in ModelTag)]
    if bad:
        raise InputError(f"unknown models {bad}; valid: {[t.value.lower() for t in ModelTag]}")
    _echo(args, f"models = {','.join(wanted)}; {_assay_echo(assay)}")

    cohort = load_cohort(args.data, column_map=config.column_map, outcome_label=args.outcome)
    X = build_design_matrix(cohort)
    y = cohort.outcomes()
    point_assay = _fixed_point_assay(assay)

    crude = rogan_gladen_interval(
        int(y.sum()), y.shape[0], point_assay, method=IntervalMethod.WALD
    )

    fits, prevalences = {}, {}
    for name in wanted:
        tag = ModelTag(name)
        if tag is ModelTag.STD:
            fit = fit_std(y, X)
            _gate_convergence(fit, args.allow_nonconverged)
            fits[tag] = fit
            if fit.converged:
                prevalences[tag] = marginal_prevalence_std(
                    y,
                    X,
                    fit,
                    point_assay,
                    n_boot=args.bootstrap or 1000,
                    rng=np.random.default_rng([args.seed, 1]),
                )
        elif tag is ModelTag.LIU:
            fit = fit_liu(y, X, variant=VARIANT_NAMES[args.variant])
            _gate_convergence(fit, args.allow_nonconverged)
            fits[tag] = fit
            if fit.converged:
                prevalences[tag] = marginal_prevalence_liu(
                    X, fit, n_boot=args.bootstrap or 500, rng=np.random.default_rng([args.seed, 2])
                )
        else:
            sampler = SamplerConfig(
                chains=args.chains, warmup=args.warmup, samples=args.samples, seed=args.seed
            )
            if tag is ModelTag.BC:
                fit, draws = fit_bc(y, X, config=sampler)
                ext = point_assay
            else:
                fit, draws = fit_bec(y, X, assay, config=sampler)
                ext = None
            _gate_convergence(fit, args.allow_nonconverged)
            fits[tag] = fit
            prevalences[tag] = marginal_prevalence_bayes(
                draws, X, tag, assay=ext, allow_bad_chains=args.allow_nonconverged
            )

    report = build_comparison_report(crude, fits=fits, prevalences=prevalences)

    if args.coef_out:
        write_csv(coefficient_csv_rows(report), args.coef_out)
        log.info("wrote %s", args.coef_out)
    if args.se_out:
        write_csv(se_csv_rows(report), args.se_out)
        log.info("wrote %s", args.se_out)

    if args.format == "csv":
        rows = prevalence_csv_rows(report)
        out = "\n".join(",".join(str(v) for v in r) for r in rows) + "\n"
    else:
        out = render_text(report)
    _emit(out, args.out)
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _load_scenario(name_or_path):
    if name_or_path.endswith(".ini"):
        return read_scenario(name_or_path)
    return load_bundled_scenario(name_or_path)


def _run_simulate(args):
    scenario = _load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=int(args.seed))
    print(f"misclass-prev simulate: seed = {scenario.seed}; n = {scenario.n}", file=sys.stderr)

    if args.reps:
        wanted = [w.strip().lower() for w in args.estimators.split(",") if w.strip()]
        bad = [w for w in wanted if w not in ESTIMATOR_NAMES]
        if bad:
            raise InputError(f"unknown estimators {bad}; valid: {list(ESTIMATOR_NAMES)}")
        override = None
        if args.se is not None and args.sp is not None:
            override = AssayProfile(sensitivity=args.se, specificity=args.sp)
        specs = [
            EstimatorSpec(
                name=w,
                assay=override,
                chains=args.chains,
                warmup=args.warmup,
                samples=args.samples,
            )
            for w in wanted
        ]
        summaries = replicate_study(scenario, specs, reps=args.reps, workers=args.workers)
        rows = [["estimator", "reps", "failures", "failure_rate", "mean_bias", "coverage", "mean_width"]]
        for s in summaries:
            rows.append(
                [s.estimator, s.reps, s.failures, s.failure_rate, s.mean_bias, s.coverage, s.mean_width]
            )
        if args.format == "csv":
            out = "\n".join(
                ",".join(repr(v) if isinstance(v, float) else str(v) for v in r) for r in rows
            ) + "\n"
        else:
            out = _text_table(rows) + "\n"
        _emit(out, args.out)
        return 0

    if not args.out:
        raise InputError("simulate needs --out for the cohort csv (or --reps for a study)")
    cohort, truth = simulate(scenario)
    save_cohort(cohort, args.out)
    log.info("wrote %d records to %s", len(cohort.records), args.out)
    if args.truth_out:
        with open(args.truth_out, "w", encoding="utf-8", newline="") as fh:
            fh.write("pi,true_status\n")
            for p, t in zip(truth.pi, truth.true_status):
                fh.write(f"{float(p)!r},{int(t)}\n")
        log.info("wrote truth to %s", args.truth_out)
    print(
        f"misclass-prev simulate: true prevalence = {truth.true_prevalence!r}; "
        f"observed = {float(cohort.outcomes().mean())!r}",
        file=sys.stderr,
    )
    return 0


def _run_report(args):
    try:
        text = render_csv_text(args.infile)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _emit(text, args.out)
    return 0


_COMMANDS = {
    "fit": _run_fit,
    "compare": _run_compare,
    "simulate": _run_simulate,
    "report": _run_report,
}


def main(argv=None):
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except StatisticalError as exc:
        print(f"statistical error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
