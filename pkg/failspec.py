#!/usr/bin/env python3
"""
failspec command-line entry point.

Subcommands generate decoding systems, sample failure spectra and rates, fit
the ansatz, run the minimum-weight analysis, run multi-seeded splitting and
merge the outputs into one report. Each command writes its artifacts to
--out-dir together with a job.json holding the JobConfig and its SHA-256.

Configuration precedence: flags > --config JSON file > defaults (.env).
"""
import csv
import hashlib
import json
import logging
import math
from pathlib import Path

import click
import numpy as np
from pydantic import BaseModel, ValidationError

import ansatz
import config
import minweight
import sampling
import splitting
from decoders import DecoderConfig
from errors import FailspecError
from system import generate, read_system, write_system

logger = logging.getLogger(__name__)


# --- Job provenance ---

class JobConfig(BaseModel):
    command: str
    params: dict
    master_seed: int = 0
    output_dir: str = config.OUTPUT_DIR

    def canonical_json(self):
        return json.dumps(self.model_dump(), sort_keys=True, default=str)

    def digest(self):
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def _out_dir(path):
    out = Path(path or config.OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _record_job(command, params, seed, out):
    job = JobConfig(command=command, params={k: v for k, v in params.items()}, master_seed=seed,
                    output_dir=str(out))
    path = out / "job.json"
    path.write_text(json.dumps({"job": json.loads(job.canonical_json()), "sha256": job.digest()}, indent=2),
                    encoding="utf-8")
    return job


def _write_json(path, payload):
    path.write_text(json.dumps(payload, indent=2, default=str), encoding="utf-8")
    return path


# --- Shared option parsing ---

def parse_weights(text):
    """'6:30:2' -> 6, 8, ..., 30 (inclusive); '1,2,5' -> listed weights."""
    try:
        if ":" in text:
            parts = [int(x) for x in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            lo, hi = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1
            if step < 1 or hi < lo:
                raise ValueError
            return list(range(lo, hi + 1, step))
        return sorted({int(x) for x in text.split(",") if x.strip()})
    except ValueError:
        raise click.BadParameter(f"expected lo:hi[:step] or a comma list, got {text!r}") from None


def parse_fixed(items):
    """('w0=6', 'a=0.75') -> {'w0': 6.0, 'a': 0.75}"""
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        try:
            if not sep:
                raise ValueError
            out[key.strip()] = float(value)
        except ValueError:
            raise click.BadParameter(f"expected NAME=VALUE, got {item!r}") from None
    return out


def _symmetry_group(spec):
    """'toric:4', 'toric:3,5' or 'rotated:4'."""
    family, _, dims = spec.partition(":")
    try:
        sizes = [int(x) for x in dims.split(",")]
        if family == "toric":
            return minweight.toric_symmetry(*sizes)
        if family == "rotated":
            return minweight.rotated_symmetry(sizes[0])
    except (ValueError, IndexError, TypeError):
        pass
    raise click.BadParameter(f"expected toric:D1[,D2] or rotated:D, got {spec!r}")


def decoder_options(fn):
    """--decoder, --prior-rate, --cost-model and --decoder-config."""
    fn = click.option("--decoder-config", type=click.Path(exists=True, dir_okay=False),
                      help="JSON DecoderConfig; flags below override it.")(fn)
    fn = click.option("--cost-model", type=click.Choice(["unit", "log_prior"]), default=None)(fn)
    fn = click.option("--prior-rate", type=float, default=None)(fn)
    fn = click.option("--decoder", "backend", type=click.Choice(["lookup", "branch_and_bound", "bp_osd0"]),
                      default=None)(fn)
    return fn


def build_decoder_config(backend=None, prior_rate=None, cost_model=None, decoder_config=None):
    values = json.loads(Path(decoder_config).read_text(encoding="utf-8")) if decoder_config else {}
    for key, value in (("backend", backend), ("prior_rate", prior_rate), ("cost_model", cost_model)):
        if value is not None:
            values[key] = value
    return DecoderConfig(**values)


def _load_config(ctx, param, value):
    if value:
        try:
            ctx.default_map = json.loads(Path(value).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise click.BadParameter(f"cannot read config {value}: {e}") from None
    return value


# --- CLI ---

class FailspecGroup(click.Group):
    """Maps library exceptions onto exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except FailspecError as e:
            logger.error(f"❌ {type(e).__name__}: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
            ctx.exit(e.exit_code)
        except (ValidationError, ValueError) as e:
            logger.error(f"❌ invalid input: {e}")
            ctx.exit(2)


@click.group(cls=FailspecGroup)
@click.option("--config", "config_file", type=click.Path(dir_okay=False), callback=_load_config,
              is_eager=True, expose_value=False, help="JSON file of per-command defaults.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def cli(verbose):
    """Failure spectra, min-weight onsets and splitting estimates for binary decoding systems."""
    logging.basicConfig(level=logging.DEBUG if verbose else config.LOG_LEVEL, format=config.LOG_FORMAT)


@cli.command()
@click.argument("family", type=click.Choice(["rep", "ut", "rt"]))
@click.option("--n", type=int, help="Repetition length.")
@click.option("--d", type=int, help="Rotated toric size.")
@click.option("--d1", type=int, help="Unrotated toric width.")
@click.option("--d2", type=int, help="Unrotated toric height (defaults to d1).")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def gen(family, n, d, d1, d2, out):
    """Write the interchange file of a built-in family."""
    params = {"rep": {"n": n}, "ut": {"d1": d1, "d2": d2}, "rt": {"d": d}}[family]
    required = {"rep": ("n",), "ut": ("d1",), "rt": ("d",)}[family]
    missing = [k for k in required if params[k] is None]
    if missing:
        raise click.UsageError(f"{family} needs --{' --'.join(missing)}")
    try:
        system = generate(family, **params)
    except ValueError as e:
        raise click.UsageError(str(e)) from None
    stem = "_".join([family, *(str(v) for v in params.values() if v is not None)])
    path = Path(out) if out else _out_dir(None) / f"{stem}.txt"
    write_system(system, path)
    logger.info(f"✅ {system.label}: NTILDE={system.n_faults} M={system.n_checks} K={system.n_actions}")
    click.echo(str(path))


@cli.command()
@click.argument("system_path", type=click.Path(exists=True, dir_okay=False))
@decoder_options
@click.option("--weights", required=True, help="lo:hi[:step] or comma list.")
@click.option("--trials", type=int, default=None, help="Fixed trials per weight.")
@click.option("--failures", type=int, default=None, help="Sample each weight until this many failures.")
@click.option("--max-trials", type=int, default=10**6, show_default=True)
@click.option("--exact", is_flag=True, help="Brute-force oracle instead of sampling.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", "n_workers", type=int, default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def spectrum(system_path, backend, prior_rate, cost_model, decoder_config, weights, trials, failures,
             max_trials, exact, seed, n_workers, out_dir):
    """Sample the failure spectrum f(w) into spectrum.csv."""
    system = read_system(system_path)
    cfg = build_decoder_config(backend, prior_rate, cost_model, decoder_config)
    ws = parse_weights(weights)
    bad = [w for w in ws if not 0 <= w <= system.n_expanded]
    if bad:
        raise click.BadParameter(f"weights {bad} outside 0..{system.n_expanded}", param_hint="--weights")
    out = _out_dir(out_dir)
    if not exact and (trials is None) == (failures is None):
        raise click.UsageError("give exactly one of --trials or --failures")
    n_workers = config.worker_count(n_workers)
    rng = np.random.default_rng(seed)

    spec = sampling.SpectrumEstimate(system.n_expanded, system.asymptote, label=system.label)
    if exact:
        f = sampling.exact_spectrum(system, cfg)
        # exact fractions stored as failures per 10^12 pseudo-trials
        scale = 10**12
        for w in ws:
            spec.add(w, scale, int(round(f[w] * scale)))
    elif trials is not None:
        spec = sampling.sample_spectrum(system, cfg, {w: trials for w in ws}, rng, n_workers)
    else:
        for w in ws:
            f_w, t_w = sampling.sample_weight_until(system, cfg, w, failures, max_trials, rng, n_workers=n_workers)
            spec.add(w, t_w, f_w)
            logger.info(f"--- SPECTRUM {system.label}: w={w} F={f_w} T={t_w} ---")

    path = sampling.write_spectrum_csv(spec, out / "spectrum.csv")
    _record_job("spectrum", {"system": system_path, "decoder": cfg.model_dump(), "weights": ws, "trials": trials,
                             "failures": failures, "max_trials": max_trials, "exact": exact}, seed, out)
    logger.info(f"✅ Spectrum over {len(spec.weights)} weights written")
    click.echo(str(path))


@cli.command()
@click.argument("system_path", type=click.Path(exists=True, dir_okay=False))
@decoder_options
@click.option("--rate", "rate_list", multiple=True, type=float, required=True)
@click.option("--trials", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", "n_workers", type=int, default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def rates(system_path, backend, prior_rate, cost_model, decoder_config, rate_list, trials, seed, n_workers,
          out_dir):
    """Direct Monte Carlo estimates of P(p) into rates.csv."""
    system = read_system(system_path)
    cfg = build_decoder_config(backend, prior_rate, cost_model, decoder_config)
    out = _out_dir(out_dir)
    rng = np.random.default_rng(seed)
    n_workers = config.worker_count(n_workers)
    estimates = []
    for p in sorted(rate_list):
        est = sampling.sample_rate(system, cfg, p, trials, rng, n_workers)
        logger.info(f"--- RATE {system.label}: p={p:g} P={est.phat:.4g} +- {est.stderr:.2g} ---")
        estimates.append(est)
    path = sampling.write_rate_csv(estimates, out / "rates.csv")
    _record_job("rates", {"system": system_path, "decoder": cfg.model_dump(), "rates": list(rate_list),
                          "trials": trials}, seed, out)
    logger.info(f"✅ {len(estimates)} rate points written")
    click.echo(str(path))


@cli.command()
@click.argument("spectrum_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--rates", "rates_csv", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--variant", type=click.Choice(["model", "a2", "a3", "a5", "a6"]), default="a5", show_default=True)
@click.option("--fix", "fixed", multiple=True, help="NAME=VALUE, repeatable (e.g. w0=6).")
@click.option("--rate-divisor", type=float, default=1.0, show_default=True)
@click.option("--reference", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Rates CSV used as the reference curve for max_deviation.")
@click.option("--compare-powerlaw", is_flag=True)
@click.option("--distance", type=int, default=None, help="Distance for the power-law grid.")
@click.option("--n-starts", type=int, default=8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def fit(spectrum_csv, rates_csv, variant, fixed, rate_divisor, reference, compare_powerlaw, distance, n_starts,
        seed, out_dir):
    """Fit the ansatz; writes fit.json and curve.csv."""
    spec = sampling.read_spectrum_csv(spectrum_csv)
    rate_points = sampling.read_rate_csv(rates_csv) if rates_csv else []
    out = _out_dir(out_dir)
    result = ansatz.fit(spec, rate_points, variant=variant, fixed=parse_fixed(fixed), rate_divisor=rate_divisor,
                        n_starts=n_starts, seed=seed)
    payload = {"fit": result.model_dump(), "n_expanded": spec.n_expanded, "rate_divisor": rate_divisor}

    grid = ansatz.deviation_grid()
    curve = {"P_fit": ansatz.predict_curve(result.params, spec.n_expanded, grid, rate_divisor)}
    if compare_powerlaw:
        if not rate_points:
            raise click.UsageError("--compare-powerlaw needs --rates")
        pl = ansatz.fit_powerlaw(rate_points, distance=distance)
        payload["powerlaw"] = pl.model_dump()
        curve["P_powerlaw"] = np.array([ansatz.predict_rate(pl.params, spec.n_expanded, p) for p in grid])
    if reference:
        ref = [r for r in sampling.read_rate_csv(reference) if r.failures > 0]
        ps = [r.p for r in ref]
        payload["max_deviation"] = ansatz.max_deviation(
            ansatz.predict_curve(result.params, spec.n_expanded, ps, rate_divisor), [r.phat for r in ref], ps)

    _write_json(out / "fit.json", payload)
    with (out / "curve.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# failspec curve variant={variant}\n")
        writer = csv.writer(fh)
        writer.writerow(["p", *curve])
        for k, p in enumerate(grid):
            writer.writerow([f"{p!r}", *(f"{col[k]:.10g}" for col in curve.values())])
    _record_job("fit", {"spectrum": spectrum_csv, "rates": rates_csv, "variant": variant, "fixed": list(fixed),
                        "rate_divisor": rate_divisor, "compare_powerlaw": compare_powerlaw}, seed, out)
    mark = "✅" if result.converged else "❌"
    logger.info(f"{mark} Fit {variant}: chi2={result.chi2:.4g} dof={result.dof}")
    click.echo(json.dumps({"chi2": result.chi2, "dof": result.dof, "free": len(ansatz.FREE_PARAMS[variant])
                           - len([k for k in parse_fixed(fixed) if k in ansatz.FREE_PARAMS[variant]])}))


@cli.command("minweight")
@click.argument("system_path", type=click.Path(exists=True, dir_okay=False))
@decoder_options
@click.option("--mode", required=True,
              type=click.Choice(["distance", "dbound", "enumerate", "search", "onset", "onset-sample"]))
@click.option("--wmax", type=int, default=None, help="Largest weight for enumerate.")
@click.option("--weight", type=int, default=None, help="Target weight for search.")
@click.option("--trials", type=int, default=200, show_default=True, help="dbound decodes or onset samples.")
@click.option("--rounds", type=int, default=1000, show_default=True, help="Search rounds.")
@click.option("--decimation", is_flag=True)
@click.option("--perturb-priors", is_flag=True)
@click.option("--symmetry", default=None, help="toric:D1[,D2] or rotated:D closure after search.")
@click.option("--coverage-samples", type=int, default=0, show_default=True)
@click.option("--logicals", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--logicals-next", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Weight-(D+1) set for odd D.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def minweight_cmd(system_path, backend, prior_rate, cost_model, decoder_config, mode, wmax, weight, trials, rounds,
                  decimation, perturb_priors, symmetry, coverage_samples, logicals, logicals_next, seed, out_dir):
    """Distance, logical sets and the optimal onset; writes minweight.json."""
    system = read_system(system_path)
    cfg = build_decoder_config(backend, prior_rate, cost_model, decoder_config)
    out = _out_dir(out_dir)
    rng = np.random.default_rng(seed)
    result = {"mode": mode, "system": system.label}

    if mode == "distance":
        d, witnesses = minweight.distance_exact(system, cfg)
        result.update(D=d, witnesses=[w.support() for w in witnesses])
    elif mode == "dbound":
        d, witnesses = minweight.distance_upper_bound(system, cfg, trials, rng)
        result.update(D_max=d, witnesses=[w.support() for w in witnesses])
    elif mode == "enumerate":
        if wmax is None:
            raise click.UsageError("enumerate needs --wmax")
        sets = minweight.enumerate_logicals_exact(system, wmax, cfg=cfg)
        for w, found in sets.items():
            minweight.write_logicals(found, out / f"logicals_w{w}.txt")
        result.update(counts={w: len(s) for w, s in sets.items()},
                      expanded_counts={w: minweight.expanded_logical_count(s, system) for w, s in sets.items()})
    elif mode == "search":
        if weight is None:
            raise click.UsageError("search needs --weight")
        found = minweight.search_logicals(system, cfg, weight, rounds, rng, decimation=decimation,
                                          prior_perturbation=perturb_priors)
        if symmetry:
            found = minweight.expand_by_symmetry(found, _symmetry_group(symmetry), system)
        minweight.write_logicals(found, out / f"logicals_w{weight}.txt")
        result.update(weight=weight, count=len(found), expanded_count=minweight.expanded_logical_count(found, system),
                      discovery=found.discovery)
        if coverage_samples:
            result["coverage"] = minweight.coverage_estimate(found, system, cfg, coverage_samples, rng)
    else:
        if logicals is None:
            raise click.UsageError(f"{mode} needs --logicals")
        found = minweight.read_logicals(logicals, system.n_faults)
        found_next = minweight.read_logicals(logicals_next, system.n_faults) if logicals_next else None
        if mode == "onset":
            onset = minweight.onset_exact(system, found, found_next)
            result.update(onset.model_dump())
        else:
            if found.weight % 2:
                if found_next is None:
                    raise click.UsageError("odd D needs --logicals-next")
                fails, err = minweight.onset_sampled_odd(system, found, found_next, trials, rng)
            else:
                fails, err = minweight.onset_sampled(system, found, trials, rng)
            w0 = math.ceil(found.weight / 2)
            total = math.comb(system.n_expanded, w0)
            result.update(d=found.weight, fails=fails, stderr=err, onset_fraction=fails / total,
                          onset_fraction_stderr=err / total, n_expanded=system.n_expanded)

    path = _write_json(out / "minweight.json", result)
    _record_job("minweight", {"system": system_path, "decoder": cfg.model_dump(), "mode": mode, "wmax": wmax,
                              "weight": weight, "trials": trials, "rounds": rounds, "decimation": decimation,
                              "perturb_priors": perturb_priors, "symmetry": symmetry,
                              "logicals": logicals, "logicals_next": logicals_next}, seed, out)
    logger.info(f"✅ minweight {mode} on {system.label} done")
    click.echo(json.dumps(result, default=str))
    return path


@cli.command()
@click.option("--job", "job_file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="SplitJob JSON; flags override its fields.")
@click.option("--system", "system_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--p0", type=float, default=None)
@click.option("--target", "targets", type=float, multiple=True)
@click.option("--L", "n_seeds", type=int, default=None)
@click.option("--M", "n_reps", type=int, default=None)
@click.option("--t-init", type=int, default=None)
@click.option("--epsilon", type=float, default=None)
@click.option("--lam", type=float, default=None)
@click.option("--budget", "budget_seconds", type=float, default=None)
@click.option("--distance", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", "n_workers", type=int, default=None)
@click.option("--progress", is_flag=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def split(job_file, system_path, p0, targets, n_seeds, n_reps, t_init, epsilon, lam, budget_seconds, distance, seed,
          n_workers, progress, out_dir):
    """Multi-seeded splitting; writes split.csv, estimates.json and chains.json."""
    values = json.loads(Path(job_file).read_text(encoding="utf-8")) if job_file else {}
    overrides = {"system": system_path, "p0": p0, "targets": list(targets) or None, "L": n_seeds, "M": n_reps,
                 "T_init": t_init, "epsilon": epsilon, "lam": lam, "budget_seconds": budget_seconds,
                 "distance": distance, "seed": seed}
    values.update({k: v for k, v in overrides.items() if v is not None})
    job = splitting.SplitJob(**values)

    system = read_system(job.system)
    out = _out_dir(out_dir)
    rng = np.random.default_rng(job.seed)
    d = job.distance
    if d is None:
        d, _ = minweight.distance_upper_bound(system, job.decoder, 200, rng)
        logger.info(f"Using distance bound D <= {d} for the schedule")
    seed_configs = None
    if job.seed_logicals:
        seed_configs = list(minweight.read_logicals(job.seed_logicals, system.n_faults))

    result = splitting.multi_seeded_split(
        system, job.decoder, job.p0, job.targets, job.L, job.M, job.T_init, rng, d, epsilon=job.epsilon,
        lam=job.lam, p0_failures=job.p0_failures, p0_max_trials=job.p0_max_trials, seed_configs=seed_configs,
        budget_seconds=job.budget_seconds, n_workers=config.worker_count(n_workers), progress=progress,
    )
    path = splitting.write_split_csv(result, out / "split.csv", label=system.label)
    _write_json(out / "chains.json", splitting.chain_log(result))
    _write_json(out / "estimates.json", [
        {"p_target": e.p_target, "P_hat": e.p_hat, "P_stderr": e.p_stderr, "ratios": e.ratios,
         "ratio_stderrs": e.ratio_stderrs, "P_p0": e.p0_estimate}
        for e in result.estimates()
    ])
    _record_job("split", json.loads(job.model_dump_json()), job.seed, out)
    partial = sum(row["partial_chains"] for row in splitting.chain_diagnostics(result.bundles))
    mark = "❌" if partial else "✅"
    logger.info(f"{mark} Splitting on {system.label}: {len(result.instances)} instances, {partial} partial chains")
    click.echo(str(path))


def _log_interp(ps, values, grid):
    """Log-log interpolation of a positive curve; NaN outside its p range."""
    pts = sorted((p, v) for p, v in zip(ps, values) if p > 0 and v > 0)
    out = np.full(len(grid), np.nan)
    if not pts:
        return out
    lp = np.log([p for p, _ in pts])
    lv = np.log([v for _, v in pts])
    lg = np.log(grid)
    inside = (lg >= lp[0]) & (lg <= lp[-1])
    out[inside] = np.exp(np.interp(lg[inside], lp, lv))
    return out


@cli.command()
@click.option("--fit", "fit_json", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--onset", "onset_json", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--split", "split_csv", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--rates", "rates_csv", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--spectrum", "spectrum_csv", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def report(fit_json, onset_json, split_csv, rates_csv, spectrum_csv, out_dir):
    """Merge artifacts onto a shared p grid; writes report.csv and report.json."""
    inputs = {"fit": fit_json, "onset": onset_json, "split": split_csv, "rates": rates_csv,
              "spectrum": spectrum_csv}
    if not any(inputs.values()):
        raise click.UsageError("report needs at least one input artifact")
    out = _out_dir(out_dir)
    grid = ansatz.deviation_grid()
    columns = {}
    meta = {"inputs": inputs}

    if fit_json:
        payload = json.loads(Path(fit_json).read_text(encoding="utf-8"))
        params = ansatz.AnsatzParams(**payload["fit"]["params"])
        n, b = payload["n_expanded"], payload.get("rate_divisor", 1.0)
        columns["fit"] = ansatz.predict_curve(params, n, grid, b)
        if "powerlaw" in payload:
            pl = ansatz.AnsatzParams(**payload["powerlaw"]["params"])
            columns["powerlaw"] = np.array([ansatz.predict_rate(pl, n, p) for p in grid])
        meta["fit"] = {"variant": params.variant, "w0": params.w0, "f0": params.f0,
                       "chi2": payload["fit"]["chi2"], "max_deviation": payload.get("max_deviation")}
    if rates_csv:
        rp = sampling.read_rate_csv(rates_csv)
        columns["monte_carlo"] = _log_interp([r.p for r in rp], [r.phat for r in rp], grid)
    if split_csv:
        rows = splitting.read_split_csv(split_csv)
        columns["splitting"] = _log_interp([r["p"] for r in rows], [r["P_hat"] for r in rows], grid)
    if spectrum_csv:
        spec = sampling.read_spectrum_csv(spectrum_csv)
        meta["spectrum"] = {"N": spec.n_expanded, "points": len(spec.weights),
                            "first_failing_weight": next((w for w, _, f, _, _ in spec.rows() if f > 0), None)}
    if onset_json:
        onset = json.loads(Path(onset_json).read_text(encoding="utf-8"))
        meta["onset_point"] = {"w0": math.ceil(onset["d"] / 2), "f": onset["onset_fraction"],
                               "lower_bound": onset.get("lower_bound", False)}

    with (out / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write("# failspec report\n")
        writer = csv.writer(fh)
        writer.writerow(["p", *columns])
        for k, p in enumerate(grid):
            writer.writerow([f"{p!r}", *("" if np.isnan(c[k]) else f"{c[k]:.10g}" for c in columns.values())])
    job = _record_job("report", inputs, 0, out)
    meta["job_sha256"] = job.digest()
    _write_json(out / "report.json", meta)
    logger.info(f"✅ Report with {len(columns)} curves written to {out}")
    click.echo(str(out / "report.json"))


def main():
    cli()


if __name__ == "__main__":
    main()
