"""Command-line workflow: ``stgp {simulate,fit,predict,evaluate,compare} CONFIG --out DIR``.

Exit codes: 0 success, 2 validation error, 3 convergence failure (some R-hat
at or above the threshold), 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import kernels as kn
from .config import ConfigError, RunConfig, load_config
from .data import (DataError, Dataset, SimConfig, export_forecast, load_dataset, save_dataset,
                   simulate, train_test_split)
from .diagnostics import format_table, summarize
from .evaluate import (EvalError, ScoreReport, bayesian_pvalue, build_loglik_matrix,
                       compare_models, crps_by_week, loo_estimate, read_report_row, write_report)
from .forecast import forecast_counts
from .gp import CholeskyError, GPError
from .likelihood import LikelihoodError
from .model import ModelError, ModelTarget, make_cells
from .sampler import PosteriorSamples, SamplerError, hmc_run

log = logging.getLogger("stgp")

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE, EXIT_NUMERICAL = 0, 2, 3, 4

VALIDATION_ERRORS = (ConfigError, DataError, ModelError, kn.KernelError, EvalError, GPError,
                     LikelihoodError)
NUMERICAL_ERRORS = (SamplerError, CholeskyError, np.linalg.LinAlgError, FloatingPointError)


class ManifestError(ConfigError):
    pass


# ------------------------------------------------------------------ manifest

def _manifest_path(out: Path) -> Path:
    return out / "manifest.json"


def read_manifest(out: Path) -> dict:
    path = _manifest_path(out)
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def claim_outdir(cfg: RunConfig, out: Path) -> dict:
    """Create ``out`` or confirm it belongs to the same configuration."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = read_manifest(out)
    if manifest and manifest.get("config_hash") != cfg.config_hash():
        raise ManifestError(
            f"{out} holds results of a different configuration; use a fresh --out directory"
        )
    if not manifest:
        manifest = {"config_hash": cfg.config_hash(), "config": cfg.raw, "seed": cfg.seed,
                    "version": __version__, "model": cfg.spec.describe(), "commands": {}}
    return manifest


def write_manifest(out: Path, manifest: dict, command: str, **info):
    info["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    manifest.setdefault("commands", {})[command] = info
    _manifest_path(out).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str),
                                   encoding="utf-8")


# ------------------------------------------------------------------ samples IO

def write_samples(samples: PosteriorSamples, path: Path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration", *samples.names])
        for c in range(samples.n_chains):
            for i in range(samples.n_iter):
                w.writerow([c, i, *(repr(float(v)) for v in samples.draws[c, i])])


def read_samples(path: Path, n_hyper: int) -> PosteriorSamples:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    if header[:2] != ["chain", "iteration"]:
        raise DataError(f"{path}: not a samples file")
    arr = np.array([[float(v) for v in row] for row in rows])
    chains = arr[:, 0].astype(int)
    C = chains.max() + 1
    n = len(rows) // C
    draws = arr[:, 2:].reshape(C, n, -1)
    return PosteriorSamples(header[2:], draws, np.full(C, np.nan), np.full(C, np.nan),
                            n_hyper=n_hyper)


def _write_rows(path: Path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])


# ------------------------------------------------------------------ helpers

def _datasets(cfg: RunConfig):
    paths = cfg.require_data()
    data = load_dataset(paths["counts"], paths["locations"], paths["population"])
    h = cfg.forecast.horizon if cfg.forecast.holdout else 0
    train, test = train_test_split(data, h)
    return data, train, test


def _load_fit(cfg: RunConfig, out: Path, train: Dataset, samples_dir: Path | None):
    src = samples_dir or out
    manifest = read_manifest(src)
    fit = manifest.get("commands", {}).get("fit")
    if not fit:
        raise ManifestError(f"{src}: no fit recorded in manifest.json; run `fit` first")
    if fit.get("data_hash") != train.content_hash():
        raise ManifestError("samples were fitted to different training data")
    if fit.get("model") != cfg.spec.describe():
        raise ManifestError(f"samples belong to model {fit.get('model')!r}")
    if fit.get("holdout_weeks") != (cfg.forecast.horizon if cfg.forecast.holdout else 0):
        raise ManifestError("forecast horizon differs from the one used at fit time")
    return read_samples(src / "samples.csv", len(cfg.spec.hyper_names()))


# ------------------------------------------------------------------ commands

def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    manifest = claim_outdir(cfg, out)
    sim = dict(cfg.simulate)
    truth = sim.pop("truth", {})
    spec = cfg.spec
    names = spec.kernel_names
    unknown = sorted(set(truth) - set(names) - {"phi", "pi"})
    if unknown:
        raise ConfigError(f"[simulate.truth] unknown parameter(s): {', '.join(unknown)}")
    values = kn.constrained_values(spec.kernel)
    for k, name in enumerate(names):
        if name in truth:
            values[k] = float(truth[name])
    true_spec = replace(spec, kernel=spec.kernel_from_values(values), fix_kernel=False)
    pop = (sim.pop("pop_min", 5e4), sim.pop("pop_max", 5e5))
    simcfg = SimConfig(true_spec, pop_range=pop, seed=sim.pop("seed", cfg.seed),
                       phi=truth.get("phi", sim.pop("phi", 0.25)),
                       pi=truth.get("pi", sim.pop("pi", 0.2)), **sim)
    data, f, truth_vals = simulate(simcfg)
    save_dataset(data, out)
    with open(out / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "value"])
        for k, v in truth_vals.items():
            w.writerow([k, repr(float(v))])
    with open(out / "latent.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["location_id", "week", "f"])
        for i, lid in enumerate(data.location_ids):
            for j, week in enumerate(data.weeks):
                w.writerow([lid, int(week), repr(float(f[i, j]))])
    write_manifest(out, manifest, "simulate", data_hash=data.content_hash())
    print(f"simulated {data.n_locations} locations x {data.n_weeks} weeks -> {out}")
    return EXIT_OK


def cmd_fit(cfg: RunConfig, out: Path) -> int:
    manifest = claim_outdir(cfg, out)
    _, train, _ = _datasets(cfg)
    samples = hmc_run(cfg.spec, train, cfg.sampler)
    write_samples(samples, out / "samples.csv")
    _write_rows(out / "sampler_stats.csv", ["chain", "accept_rate", "step_size"],
                [{"chain": c, "accept_rate": float(samples.accept_rate[c]),
                  "step_size": float(samples.step_size[c])} for c in range(samples.n_chains)])
    rows = summarize(samples, samples.hyper_names)
    cols = ["parameter", "median", "lower95", "upper95", "mean", "rhat"]
    _write_rows(out / "summary.csv", cols, rows)
    (out / "summary.txt").write_text(format_table(rows, cols), encoding="utf-8")
    rhat = samples.rhat()
    _write_rows(out / "rhat.csv", ["parameter", "rhat"],
                [{"parameter": n, "rhat": float(r)} for n, r in zip(samples.names, rhat)])
    bad = [n for n, r in zip(samples.names, rhat) if not r < cfg.rhat_threshold]
    write_manifest(out, manifest, "fit", data_hash=train.content_hash(),
                   model=cfg.spec.describe(),
                   holdout_weeks=cfg.forecast.horizon if cfg.forecast.holdout else 0,
                   max_rhat=float(np.max(rhat)), converged=not bad)
    print(format_table(rows, cols), end="")
    if bad:
        print(f"R-hat >= {cfg.rhat_threshold} for {len(bad)} parameter(s): {', '.join(bad[:10])}")
        return EXIT_CONVERGENCE
    print(f"all R-hat < {cfg.rhat_threshold}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig, out: Path, samples_dir: Path | None = None) -> int:
    manifest = claim_outdir(cfg, out)
    _, train, _ = _datasets(cfg)
    samples = _load_fit(cfg, out, train, samples_dir)
    fc = cfg.forecast
    result = forecast_counts(samples, cfg.spec, train, fc.horizon, fc.draws, cfg.seed,
                             fc.perturb, fc.full_cov)
    export_forecast(result, train, "csv", out / "forecast.csv")
    if fc.geojson:
        export_forecast(result, train, "geojson", out / "forecast.geojson")
    with open(out / "forecast_draws.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw", "location_id", "week", "count"])
        for s in range(result.samples.shape[0]):
            for i, lid in enumerate(result.location_ids):
                for j, week in enumerate(result.weeks):
                    w.writerow([s, lid, int(week), int(result.samples[s, i, j])])
    write_manifest(out, manifest, "predict", horizon=fc.horizon, draws=fc.draws)
    print(f"forecast {len(result.location_ids)} locations x {fc.horizon} weeks -> {out}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, out: Path, samples_dir: Path | None = None) -> int:
    manifest = claim_outdir(cfg, out)
    _, train, test = _datasets(cfg)
    if test is None:
        raise EvalError("evaluation needs held-out weeks: set [forecast] horizon > 0, holdout = true")
    samples = _load_fit(cfg, out, train, samples_dir)
    report = score(cfg, samples, train, test)
    write_report(report, out)
    target = ModelTarget(cfg.spec, make_cells(train, cfg.spec))
    llm = build_loglik_matrix(samples, target, min(cfg.evaluate.loo_draws, samples.n_draws))
    loo = loo_estimate(llm)
    X, _, _, mask = train.flat()
    _write_rows(out / "loo_pointwise.csv", ["week", "lon", "lat", "elpd", "pareto_k"],
                [{"week": int(x[0]), "lon": float(x[1]), "lat": float(x[2]),
                  "elpd": float(e), "pareto_k": float(k)}
                 for x, e, k in zip(X[mask], loo.elpd_i, loo.pareto_k)])
    write_manifest(out, manifest, "evaluate", **report.row())
    print((out / "score_report.txt").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def score(cfg: RunConfig, samples, train: Dataset, test: Dataset) -> ScoreReport:
    """looic, Bayesian p-value and per-week CRPS for one fitted model."""
    target = ModelTarget(cfg.spec, make_cells(train, cfg.spec))
    llm = build_loglik_matrix(samples, target, min(cfg.evaluate.loo_draws, samples.n_draws))
    loo = loo_estimate(llm)
    pv = bayesian_pvalue(samples, target, cfg.evaluate.pvalue_draws, cfg.seed)
    fc = cfg.forecast
    result = forecast_counts(samples, cfg.spec, train, test.n_weeks, fc.draws, cfg.seed,
                             fc.perturb, fc.full_cov)
    crps = crps_by_week(result.samples, test.counts, test.weeks, test.mask, cfg.evaluate.crps_split)
    return ScoreReport(cfg.spec.name, train.content_hash(), loo.looic, loo.elpd, loo.pareto_k,
                       crps, pv.p, pv.tukey_obs, pv.tukey_sim)


def cmd_compare(cfg: RunConfig, out: Path, runs=()) -> int:
    manifest = claim_outdir(cfg, out)
    dirs = list(cfg.compare_runs) + [Path(r) for r in runs]
    rows = []
    for d in dirs:
        path = d / "score_report.csv" if d.is_dir() else d
        if not path.exists():
            raise ConfigError(f"{path}: no score report")
        rows.append(read_report_row(path))
    table = compare_models(rows)
    cols = ["model", "looic", "elpd", "crps", "bayes_p", "max_pareto_k"]
    _write_rows(out / "comparison.csv", cols + ["data_hash"], table)
    text = format_table([{**r, "bayes_p (Freeman-Tukey)": r["bayes_p"]} for r in table],
                        [c if c != "bayes_p" else "bayes_p (Freeman-Tukey)" for c in cols])
    (out / "comparison.txt").write_text(text, encoding="utf-8")
    write_manifest(out, manifest, "compare", runs=[str(d) for d in dirs])
    print(text, end="")
    return EXIT_OK


# ------------------------------------------------------------------ entry

def build_parser():
    p = argparse.ArgumentParser(prog="stgp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "fit", "predict", "evaluate", "compare"):
        sp = sub.add_parser(name)
        sp.add_argument("config", type=Path)
        sp.add_argument("--out", type=Path, help="output directory (overrides `out` in the config)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--preset", help="model1 .. model6")
        sp.add_argument("--threads", type=int)
        if name in ("predict", "evaluate"):
            sp.add_argument("--samples", type=Path, help="directory of a previous fit")
        if name == "compare":
            sp.add_argument("--runs", nargs="+", type=Path, default=[],
                            help="evaluation directories (added to [compare] runs)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {"seed": args.seed, "preset": args.preset, "threads": args.threads,
                     "out": str(args.out.resolve()) if args.out else None}
        cfg = load_config(args.config, overrides)
        if cfg.out is None:
            raise ConfigError("no output directory: pass --out or set `out` in the config")
        out = cfg.out
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "fit":
            return cmd_fit(cfg, out)
        if args.command == "predict":
            return cmd_predict(cfg, out, args.samples)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out, args.samples)
        return cmd_compare(cfg, out, args.runs)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
