"""Command line front end. Exit codes: 0 ok, 1 runtime/domain error, 2 usage error."""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import archive, corpus as corpus_mod, evaluation
from .detector import fingerprint, load_baselines, path_p_values, peak_matrix, save_baselines
from .device import EmissionConfig, capture_set
from .isa import Catalog, calibration_catalog, default_catalog, flatten_paths, load_program
from .library import build_library, corpus_pairs, full_pairs
from .synth import synthesize_set

EXISTING_FILE = click.Path(exists=True, dir_okay=False, path_type=Path)
EXISTING_DIR = click.Path(exists=True, file_okay=False, path_type=Path)


def domain_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ValueError, LookupError, RuntimeError, OSError) as exc:
            raise click.ClickException(str(exc)) from exc
    return wrapper


def _catalog(name: str) -> Catalog:
    if name == "default":
        return default_catalog()
    if name == "calibration":
        return calibration_catalog()
    return Catalog.load(name)


def _config(path: Path | None, seed: int | None) -> EmissionConfig:
    config = EmissionConfig.load(path) if path else EmissionConfig()
    return config.with_(seed=seed) if seed is not None else config


def _path(program: Path, catalog: Catalog, branches: tuple[str, ...]):
    prog = load_program(program, catalog)
    res = {site: True for site in prog.branch_sites(catalog)}
    for item in branches:
        site, _, how = item.partition("=")
        if how not in ("taken", "not-taken"):
            raise click.BadParameter(f"{item!r}: expected SITE=taken|not-taken", param_hint="--branch")
        res[int(site)] = how == "taken"
    return flatten_paths(prog, res, catalog)[0]


catalog_option = click.option("--catalog", default="default", show_default=True,
                              help="'default', 'calibration' or a catalog CSV path.")
seed_option = click.option("--seed", type=int, default=None, help="Override the seed.")
branch_option = click.option("--branch", multiple=True, metavar="SITE=taken|not-taken",
                             help="Branch resolution by loop-body index (default: all taken).")


@click.group()
def cli():
    """Synthetic EM fingerprinting and code-injection detection."""


@cli.command("default-config")
@click.option("--calibration", is_flag=True, help="Write the length-calibration fixture instead.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@domain_errors
def default_config(calibration, out):
    """Write an EmissionConfig JSON document with all defaults filled in."""
    (EmissionConfig.calibration() if calibration else EmissionConfig()).save(out)


@cli.command("build-library")
@catalog_option
@click.option("--pairs", "pair_scope", type=click.Choice(["corpus", "full"]), default="corpus", show_default=True)
@click.option("--program", "programs", type=EXISTING_FILE, multiple=True,
              help="Programs defining the corpus pairs (default: the four reference programs).")
@click.option("--config", type=EXISTING_FILE, required=True)
@click.option("--examples", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@seed_option
@domain_errors
def build_library_cmd(catalog, pair_scope, programs, config, examples, out, seed):
    """Capture nop-isolated pair programs and store the cut-out blocks."""
    cat = _catalog(catalog)
    cfg = _config(config, seed)
    if pair_scope == "full":
        pairs = full_pairs(cat)
    elif programs:
        pairs = corpus_pairs(p for prog in programs for p in flatten_paths(load_program(prog, cat), catalog=cat))
    else:
        pairs = corpus_pairs(corpus_mod.reference_paths(cat).values())
    lib = build_library(pairs, cfg, examples, cat)
    archive.save_library(lib, out)
    click.echo(f"{len(lib)} pair(s) x {examples} block(s) -> {out}")


@cli.command()
@click.option("--program", type=EXISTING_FILE, required=True)
@click.option("--library", type=EXISTING_DIR, required=True)
@click.option("--n", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@catalog_option
@branch_option
@click.option("--csv", "csv_out", type=click.Path(dir_okay=False, path_type=Path), help="Also write CSV rows.")
@domain_errors
def synth(program, library, n, seed, out, catalog, branch, csv_out):
    """Synthesize traces for a program path from a block library."""
    cat = _catalog(catalog)
    path = _path(program, cat, branch)
    traces = synthesize_set(path, archive.load_library(library), n, seed)
    archive.save_traces(traces, out, name=program.stem, meta={"path_cycles": path.cycles, "seed": seed})
    if csv_out:
        archive.write_traces_csv(traces, csv_out)
    click.echo(f"{n} synthetic trace(s) of {len(traces[0])} samples -> {out}")


@cli.command()
@click.option("--program", type=EXISTING_FILE, required=True)
@click.option("--config", type=EXISTING_FILE, required=True)
@click.option("--n", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@catalog_option
@branch_option
@seed_option
@click.option("--csv", "csv_out", type=click.Path(dir_okay=False, path_type=Path), help="Also write CSV rows.")
@domain_errors
def capture(program, config, n, out, catalog, branch, seed, csv_out):
    """Simulated acquisition of a program path."""
    cat = _catalog(catalog)
    cfg = _config(config, seed)
    path = _path(program, cat, branch)
    traces = capture_set(path, cfg, n)
    archive.save_traces(traces, out, name=program.stem,
                        meta={"path_cycles": path.cycles, "config_digest": cfg.digest()})
    if csv_out:
        archive.write_traces_csv(traces, csv_out)
    click.echo(f"{n} trace(s) of {len(traces[0])} samples -> {out}")


def _benign_peaks(dirs) -> list[np.ndarray]:
    out = []
    for d in dirs:
        traces, manifest = archive.load_traces(d)
        cycles = manifest.get("meta", {}).get("path_cycles")
        if not cycles:
            raise ValueError(f"{d}: manifest lacks meta.path_cycles")
        out.append(peak_matrix(traces, int(cycles)))
    return out


@cli.command("fingerprint")
@click.option("--benign", type=EXISTING_DIR, multiple=True, required=True, help="One trace set per path.")
@click.option("--kappa", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@seed_option
@domain_errors
def fingerprint_cmd(benign, kappa, out, seed):
    """Compute per-path strangeness baselines."""
    save_baselines(fingerprint(_benign_peaks(benign), kappa), out)
    click.echo(f"{len(benign)} baseline(s) -> {out}")


@cli.command()
@click.option("--baselines", type=EXISTING_FILE, required=True)
@click.option("--benign", type=EXISTING_DIR, multiple=True, required=True)
@click.option("--queries", type=EXISTING_DIR, required=True)
@click.option("--tau", type=click.FloatRange(0, 1), required=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--literal", is_flag=True, help="Use the uncorrected p-value orientation.")
@seed_option
@domain_errors
def detect(baselines, benign, queries, tau, out, literal, seed):
    """Score query traces and vote across paths; one CSV row per trace."""
    sets = _benign_peaks(benign)
    bases = load_baselines(baselines, sets)
    qtraces, _ = archive.load_traces(queries)
    cols = [path_p_values(peak_matrix(qtraces, X.shape[1]), [b], literal=literal)[:, 0]
            for b, X in zip(bases, sets)]
    pv = np.column_stack(cols)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trace_id"] + [f"p_path{b.path_id}" for b in bases] + ["status"])
        for i, row in enumerate(pv):
            status = "normal" if (row > tau).any() else "anomalous"
            w.writerow([i] + [repr(float(p)) for p in row] + [status])
    n_anom = int((~(pv > tau).any(axis=1)).sum())
    click.echo(f"{len(pv)} trace(s), {n_anom} anomalous -> {out}")


@cli.command("make-corpus")
@click.option("--config", type=EXISTING_FILE, default=None)
@catalog_option
@click.option("--n", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--library-examples", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@domain_errors
def make_corpus(config, catalog, n, library_examples, out, seed):
    """Simulate the reference programs and synthesize B into one corpus directory."""
    cfg = _config(config, None)
    c = corpus_mod.make_corpus(cfg, n, library_examples, _catalog(catalog), seed)
    corpus_mod.save_corpus(c, out)
    click.echo(f"corpus with sets {sorted(c.traces)} -> {out}")


@cli.command()
@click.option("--corpus", "corpus_dir", type=EXISTING_DIR, required=True)
@click.option("--experiment", type=click.Choice(["real", "synthetic"]), required=True)
@click.option("--case", type=click.Choice(evaluation.CASES), required=True)
@click.option("--kappa", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--roc-csv", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--folds", type=click.IntRange(min=2), default=10, show_default=True)
@click.option("--test-per-class", type=click.IntRange(min=1), default=50, show_default=True,
              help="Benign test traces per class and fold.")
@click.option("--test-anomalous", type=click.IntRange(min=1), default=100, show_default=True,
              help="Anomalous test traces per fold.")
@domain_errors
def evaluate(corpus_dir, experiment, case, kappa, seed, out, roc_csv, folds, test_per_class, test_anomalous):
    """Cross-validated detection experiment (10 folds by default)."""
    c = corpus_mod.load_corpus(corpus_dir)
    report = evaluation.run_experiment(c, f"{experiment}_trained", case, kappa=kappa, seed=seed, folds=folds,
                                       test_per_class=test_per_class, test_anomalous=test_anomalous)
    out.write_text(report.to_json() + "\n")
    if roc_csv:
        report.write_roc_csv(roc_csv)
    click.echo(json.dumps(report.averages))


@cli.command()
@click.option("--synthetic", type=EXISTING_DIR, required=True)
@click.option("--real", type=EXISTING_DIR, multiple=True, required=True)
@click.option("--neighbors", type=click.IntRange(min=1), default=25, show_default=True)
@click.option("--cycles", type=click.IntRange(min=1), default=None,
              help="Benign path length in cycles (default: from the synthetic set manifest).")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--summary", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Box-plot statistics as JSON.")
@seed_option
@domain_errors
def similarity(synthetic, real, neighbors, cycles, out, summary, seed):
    """Mean NED from each synthetic trace to its nearest real traces, per real set."""
    straces, manifest = archive.load_traces(synthetic)
    cycles = cycles or manifest.get("meta", {}).get("path_cycles")
    if not cycles:
        raise click.UsageError("--cycles is required when the synthetic manifest lacks path_cycles")
    syn = peak_matrix(straces, int(cycles))
    sets = {d.name: peak_matrix(archive.load_traces(d)[0], int(cycles)) for d in real}
    study = evaluation.similarity_study(syn, sets, neighbors)
    evaluation.write_similarity_csv(study, out)
    stats = {name: {k: v for k, v in res.items() if k != "scores"} for name, res in study.items()}
    if summary:
        Path(summary).write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
    for name, s in stats.items():
        click.echo(f"{name}: mean={s['mean']:.4f} median={s['median']:.4f}")


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="emsynth", standalone_mode=False)
    except click.exceptions.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
