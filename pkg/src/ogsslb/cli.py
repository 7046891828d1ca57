"""Command-line entry point: simulate, fit, evaluate, replicate-study, replay.

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 I/O error, 4 input validation error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    fit_config_from,
    format_config,
    load_config,
    parse_config_text,
    sections_from,
    simulation_config_from,
    study_config_from,
)
from .em import run_sslb
from .evaluation import consensus_score, k_hat_table, run_study_rows, summarize
from .io import (
    atomic_write_text,
    dump_json,
    load_json,
    read_biclusters,
    read_expression,
    read_outcomes,
    write_biclusters,
    write_expression,
    write_matrix,
    write_outcomes,
    write_rows,
)
from .model import ValidationError
from .simulation import simulate_dataset

log = logging.getLogger("ogsslb")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO, EXIT_VALIDATION = 0, 1, 2, 3, 4

MANIFEST = "manifest.json"
RUN_INFO = "run_info.json"


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _sections(path):
    return load_config(path) if path else {}


def _write_manifest(out, command, config_text, seed, artifacts, inputs=None, extra=None, started=None):
    """Deterministic manifest plus a separate file for wall-clock details."""
    manifest = {
        "command": command,
        "config": config_text,
        "seed": seed,
        "inputs": inputs or {},
        "artifacts": sorted(artifacts),
        "version": __version__,
    }
    if extra:
        manifest.update(extra)
    dump_json(
        {"started_at": started, "finished_at": _now(), "python": platform.python_version(), "numpy": np.__version__},
        out / RUN_INFO,
    )
    dump_json(manifest, out / MANIFEST)


# --- commands ------------------------------------------------------------------


def cmd_simulate(config_path, out, seed=None):
    started = _now()
    sections = _sections(config_path)
    cfg = simulation_config_from(sections, seed=seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ds = simulate_dataset(cfg)
    write_expression(out / "x.csv", ds.x)
    write_outcomes(out / "y.csv", ds.y, ds.x.sample_ids)
    write_biclusters(out / "truth.json", ds.truth)
    text = format_config(sections_from(simulation=cfg))
    _write_manifest(out, "simulate", text, cfg.seed, ["x.csv", "y.csv", "truth.json"], started=started)
    log.info("simulated %d x %d with %d biclusters into %s", cfg.N, cfg.G, cfg.K, out)
    return EXIT_OK


def cmd_fit(x_path, y_path, config_path, out, seed=None, time_budget=None, trace=False):
    started = _now()
    sections = _sections(config_path)
    cfg = fit_config_from(sections, seed=seed, time_budget_secs=time_budget)
    x = read_expression(x_path)
    ref = sections.get("data", {}).get("reference_class")
    y = read_outcomes(y_path, x.sample_ids, reference_class=ref) if y_path else None
    guided = cfg.outcome_guided and y is not None
    method = "OG-SSLB" if guided else "SSLB"
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    fit = run_sslb(x, y if guided else None, cfg, trace=trace)
    st = fit.state
    labels = [f"b{k}" for k in range(st.K_current)]
    write_biclusters(out / "biclusters.json", fit.biclusters)
    write_matrix(out / "Z.csv", st.Z, x.gene_ids, labels, corner="gene_id")
    write_matrix(out / "gamma_tilde.csv", st.gamma_tilde, x.sample_ids, labels)
    artifacts = ["biclusters.json", "Z.csv", "gamma_tilde.csv"]
    if trace:
        cols = ["iteration", "rung", "q_value", "K_current", "max_abs_dZ", "lambda_w"]
        write_rows(out / "trace.tsv", cols, [[repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols] for r in fit.trace])
        artifacts.append("trace.tsv")
    inputs = {"x": str(Path(x_path).resolve()), "x_sha256": _sha256(x_path)}
    if y_path:
        inputs.update({"y": str(Path(y_path).resolve()), "y_sha256": _sha256(y_path)})
    data = {"reference_class": ref} if ref else None
    extra = {
        "method": method,
        "K_hat": fit.biclusters.K_hat,
        "xi": fit.xi,
        "lambda_w": st.lambda_w if guided else None,
        "budget_exhausted": fit.budget_exhausted,
        "trace": bool(trace),
    }
    text = format_config(sections_from(fit=cfg, data=data))
    _write_manifest(out, "fit", text, cfg.seed, artifacts, inputs, extra, started)
    log.info("%s found %d biclusters", method, fit.biclusters.K_hat)
    return EXIT_OK


def cmd_evaluate(found_path, truth_path, stream=None):
    found = read_biclusters(found_path)
    truth = read_biclusters(truth_path)
    result = {
        "consensus_score": consensus_score(found, truth),
        "K_hat": found.K_hat,
        "K_truth": truth.K_hat,
        "normalization": "max(K_hat, K_truth)",
    }
    print(json.dumps(result, sort_keys=True), file=stream or sys.stdout)
    return EXIT_OK


def cmd_replicate_study(config_path, out, seed=None, workers=1, time_budget=None):
    started = _now()
    sections = _sections(config_path)
    if seed is not None:
        sections = {**sections, "simulation": {**sections.get("simulation", {}), "seed": seed}}
    if time_budget is not None:
        sections = {**sections, "fit": {**sections.get("fit", {}), "time_budget_secs": time_budget}}
    cfg = study_config_from(sections)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_study_rows(cfg, workers=workers)
    summaries = summarize(rows)
    write_rows(
        out / "results.tsv",
        ["method", "variant", "seed", "score", "k_hat"],
        [[r["method"], r["variant"], r["seed"], repr(r["score"]), r["k_hat"]] for r in rows],
    )
    write_rows(
        out / "runtimes.tsv",
        ["method", "variant", "seed", "runtime_seconds"],
        [[r["method"], r["variant"], r["seed"], f"{r['runtime_seconds']:.3f}"] for r in rows],
    )
    table = k_hat_table(summaries)
    methods = list(cfg.methods)
    write_rows(
        out / "k_hat_table.tsv",
        ["variant"] + [f"mean_k_hat_{m}" for m in methods],
        [[v] + [repr(table[v][m]) for m in methods] for v in cfg.variants],
    )
    write_rows(
        out / "score_distributions.tsv",
        ["method", "variant", "score"],
        [[r["method"], r["variant"], repr(r["score"])] for r in rows],
    )
    dump_json(
        {
            "summaries": [s.to_dict() for s in summaries],
            "k_hat_table": table,
            "consensus_normalization": "max(K_hat, K_truth)",
            "lambda_w": {f"{r['method']}/{r['variant']}/{r['seed']}": r["lambda_w"] for r in rows if r["lambda_w"] is not None},
            "budget_exhausted": sum(bool(r["budget_exhausted"]) for r in rows),
        },
        out / "summary.json",
    )
    artifacts = ["results.tsv", "k_hat_table.tsv", "score_distributions.tsv", "summary.json", "runtimes.tsv"]
    text = format_config(sections_from(fit=cfg.base, simulation=cfg.dataset, study=cfg))
    _write_manifest(out, "replicate-study", text, cfg.dataset.seed, artifacts, extra={"workers": workers}, started=started)
    for s in summaries:
        log.info("%s/%s mean K_hat %.2f median score %.3f", s.method_label, s.prior_variant, s.mean_k_hat, s.median_score)
    return EXIT_OK


def cmd_replay(manifest_path, out):
    """Rerun the command recorded in a manifest into ``out``."""
    m = load_json(manifest_path)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / ".replay_config.ini"
    atomic_write_text(cfg_path, m["config"])
    try:
        parse_config_text(m["config"], str(manifest_path))
        command = m["command"]
        if command == "simulate":
            return cmd_simulate(cfg_path, out)
        if command == "fit":
            inputs = m["inputs"]
            for key in ("x", "y"):
                if key in inputs and _sha256(inputs[key]) != inputs[f"{key}_sha256"]:
                    raise ValidationError(f"input {inputs[key]} changed since the recorded run")
            return cmd_fit(inputs["x"], inputs.get("y"), cfg_path, out, trace=m.get("trace", False))
        if command == "replicate-study":
            return cmd_replicate_study(cfg_path, out, workers=m.get("workers", 1))
        raise ConfigError(f"{manifest_path}: unknown command {command!r}")
    finally:
        if cfg_path.exists():
            os.unlink(cfg_path)


# --- argument parsing -------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="ogsslb", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset with planted biclusters")
    s.add_argument("--config", help="INI file ([simulation] section)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="override the simulation seed")

    f = sub.add_parser("fit", help="fit SSLB, or OG-SSLB when outcomes are given and outcome_guided is set")
    f.add_argument("--x", required=True, help="expression matrix (csv/tsv, samples in rows)")
    f.add_argument("--y", help="outcome file with columns sample_id,class_label")
    f.add_argument("--config", help="INI file ([fit], [soul], [data] sections)")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--seed", type=int, help="override the algorithm seed")
    f.add_argument("--time-budget-secs", type=float, help="wall-clock cap for the fit")
    f.add_argument("--trace", action="store_true", help="write the per-iteration trace")

    e = sub.add_parser("evaluate", help="consensus score of found biclusters against a truth file")
    e.add_argument("found")
    e.add_argument("truth")

    r = sub.add_parser("replicate-study", help="repeated SSLB / OG-SSLB fits on one simulated dataset")
    r.add_argument("--config", help="INI file ([study], [simulation], [fit], [soul] sections)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seed", type=int, help="override the dataset seed")
    r.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    r.add_argument("--time-budget-secs", type=float, help="wall-clock cap per fit")

    rp = sub.add_parser("replay", help="rerun a command from its manifest")
    rp.add_argument("manifest")
    rp.add_argument("--out", required=True, help="output directory")
    return p


def dispatch(args):
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.seed)
    if args.command == "fit":
        return cmd_fit(args.x, args.y, args.config, args.out, args.seed, args.time_budget_secs, args.trace)
    if args.command == "evaluate":
        return cmd_evaluate(args.found, args.truth)
    if args.command == "replicate-study":
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        return cmd_replicate_study(args.config, args.out, args.seed, args.workers, args.time_budget_secs)
    if args.command == "replay":
        return cmd_replay(args.manifest, args.out)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        code = dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.debug("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
