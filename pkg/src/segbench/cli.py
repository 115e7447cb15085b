"""Command line entry point: ``segbench <verb> --config C --seed S --out DIR``.

Verbs:
    synth    generate a synthetic dataset (config: synthetic-data YAML)
    split    patient-level stratified split of a manifest
    train    split, optionally starve, train and evaluate one run
    eval     re-evaluate a finished run from its checkpoint
    starve   run the full starvation grid on one shared split
    analyze  retention table, scaling fits and ALC over collected runs
    report   comparison table and SVG plots over collected runs

``--seed`` overrides the seed in the config file. Verbs that read results
(``analyze``, ``report``) take the starved fraction from the config's
``starvation_fractions`` (smallest entry) and have no randomness.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, load_config
from .data import load_manifest
from .efficiency import log_slope_fit, retention_table, table_to_csv
from .errors import ConfigError, SegBenchError
from .experiment import (
    collect_runs,
    evaluate_run,
    family_of,
    run_experiment,
    run_starvation_grid,
    summary_to_json,
)
from .metrics import METRIC_NAMES
from .report import report_plots, report_table
from .splits import PARTS, stratified_split
from .synth import SynthConfig, load_synth_config, synth_generate

log = logging.getLogger("segbench")


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig.toy()
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    cfg = load_synth_config(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    manifest = synth_generate(cfg, args.out)
    n_ann = sum(f.annotated for f in manifest.frames)
    print(f"wrote {len(manifest.frames)} frames ({n_ann} annotated) for "
          f"{len(manifest.patients)} patients to {args.out}")
    return 0


def cmd_split(args) -> int:
    cfg = _experiment_config(args)
    manifest = load_manifest(args.manifest)
    split = stratified_split(manifest, cfg.split_ratios, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "split.json").write_text(split.to_json() + "\n")
    counts = {}
    for p in PARTS:
        frames = manifest.frames_for(split.part(p))
        strata = {}
        for pid in split.part(p):
            s = manifest.pathology_of(pid)
            strata[s] = strata.get(s, 0) + 1
        counts[p] = {"patients": len(split.part(p)), "frames": len(frames),
                     "annotated_frames": sum(f.annotated for f in frames), "patients_by_pathology": strata}
    _write_json(out / "split_counts.json", counts)
    for p in PARTS:
        print(f"{p:5s} patients={counts[p]['patients']:4d} frames={counts[p]['frames']:6d}")
    return 0


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    manifest = load_manifest(args.manifest)
    res = run_experiment(cfg, manifest, args.out, fraction=args.fraction)
    print(f"run {res.run_dir}")
    print(summary_to_json(res.summary), end="")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    stored = load_config(run_dir / "config.yaml")
    if args.config and load_config(args.config).with_(seed=stored.seed) != stored:
        raise ConfigError(f"--config does not match the config stored in {run_dir}")
    if args.seed is not None and args.seed != stored.seed:
        raise ConfigError(f"--seed {args.seed} does not match the run's seed {stored.seed}")
    summary = evaluate_run(run_dir, load_manifest(args.manifest), args.out)
    print(summary_to_json(summary), end="")
    return 0


def cmd_starve(args) -> int:
    cfg = _experiment_config(args)
    results = run_starvation_grid(cfg, load_manifest(args.manifest), args.out)
    for r in results:
        print(f"fraction={r.fraction:<5} patients={len(r.train_patients):4d} "
              f"dice={r.summary.dice} run={r.config_hash}")
    return 0


def _collect(args):
    roots = args.runs or [args.out]
    records, entries = [], []
    for root in roots:
        r, e = collect_runs(root)
        records += r
        entries += e
    if not records:
        raise SegBenchError(f"no finished runs under {', '.join(map(str, roots))}")
    return records, entries


def cmd_analyze(args) -> int:
    cfg = _experiment_config(args)
    records, entries = _collect(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    starved = min(cfg.starvation_fractions)
    fractions = {(r.method, r.resolution): set() for r in records}
    for r in records:
        fractions[(r.method, r.resolution)].add(r.fraction)
    complete = [r for r in records if {1.0, starved} <= fractions[(r.method, r.resolution)]]
    if complete:
        table = retention_table(complete, starved=starved)
        (out / "ri_table.csv").write_text(table_to_csv(table, ["method", "resolution", *METRIC_NAMES]))
        _write_json(out / "ri_table.json", table)
        print(table_to_csv(table, ["method", "resolution", *METRIC_NAMES]), end="")

    fits = {}
    groups = {}
    for r in records:
        v = r.metrics.get(args.metric)
        if r.fraction == 1.0 and v is not None:
            groups.setdefault((family_of(r.method), r.resolution), []).append((r.param_count, v))
    for (family, res), pts in sorted(groups.items()):
        if len({p for p, _ in pts}) >= 2:
            fit = log_slope_fit(pts)
            fits[f"{family}@{res}"] = {"metric": args.metric, "slope": fit.slope, "intercept": fit.intercept,
                                       "r_squared": fit.r_squared, "n": fit.n}
    _write_json(out / "fits.json", fits)
    entries = sorted(entries, key=lambda e: (e["method"], e["resolution"], -e["fraction"], e["run"]))
    cols = ["method", "family", "param_count", "resolution", "fraction", "alc", "run"]
    (out / "alc.csv").write_text(table_to_csv(entries, cols))
    return 0


def cmd_report(args) -> int:
    _experiment_config(args)
    records, entries = _collect(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.csv").write_text(report_table(records))
    full = [e for e in entries if e["fraction"] == 1.0]
    written = report_plots(records, out, alc_entries=full, metric=args.metric)
    print(f"wrote table.csv and {', '.join(sorted(p.name for p in written.values()))} to {out}")
    return 0


VERBS = {
    "synth": (cmd_synth, "generate a synthetic dataset"),
    "split": (cmd_split, "patient-level stratified split"),
    "train": (cmd_train, "train and evaluate one run"),
    "eval": (cmd_eval, "re-evaluate a finished run"),
    "starve": (cmd_starve, "run the starvation grid"),
    "analyze": (cmd_analyze, "retention table, scaling fits and ALC"),
    "report": (cmd_report, "comparison table and SVG plots"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segbench", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for name, (fn, help_) in VERBS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="YAML config (schema_version: 1)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.set_defaults(fn=fn)
        if name in ("split", "train", "eval", "starve"):
            p.add_argument("--manifest", type=Path, required=True, help="TSV or JSON frame manifest")
        if name == "train":
            p.add_argument("--fraction", type=float, default=1.0, help="starvation fraction of training patients")
        if name == "eval":
            p.add_argument("--run", type=Path, required=True, help="run directory (runs/<hash>)")
        if name in ("analyze", "report"):
            p.add_argument("--runs", type=Path, nargs="*", help="result roots holding runs/ (default: --out)")
            p.add_argument("--metric", default="dice", choices=METRIC_NAMES)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (SegBenchError, ValueError, KeyError) as e:
        print(f"segbench {args.verb}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
