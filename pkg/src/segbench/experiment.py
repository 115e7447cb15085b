"""Run orchestration: split, optional starvation, train, evaluate, persist.

Each run lives in ``<out>/runs/<hash>/``::

    config.yaml   split.json   ladder.json   curve.csv   frames.csv
    summary.json  decoder.ckpt masks/        run.log

``run.log`` is the only file carrying timestamps or wall-clock times, so every
other byte is a function of (manifest, config, fraction).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .config import ExperimentConfig, dump_config, load_config
from .data import BinaryMask, DatasetManifest, save_mask
from .efficiency import EfficiencyRecord, alc, retention_table, table_to_csv
from .metrics import METRIC_NAMES, SummaryMetrics, aggregate, metrics_from_masks
from .model.checkpoint import load_decoder, save_decoder
from .model.training import (
    LearningCurve,
    build_model,
    decode_probs,
    encode_all,
    frames_for_patients,
    train,
)
from .splits import Split, starve, stratified_split

log = logging.getLogger(__name__)


def method_label(config: ExperimentConfig) -> str:
    """``<method>/<backbone scale>``; the part before the slash names the scaling family."""
    return f"{config.method}/{config.backbone_scale}"


def family_of(label: str) -> str:
    return label.split("/", 1)[0]


def manifest_fingerprint(manifest: DatasetManifest) -> str:
    h = hashlib.sha256()
    for f in manifest.frames:
        h.update("\t".join((f.patient_id, f.frame_id, f.image_path.name,
                            f.mask_path.name if f.mask_path else "-", f.pathology)).encode())
        h.update(b"\n")
    return h.hexdigest()[:16]


def run_hash(config: ExperimentConfig, manifest: DatasetManifest, fraction: float) -> str:
    blob = json.dumps({"config": config.to_dict(), "manifest": manifest_fingerprint(manifest),
                       "fraction": fraction}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunResult:
    config_hash: str
    config: ExperimentConfig
    fraction: float
    split: Split
    train_patients: frozenset
    frame_ids: list
    frame_metrics: list
    summary: SummaryMetrics
    curve: LearningCurve
    param_count: int
    run_dir: Optional[Path] = None
    wall_clock: float = field(default=0.0, compare=False)

    def efficiency_record(self) -> EfficiencyRecord:
        return EfficiencyRecord(method_label(self.config), self.param_count, self.config.resolution,
                                self.fraction, self.summary)

    def alc(self, key: str = "val_dice") -> Optional[float]:
        values = self.curve.values(key)
        ok = len(values) >= 2 and all(v is not None for v in values)
        return alc(values) if ok else None


def summary_to_json(summary: SummaryMetrics) -> str:
    return json.dumps(summary.as_dict(), indent=1, sort_keys=True) + "\n"


def frames_to_csv(ids, metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("patient_id", "frame_id", *METRIC_NAMES))
    for (pid, fid), m in zip(ids, metrics):
        w.writerow((pid, fid, *("" if getattr(m, k) is None else repr(getattr(m, k)) for k in METRIC_NAMES)))
    return buf.getvalue()


def evaluate_model(model, test_set, tau: float):
    probs = decode_probs(model, encode_all(model, test_set.images), test_set.masks.shape[-2:])
    preds = [p >= tau for p in probs]
    return preds, [metrics_from_masks(p, m > 0.5) for p, m in zip(preds, test_set.masks)]


def _persist_eval(run_dir: Path, ids, preds, metrics) -> SummaryMetrics:
    summary = aggregate(metrics)
    masks_dir = run_dir / "masks"
    masks_dir.mkdir(exist_ok=True)
    for (pid, fid), pred in zip(ids, preds):
        save_mask(masks_dir / f"{pid}_{fid}.pgm", BinaryMask(pred))
    (run_dir / "frames.csv").write_text(frames_to_csv(ids, metrics))
    (run_dir / "summary.json").write_text(summary_to_json(summary))
    return summary


def run_experiment(config: ExperimentConfig, manifest: DatasetManifest, out_dir=None,
                   fraction: float = 1.0, split: Optional[Split] = None) -> RunResult:
    t0 = time.perf_counter()
    split = split or stratified_split(manifest, config.split_ratios, config.seed)
    ladder = None
    train_patients = split.train
    if fraction != 1.0:
        fractions = sorted(set(config.starvation_fractions) | {1.0, fraction}, reverse=True)
        ladder = starve(split.train, fractions, config.seed)
        train_patients = ladder.subset(fraction)
    res = config.resolution
    train_set = frames_for_patients(manifest, train_patients, res)
    val_set = frames_for_patients(manifest, split.val, res)
    test_set = frames_for_patients(manifest, split.test, res)
    model = build_model(config)
    trained = train(config, train_set, val_set, model)
    preds, metrics = evaluate_model(trained.model, test_set, config.threshold)
    chash = run_hash(config, manifest, fraction)

    run_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / "runs" / chash
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.yaml").write_text(dump_config(config))
        (run_dir / "split.json").write_text(split.to_json() + "\n")
        if ladder is not None:
            (run_dir / "ladder.json").write_text(ladder.to_json() + "\n")
        (run_dir / "curve.csv").write_text(trained.curve.to_csv())
        (run_dir / "meta.json").write_text(json.dumps({
            "fraction": fraction,
            "method": method_label(config),
            "param_count": model.param_counts()["total"],
            "resolution": config.resolution,
            "train_patients": sorted(train_patients),
            "n_frames": {"train": len(train_set), "val": len(val_set), "test": len(test_set)},
            "n_patients": {"train": len(train_patients), "val": len(split.val), "test": len(split.test)},
        }, indent=1, sort_keys=True) + "\n")
        save_decoder(run_dir / "decoder.ckpt", trained.model)
        summary = _persist_eval(run_dir, test_set.ids, preds, metrics)
    else:
        summary = aggregate(metrics)
    elapsed = time.perf_counter() - t0
    if run_dir is not None:
        with open(run_dir / "run.log", "a") as fh:
            fh.write(f"{datetime.now(timezone.utc).isoformat()} fraction={fraction} wall_clock_s={elapsed:.3f}\n")
    return RunResult(chash, config, fraction, split, frozenset(train_patients), test_set.ids, metrics,
                     summary, trained.curve, model.param_counts()["total"], run_dir, elapsed)


def evaluate_run(run_dir, manifest: DatasetManifest, out_dir=None) -> SummaryMetrics:
    """Re-evaluate a finished run's checkpoint on its test patients.

    Outputs go to ``out_dir`` (default: the run directory itself).
    """
    run_dir = Path(run_dir)
    config = load_config(run_dir / "config.yaml")
    split = Split.from_json((run_dir / "split.json").read_text())
    model = build_model(config)
    load_decoder(run_dir / "decoder.ckpt", model)
    model.decoder.eval()
    test_set = frames_for_patients(manifest, split.test, config.resolution)
    preds, metrics = evaluate_model(model, test_set, config.threshold)
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    return _persist_eval(out, test_set.ids, preds, metrics)


def run_starvation_grid(config: ExperimentConfig, manifest: DatasetManifest, out_dir=None) -> list[RunResult]:
    """One run per starvation fraction; all runs share one split and thus one test set."""
    split = stratified_split(manifest, config.split_ratios, config.seed)
    results = [run_experiment(config, manifest, out_dir, fraction=f, split=split)
               for f in config.starvation_fractions]
    if out_dir is not None:
        write_grid_outputs(Path(out_dir), results)
    return results


def write_grid_outputs(out_dir: Path, results: list[RunResult]) -> None:
    records = [r.efficiency_record() for r in results]
    payload = [{**rec.to_dict(), "alc": r.alc(), "run": r.config_hash} for rec, r in zip(records, results)]
    payload.sort(key=lambda d: -d["fraction"])
    (out_dir / "records.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    fractions = {r.fraction for r in results}
    if 0.25 in fractions and 1.0 in fractions:
        table = retention_table(records)
        cols = ["method", "resolution", *METRIC_NAMES]
        (out_dir / "ri_table.csv").write_text(table_to_csv(table, cols))
        (out_dir / "ri_table.json").write_text(json.dumps(table, indent=1, sort_keys=True) + "\n")


def collect_runs(root) -> tuple[list[EfficiencyRecord], list[dict]]:
    """Scan ``<root>/runs/*`` for finished runs.

    Returns the efficiency records and one entry per run with method, family,
    param_count, resolution, fraction, alc and run hash, ordered by run hash.
    """
    records, entries = [], []
    for run_dir in sorted(Path(root).glob("runs/*")):
        meta_p, summ_p = run_dir / "meta.json", run_dir / "summary.json"
        if not (meta_p.is_file() and summ_p.is_file()):
            continue
        meta = json.loads(meta_p.read_text())
        summary = SummaryMetrics.from_dict(json.loads(summ_p.read_text()))
        rec = EfficiencyRecord(meta["method"], int(meta["param_count"]), int(meta["resolution"]),
                               float(meta["fraction"]), summary)
        curve = LearningCurve.from_csv((run_dir / "curve.csv").read_text())
        values = curve.values("val_dice")
        ok = len(values) >= 2 and all(v is not None for v in values)
        records.append(rec)
        entries.append({**{k: v for k, v in rec.to_dict().items() if k != "metrics"},
                        "family": family_of(rec.method), "alc": alc(values) if ok else None,
                        "run": run_dir.name})
    return records, entries
