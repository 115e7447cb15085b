import math

import numpy as np
import pytest
import torch

from segbench.config import ExperimentConfig
from segbench.errors import DivergenceError, EmptyInput, FormatError
from segbench.experiment import collect_runs, evaluate_run, run_experiment, run_starvation_grid
from segbench.model.checkpoint import dumps, load_decoder, loads, save_decoder
from segbench.model.training import FrameSet, LearningCurve, build_model, cosine_lr, frames_for_patients, train
from segbench.splits import stratified_split


def small_sets(manifest, n_train=4, n_val=2):
    split = stratified_split(manifest, seed=0)
    tr = frames_for_patients(manifest, split.train, 64)
    va = frames_for_patients(manifest, split.val, 64)
    return tr.subset(range(n_train)), va.subset(range(n_val))


def test_one_epoch_smoke(tiny_dataset):
    _, manifest = tiny_dataset
    tr, va = small_sets(manifest)
    res = train(ExperimentConfig.toy(epochs=1, batch_size=2), tr, va)
    assert len(res.curve) == 1
    row = res.curve.rows[0]
    assert math.isfinite(row["train_loss"]) and 0 <= row["val_dice"] <= 1


def test_training_is_deterministic_and_encoder_stays_frozen(tiny_dataset):
    _, manifest = tiny_dataset
    tr, va = small_sets(manifest, 6, 2)
    cfg = ExperimentConfig.toy(epochs=2, batch_size=4, seed=3)
    a, b = train(cfg, tr, va), train(cfg, tr, va)
    for pa, pb in zip(a.model.decoder.parameters(), b.model.decoder.parameters()):
        assert torch.equal(pa, pb)
    assert a.curve.rows == b.curve.rows
    fresh = build_model(cfg)
    for pa, pf in zip(a.model.encoder.parameters(), fresh.encoder.parameters()):
        assert torch.equal(pa, pf)
    moved = any(not torch.equal(pa, pf) for pa, pf in zip(a.model.decoder.parameters(), fresh.decoder.parameters()))
    assert moved
    assert not torch.are_deterministic_algorithms_enabled()


def test_training_errors(tiny_dataset):
    _, manifest = tiny_dataset
    tr, va = small_sets(manifest)
    with pytest.raises(EmptyInput):
        train(ExperimentConfig.toy(epochs=1), tr.subset([]), va)
    bad = FrameSet(np.full_like(tr.images, np.nan), tr.masks, tr.ids)
    with pytest.raises(DivergenceError):
        train(ExperimentConfig.toy(epochs=1), bad, va)


def test_cosine_schedule():
    assert cosine_lr(1e-3, 0, 10) == 1e-3
    assert cosine_lr(1e-3, 5, 10) == pytest.approx(5e-4)
    assert cosine_lr(1e-3, 10, 10) == pytest.approx(0.0, abs=1e-18)


def test_curve_csv_round_trip():
    c = LearningCurve([{"epoch": 1, "train_loss": 0.5, "lr": 1e-3, "val_dice": 0.1, "val_iou": 0.05,
                        "val_sensitivity": None, "val_hd95": 3.25, "val_msd": 1.0 / 3}])
    assert LearningCurve.from_csv(c.to_csv()).rows == c.rows


def test_checkpoint_round_trip(tmp_path):
    cfg = ExperimentConfig.toy()
    model = build_model(cfg)
    with torch.no_grad():
        for p in model.decoder.parameters():
            p.add_(0.5)
    save_decoder(tmp_path / "d.ckpt", model)
    other = build_model(cfg)
    load_decoder(tmp_path / "d.ckpt", other)
    for pa, pb in zip(model.decoder.parameters(), other.decoder.parameters()):
        assert torch.equal(pa, pb)
    blob = (tmp_path / "d.ckpt").read_bytes()
    assert dumps(loads(blob)) == blob
    for broken in (b"XXXX" + blob[4:], blob[:-3], blob + b"\0", blob[:4] + b"\x02" + blob[5:]):
        with pytest.raises(FormatError):
            loads(broken)


def test_run_experiment_and_grid(tiny_dataset, tmp_path):
    _, manifest = tiny_dataset
    cfg = ExperimentConfig.toy(epochs=1, batch_size=8)
    res = run_experiment(cfg, manifest, tmp_path)
    assert res.summary.n_frames > 0 and len(res.curve) == 1
    run_dir = res.run_dir
    assert run_dir.name == res.config_hash
    for name in ("config.yaml", "split.json", "curve.csv", "summary.json", "frames.csv", "decoder.ckpt", "meta.json"):
        assert (run_dir / name).is_file()
    assert len(list((run_dir / "masks").glob("*.pgm"))) == res.summary.n_frames
    summary_bytes = (run_dir / "summary.json").read_bytes()

    again = run_experiment(cfg, manifest, tmp_path / "again")
    assert again.config_hash == res.config_hash
    assert (again.run_dir / "summary.json").read_bytes() == summary_bytes
    assert evaluate_run(run_dir, manifest, tmp_path / "re") == res.summary
    assert (tmp_path / "re" / "summary.json").read_bytes() == summary_bytes

    grid = run_starvation_grid(cfg, manifest, tmp_path / "grid")
    assert [r.fraction for r in grid] == [1.0, 0.75, 0.5, 0.25]
    assert len({frozenset(r.frame_ids) for r in grid}) == 1
    assert len({r.split.test for r in grid}) == 1
    sizes = [len(r.train_patients) for r in grid]
    assert sizes == sorted(sizes, reverse=True) and sizes[-1] < sizes[0]
    assert (tmp_path / "grid" / "ri_table.csv").is_file()
    records, entries = collect_runs(tmp_path / "grid")
    assert sorted(r.fraction for r in records) == [0.25, 0.5, 0.75, 1.0]
    assert all(e["alc"] is None for e in entries)  # one epoch gives no ALC
