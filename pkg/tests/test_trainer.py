import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from conftest import small_model
from vocoder_ood import SyntheticConfig, synthesize
from vocoder_ood.datastore import FeatureDataset
from vocoder_ood.losses import LossWeights
from vocoder_ood.trainer import (
    CheckpointError, ThresholdSet, TrainConfig, TrainingDiverged, calibrate_thresholds, fit, load_checkpoint,
    matched_mse, save_checkpoint, with_ablation,
)

FAST = TrainConfig(epochs=2, batch_size=8, seed=0)


@pytest.fixture(scope="module")
def two_class():
    cfg = SyntheticConfig(n_classes=2, dim=8, frames=6, seed=11, split_counts=(20, 6, 6))
    return synthesize(cfg)


def test_training_progress(two_class):
    model = small_model(two_class)
    _, rep = fit(model, two_class.split("train"), replace(FAST, epochs=5))
    assert rep.epochs[-1]["train"]["rec"] < rep.epochs[0]["train"]["rec"]
    assert len(rep.epochs) == 5


def test_training_bit_identical(two_class):
    states = []
    for _ in range(2):
        model, _ = fit(small_model(two_class), two_class.split("train"), FAST)
        states.append(model.state_dict())
    for k in states[0]:
        assert torch.equal(states[0][k], states[1][k])


def test_single_step_bookkeeping(two_class, tmp_path):
    train = two_class.split("train")
    _, rep = fit(small_model(two_class), train, TrainConfig(epochs=1, batch_size=len(train)),
                 log_path=tmp_path / "log.jsonl")
    assert rep.steps == 1
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert list(rec) == ["epoch", "step", "rec", "con", "cls", "total"]


def test_fit_rejects_ood_and_empty(small_synthetic):
    model = small_model(small_synthetic)
    with pytest.raises(ValueError, match="in-distribution"):
        fit(model, small_synthetic.split("test"), FAST)
    with pytest.raises(ValueError, match="empty"):
        fit(model, small_synthetic.take([]), FAST)


def test_non_finite_loss_aborts(two_class):
    model = small_model(two_class)
    bad = two_class.split("train")
    bad.stacks[0] = np.full_like(bad.stacks[0], np.nan)
    with pytest.raises(TrainingDiverged) as info:
        fit(model, bad, replace(FAST, batch_size=100))
    assert info.value.epoch == 1 and info.value.snapshot


def test_early_stop(two_class):
    cfg = replace(FAST, epochs=40, patience=1, learning_rate=0.5)
    _, rep = fit(small_model(two_class), two_class.split("train"), cfg, dev=two_class.split("dev"))
    assert rep.early_stopped_at is not None
    assert len(rep.epochs) == rep.early_stopped_at < 40


def test_routing_only_present_classes_move():
    ds = synthesize(SyntheticConfig(n_classes=3, dim=8, frames=6, seed=2, split_counts=(8, 0, 0)))
    train = ds.split("train")
    only01 = train.take([i for i, lab in enumerate(train.labels) if lab != 2])
    model = small_model(ds)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    fit(model, only01, replace(FAST, weights=LossWeights(alpha=0.0)))
    after = model.state_dict()
    moved = lambda prefix: any(not torch.equal(before[k], after[k]) for k in before if k.startswith(prefix))  # noqa: E731
    assert moved("decoders.0.") and moved("decoders.1.")
    assert not moved("decoders.2.")


def test_calibrate_matches_recomputation(small_synthetic):
    train = small_synthetic.split("train")
    model = small_model(small_synthetic, dtype=torch.float64)
    tau = calibrate_thresholds(model, train)
    model.eval()
    with torch.no_grad():
        for j in range(3):
            errs = []
            for s, lab in zip(train.stacks, train.labels):
                if lab == j:
                    x = torch.as_tensor(s[0])
                    xh = model.decode(j, model.encode(x))
                    errs.append(float(((x - xh) ** 2).mean()))
            assert tau.tau[j] == pytest.approx(np.mean(errs), rel=1e-9)


def test_calibrate_slack_exactly_linear(small_synthetic):
    train = small_synthetic.split("train")
    model = small_model(small_synthetic)
    base = calibrate_thresholds(model, train)
    for s in (1.5, 2.0, 0.0):
        assert calibrate_thresholds(model, train, slack=s).tau == tuple(s * t for t in base.tau)
        assert base.scaled(s).tau == tuple(s * t for t in base.tau)


def test_calibrate_arithmetic_and_zero(monkeypatch, small_synthetic):
    import vocoder_ood.trainer as tr

    ds = FeatureDataset([np.zeros((1, 2, 8), np.float32)] * 4, [0, 0, 1, 1], ["train"] * 4, list("abcd"), 2)
    model = small_model(small_synthetic)
    model.config = replace(model.config, n_decoders=2)
    monkeypatch.setattr(tr, "matched_mse", lambda m, d: np.array([0.2, 0.4, 0.0, 0.0]))
    assert tr.calibrate_thresholds(model, ds).tau == pytest.approx((0.3, 0.0))


def test_calibrate_missing_class(small_synthetic):
    train = small_synthetic.split("train")
    only0 = train.take([i for i, lab in enumerate(train.labels) if lab == 0])
    with pytest.raises(ValueError, match="class 1 has no samples"):
        calibrate_thresholds(small_model(small_synthetic), only0)


def test_running_threshold_source(two_class):
    cfg = replace(FAST, threshold_source="last_epoch_running")
    _, rep = fit(small_model(two_class), two_class.split("train"), cfg)
    assert len(rep.thresholds) == 2 and all(t > 0 for t in rep.thresholds.tau)


def test_fit_thresholds_match_calibration(two_class):
    model, rep = fit(small_model(two_class), two_class.split("train"), replace(FAST, slack=2.0))
    base = calibrate_thresholds(model, two_class.split("train"))
    assert rep.thresholds.tau == base.scaled(2.0).tau


def test_checkpoint_roundtrip(two_class, tmp_path):
    model, rep = fit(small_model(two_class), two_class.split("train"), FAST)
    save_checkpoint(model, rep.thresholds, tmp_path / "a.ckpt")
    loaded, tau = load_checkpoint(tmp_path / "a.ckpt")
    assert tau == rep.thresholds
    probe = torch.as_tensor(two_class.stacks[0][0])
    with torch.no_grad():
        assert torch.equal(model.reconstruct_all(probe)[2], loaded.reconstruct_all(probe)[2])
    save_checkpoint(loaded, tau, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_errors(tmp_path, two_class):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" * 10)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)
    model = small_model(two_class)
    save_checkpoint(model, None, tmp_path / "none.ckpt")
    _, tau = load_checkpoint(tmp_path / "none.ckpt")
    assert tau is None

    import zipfile
    with zipfile.ZipFile(tmp_path / "v2.ckpt", "w") as zf:
        zf.writestr("format.json", json.dumps({"magic": "VOCODER-OOD-CKPT", "version": 2}))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v2.ckpt")


def test_ablation_switches():
    base = TrainConfig()
    assert with_ablation(base, ["no-contrastive"]).weights == LossWeights(alpha=0.0, beta=1.0)
    both = with_ablation(base, ["no-contrastive", "no-classifier"]).weights
    assert (both.alpha, both.beta) == (0.0, 0.0)
    with pytest.raises(ValueError):
        with_ablation(base, ["no-decoder"])


def test_threshold_set_validation():
    with pytest.raises(ValueError):
        ThresholdSet((0.1, -1.0))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
