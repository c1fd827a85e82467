import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_model_cfg
from projscan.errors import ConfigError, ParameterError, TrainingDivergedError
from projscan.model import build_model
from projscan.training import (
    AugmentParams,
    Normalizer,
    Regressor,
    TrainingConfig,
    Transform,
    augment_image,
    augment_stack,
    build_and_train,
    build_augmented_dataset,
    epoch_permutation,
    evaluate,
    improvement_epochs,
    load_config,
    load_projection_dir,
    parse_config,
    read_labels,
    regression_metrics,
    sample_transform,
    split_dataset,
    split_of,
    train,
    write_labels,
)
from projscan.projection import save_projection_set, build_projection_set
from projscan.volume_io import Volume3D


def _digest(ds):
    return hashlib.sha256(b"".join(np.ascontiguousarray(a).tobytes()
                                   for _, a in sorted(ds.planes.items()))).hexdigest()


# metrics ---------------------------------------------------------------------

def test_improvement_epochs_stub():
    assert improvement_epochs([10, 9, 11, 8]) == [1, 2, 4]
    assert improvement_epochs([5, 5, 5]) == [1]


def test_metric_examples():
    assert regression_metrics([50, 60], [50, 60]) == {"mae": 0.0, "rmse": 0.0}
    m = regression_metrics([50, 60], [52, 57])
    assert m["mae"] == pytest.approx(2.5)
    assert m["rmse"] == pytest.approx(np.sqrt(6.5))
    with pytest.raises(ParameterError):
        regression_metrics([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=1, max_size=40))
def test_rmse_at_least_mae(pairs):
    pred, target = zip(*pairs)
    m = regression_metrics(pred, target)
    assert m["rmse"] >= m["mae"] - 1e-12


# training loop ---------------------------------------------------------------

def test_stub_validation_checkpoints(small_ds, tmp_path):
    parts = split_dataset(small_ds)
    model = build_model(tiny_model_cfg(), small_ds.plane_dims)
    seq = iter([10.0, 9.0, 11.0, 8.0])
    report, _ = train(model, parts["train"], parts["val"], TrainingConfig(epochs=4, batch_size=8),
                      out_dir=tmp_path, validate=lambda epoch, reg: next(seq))
    assert report.checkpoint_epochs == [1, 2, 4]
    assert report.best_epoch == 4
    lines = (tmp_path / "report.jsonl").read_text().splitlines()
    assert [json.loads(x)["checkpoint"] for x in lines] == [True, True, False, True]
    assert json.loads((tmp_path / "summary.json").read_text())["checkpoint_epochs"] == [1, 2, 4]
    assert (tmp_path / "best.psck").exists()


def test_checkpoint_log_strictly_decreasing(small_ds):
    parts = split_dataset(small_ds)
    report, _ = build_and_train(tiny_model_cfg(), parts["train"], parts["val"],
                                TrainingConfig(epochs=6, batch_size=8))
    losses = [report.epochs[e - 1].val_loss for e in report.checkpoint_epochs]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert report.checkpoint_epochs == improvement_epochs(report.val_losses)
    assert len(report.epochs) == 6


def test_fixed_seed_bit_reproducible(small_ds, tmp_path):
    parts = split_dataset(small_ds)
    cfg = TrainingConfig(epochs=3, batch_size=8, seed=5)
    for run in ("a", "b"):
        build_and_train(tiny_model_cfg(seed=5), parts["train"], parts["val"], cfg,
                        out_dir=tmp_path / run)
    a = (tmp_path / "a" / "best.psck").read_bytes()
    b = (tmp_path / "b" / "best.psck").read_bytes()
    assert a == b


def test_overfit_eight_samples(small_ds):
    ds = small_ds.subset(range(8))
    model = build_model(tiny_model_cfg(conv_dropout=0.0, seed=3), ds.plane_dims)
    norm = Normalizer.fit(ds)
    before = np.mean((Regressor(model, norm).predict(ds) - ds.ages) ** 2)
    report, reg = train(model, ds, ds, TrainingConfig(epochs=200, batch_size=8, lr=0.003),
                        restore_best=False)
    after = np.mean((reg.predict(ds) - ds.ages) ** 2)
    assert report.train_losses[-1] < 0.1 * report.train_losses[0]
    assert after < 0.1 * before


def test_val_equals_train_consistency(small_ds):
    ds = small_ds.subset(range(12))
    report, _ = build_and_train(tiny_model_cfg(conv_dropout=0.0, seed=1), ds, ds,
                                TrainingConfig(epochs=30, batch_size=12))
    assert report.best_epoch == improvement_epochs(report.val_losses)[-1]
    assert report.best_epoch > 15
    assert report.best_val_loss < report.val_losses[0]


def test_patience_truncates(small_ds):
    parts = split_dataset(small_ds)
    model = build_model(tiny_model_cfg(), small_ds.plane_dims)
    seq = iter([5.0, 6.0, 7.0, 8.0, 9.0, 10.0])
    report, _ = train(model, parts["train"], parts["val"],
                      TrainingConfig(epochs=6, batch_size=8, patience=2),
                      validate=lambda e, r: next(seq))
    assert len(report.epochs) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_context(small_ds):
    parts = split_dataset(small_ds)
    model = build_model(tiny_model_cfg(), small_ds.plane_dims)
    # float32 weights overflow after a few steps of this size
    with pytest.raises(TrainingDivergedError, match=r"epoch \d+, batch \d+, lr 1e\+30"):
        train(model, parts["train"], parts["val"], TrainingConfig(epochs=20, batch_size=8, lr=1e30))


def test_empty_datasets_rejected(small_ds):
    model = build_model(tiny_model_cfg(), small_ds.plane_dims)
    with pytest.raises(ParameterError):
        train(model, small_ds.subset([]), small_ds, TrainingConfig(epochs=1))


def test_regressor_round_trip(small_ds, tmp_path):
    parts = split_dataset(small_ds)
    _, reg = build_and_train(tiny_model_cfg(), parts["train"], parts["val"],
                             TrainingConfig(epochs=2, batch_size=8), out_dir=tmp_path)
    back = Regressor.load(tmp_path / "best.psck")
    np.testing.assert_array_equal(back.predict(small_ds), reg.predict(small_ds))
    m = evaluate(back, parts["test"])
    assert m["rmse"] >= m["mae"] > 0


def test_bias_only_model_predicts_train_mean(small_ds):
    parts = split_dataset(small_ds)
    _, reg = build_and_train(tiny_model_cfg(channels=[]), parts["train"], parts["val"],
                             TrainingConfig(epochs=200, batch_size=64, lr=0.05))
    pred = reg.predict(parts["val"])
    assert np.allclose(pred, parts["train"].ages.mean(), atol=0.5)


def test_augmented_training_runs(small_ds):
    parts = split_dataset(small_ds)
    for mode in ("precomputed", "on_the_fly"):
        report, _ = build_and_train(tiny_model_cfg(), parts["train"], parts["val"],
                                    TrainingConfig(epochs=2, batch_size=16, augment=True,
                                                   augment_copies=1, augment_mode=mode))
        assert len(report.epochs) == 2


def test_training_config_validation():
    with pytest.raises(ConfigError):
        TrainingConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainingConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainingConfig(augment_copies=-1)
    with pytest.raises(ConfigError):
        TrainingConfig(batch_size=1)


# augmentation ----------------------------------------------------------------

def test_identity_transform_bit_exact():
    img = np.random.default_rng(0).standard_normal((13, 17)).astype(np.float32)
    t = Transform(scale=1.0, rotation_deg=0.0, shear_deg=0.0, control=np.zeros((2, 8, 8)))
    assert augment_image(img, t).tobytes() == img.tobytes()
    params = AugmentParams(scale_range=(1, 1), rotation_deg=(0, 0), shear_deg=(0, 0),
                           elastic_sigma=0.0)
    t2 = sample_transform(params, np.random.default_rng(1))
    assert augment_image(img, t2).tobytes() == img.tobytes()


@pytest.mark.parametrize("theta", [5.0, -30.0, 90.0])
def test_rotation_moves_bright_pixel(theta):
    img = np.zeros((21, 21))
    src = np.array([6.0, 13.0])
    img[6, 13] = 1.0
    out = augment_image(img, Transform(rotation_deg=theta))
    c = np.array([10.0, 10.0])
    th = np.deg2rad(theta)
    # output p samples source R^-1 (p - c) + c, so the pixel lands at R (s - c) + c
    expect = c + np.array([np.cos(th) * (src[0] - c[0]) - np.sin(th) * (src[1] - c[1]),
                           np.sin(th) * (src[0] - c[0]) + np.cos(th) * (src[1] - c[1])])
    rows, cols = np.nonzero(out)
    w = out[rows, cols]
    com = np.array([np.sum(rows * w), np.sum(cols * w)]) / w.sum()
    assert np.all(np.abs(com - expect) <= 1.0)
    assert np.all(np.abs(rows - expect[0]) < 2) and np.all(np.abs(cols - expect[1]) < 2)


def test_augment_seeded_determinism():
    img = np.random.default_rng(2).uniform(size=(3, 16, 12)).astype(np.float32)
    outs = [augment_stack(img, sample_transform(AugmentParams(), np.random.default_rng(9)))
            for _ in range(2)]
    assert outs[0].tobytes() == outs[1].tobytes()
    assert not np.array_equal(outs[0], img)


def test_same_transform_for_all_channels():
    one = np.random.default_rng(3).uniform(size=(16, 12)).astype(np.float32)
    out = augment_stack(np.stack([one, one]), sample_transform(AugmentParams(), np.random.default_rng(4)))
    np.testing.assert_array_equal(out[0], out[1])


def test_augment_params_validation():
    with pytest.raises(ConfigError):
        AugmentParams(scale_range=(1.1, 0.9))
    with pytest.raises(ConfigError):
        AugmentParams(shear_deg=(-50, 3))
    with pytest.raises(ConfigError):
        AugmentParams(elastic_grid=1)


def test_expansion_factor_and_originals_untouched(small_ds):
    ds = small_ds.subset(range(5))
    before = _digest(ds)
    out = build_augmented_dataset(ds, 3, AugmentParams(), np.random.default_rng(0))
    assert len(out) == 20
    assert _digest(ds) == before
    np.testing.assert_array_equal(out.subset(range(5)).planes["axial"], ds.planes["axial"])
    assert out.ids[:5] == ds.ids and out.ids[5:10] == ds.ids
    assert build_augmented_dataset(ds, 0, AugmentParams(), np.random.default_rng(0)) is ds


def test_epoch_permutations():
    a, b = epoch_permutation(50, 0, 1), epoch_permutation(50, 0, 2)
    assert not np.array_equal(a, b)
    assert sorted(a) == sorted(b) == list(range(50))
    np.testing.assert_array_equal(a, epoch_permutation(50, 0, 1))


# datasets, splits, normalisation, config ---------------------------------------

def test_split_deterministic_and_proportional():
    ids = [f"sub-{i:05d}" for i in range(10000)]
    names = [split_of(s) for s in ids]
    assert names == [split_of(s) for s in ids]
    for name, share in (("train", 0.70), ("val", 0.15), ("test", 0.15)):
        assert abs(names.count(name) / len(ids) - share) < 0.02


def test_split_dataset_partitions(small_ds):
    parts = split_dataset(small_ds)
    assert sum(len(p) for p in parts.values()) == len(small_ds)
    all_ids = [i for p in parts.values() for i in p.ids]
    assert sorted(all_ids) == sorted(small_ds.ids)


def test_normalizer(small_ds):
    parts = split_dataset(small_ds)
    norm = Normalizer.fit(parts["train"])
    scaled = norm.apply(parts["train"])
    for arr in scaled.planes.values():
        assert arr.min() >= 0.0 and arr.max() <= 1.0 + 1e-6
    z = norm.encode_targets(parts["train"].ages)
    assert abs(z.mean()) < 1e-9 and abs(z.std() - 1) < 1e-9
    np.testing.assert_allclose(norm.decode_targets(z), parts["train"].ages)
    assert Normalizer.from_dict(json.loads(json.dumps(norm.to_dict()))) == norm


def test_select_channels(small_ds):
    sub = small_ds.select_channels("axial-std,sagittal-mean")
    assert sub.channels == [("axial", "std"), ("sagittal", "mean")]
    assert set(sub.plane_dims) == {"axial", "sagittal"}
    np.testing.assert_array_equal(sub.planes["axial"][:, 0], small_ds.planes["axial"][:, 1])
    assert small_ds.select_channels([]).planes == {}


def test_projection_dir_and_labels(tmp_path):
    rng = np.random.default_rng(5)
    labels = {}
    for i in range(3):
        ps = build_projection_set(Volume3D(rng.uniform(size=(6, 5, 4)).astype(np.float32)),
                                  "mean,std", f"s{i}")
        save_projection_set(ps, tmp_path / f"s{i}.pjsn")
        labels[f"s{i}"] = 50.0 + i
    write_labels(tmp_path / "labels.csv", labels)
    assert read_labels(tmp_path / "labels.csv") == labels
    ds = load_projection_dir(tmp_path, "axial-mean")
    assert len(ds) == 3 and ds.channels == [("axial", "mean")]
    np.testing.assert_array_equal(ds.ages, [50, 51, 52])


def test_config_file(tmp_path):
    (tmp_path / "run.toml").write_text(
        '[data]\ndir = "proj"\nchannels = "std"\n[model]\nhead_width = 32\n'
        '[train]\nepochs = 7\nlr = 0.001\n[augment]\nrotation_deg = [-2, 2]\n')
    cfg = load_config(tmp_path / "run.toml")
    assert cfg.data.dir == str((tmp_path / "proj").resolve())
    assert cfg.model.channels == ["coronal-std", "axial-std", "sagittal-std"]
    assert cfg.model.head_width == 32 and cfg.train.epochs == 7
    assert cfg.augment.rotation_deg == (-2.0, 2.0)
    with pytest.raises(ConfigError):
        parse_config({"train": {"epoch": 3}})
    with pytest.raises(ConfigError):
        parse_config({"optimizer": {}})
    (tmp_path / "bad.toml").write_text("[train\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")
