import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecgdiff.data import (
    TEST_FOLD,
    TRAIN_FOLDS,
    VAL_FOLD,
    Dataset,
    DatasetError,
    EcgRecord,
    augment_with_positives,
    generate_synthetic_copy,
    load_dataset,
    make_toy_dataset,
    save_dataset,
    split_folds,
)
from ecgdiff.model import ModelConfig
from ecgdiff.training import TrainConfig, train


def fixture_dataset(n=3, folds=None, length=20):
    rng = np.random.default_rng(0)
    folds = folds or [i % 10 + 1 for i in range(n)]
    recs = [EcgRecord(f"r{i}", rng.standard_normal((2, length)).astype(np.float32), 100.0,
                      np.array([i % 2]), folds[i]) for i in range(n)]
    return Dataset(recs, ("afib",), 100.0, ("I", "II"), name="fx")


def test_load_well_formed_fixture(tmp_path):
    d = fixture_dataset(3)
    save_dataset(d, tmp_path)
    back = load_dataset(tmp_path)
    assert len(back) == 3
    assert back.signals().shape == (3, 2, 20)
    assert back.lead_names == ("I", "II") and back.label_names == ("afib",)
    assert back.fs == 100.0
    assert np.array_equal(back.signals(), d.signals())
    assert np.array_equal(back.labels(), d.labels())
    assert list(back.folds()) == [1, 2, 3]


def test_fold_out_of_range(tmp_path):
    with pytest.raises(DatasetError):
        EcgRecord("x", np.zeros((2, 4), np.float32), 100.0, np.array([0]), 11)
    save_dataset(fixture_dataset(2), tmp_path)
    meta = tmp_path / "meta.csv"
    meta.write_text(meta.read_text().replace("r1,2,", "r1,11,"))
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_payload_length_mismatch(tmp_path):
    save_dataset(fixture_dataset(2), tmp_path)
    (tmp_path / "r0.f32").write_bytes((tmp_path / "r0.f32").read_bytes()[:-4])
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_unknown_lead_and_bad_metadata(tmp_path):
    d = fixture_dataset(2)
    save_dataset(d, tmp_path)
    meta = tmp_path / "meta.csv"
    text = meta.read_text()
    meta.write_text(text.replace("lead_names=I;II", "lead_names=I;XYZ"))
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    meta.write_text(text.replace("r0,1,100.0,2", "r0,1,100.0,3"))
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    meta.write_text(text.replace("\n# label_names=afib", ""))
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing")


def test_dataset_invariants():
    d = fixture_dataset(2)
    with pytest.raises(DatasetError):
        Dataset(d.records + [d.records[0]], d.label_names, d.fs, d.lead_names)
    odd = EcgRecord("odd", np.zeros((2, 7), np.float32), 100.0, np.array([0]), 1)
    with pytest.raises(DatasetError):
        Dataset(d.records + [odd], d.label_names, d.fs, d.lead_names)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**16), n=st.integers(1, 5))
def test_save_load_is_bitwise(tmp_path_factory, seed, n):
    rng = np.random.default_rng(seed)
    recs = [EcgRecord(f"id{i}", (rng.standard_normal((2, 9)) * 1e3).astype(np.float32), 500.0,
                      rng.integers(0, 2, 3), int(rng.integers(1, 11))) for i in range(n)]
    d = Dataset(recs, ("a", "b", "c"), 500.0, ("I", "II"))
    path = tmp_path_factory.mktemp("ds")
    back = load_dataset(save_dataset(d, path))
    assert back.signals().tobytes() == d.signals().tobytes()
    assert np.array_equal(back.labels(), d.labels())


def test_split_folds_sizes_and_partition():
    d = fixture_dataset(10)
    train_, val, test = split_folds(d)
    assert (len(train_), len(val), len(test)) == (8, 1, 1)
    ids = [r.id for part in (train_, val, test) for r in part]
    assert sorted(ids) == sorted(r.id for r in d)
    assert set(val.folds()) == {VAL_FOLD} and set(test.folds()) == {TEST_FOLD}


def test_split_folds_degenerate_warns():
    d = fixture_dataset(4, folds=[1, 1, 1, 1])
    with pytest.warns(UserWarning):
        parts = split_folds(d)
    assert [len(p) for p in parts] == [4, 0, 0]


def test_toy_dataset_reproducible_and_bounded():
    a, b = make_toy_dataset(20, 2, seed=3), make_toy_dataset(20, 2, seed=3)
    assert a.signals().tobytes() == b.signals().tobytes()
    assert np.array_equal(a.labels(), b.labels())
    assert not np.array_equal(a.signals(), make_toy_dataset(20, 2, seed=4).signals())
    assert np.abs(a.signals()).max() <= 3.0
    assert len(a) == 40 and a.signals().shape == (40, 2, 256)
    assert a.labels().sum() == 20
    for cls in (0, 1):
        folds = a.folds()[a.labels()[:, 0] == cls]
        assert sorted(folds) == sorted(list(range(1, 11)) * 2)


def test_toy_dataset_variants():
    d = make_toy_dataset([4, 3, 5], 3, seed=0, n_leads=8)
    assert len(d) == 12 and d.label_names == ("irregular", "wide")
    assert d.signals().shape[1] == 8
    assert d.labels().sum(0).tolist() == [3, 5]
    with pytest.raises(ValueError):
        make_toy_dataset(4, 4)


def test_toy_classes_are_linearly_separable_on_frequency_features():
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import cross_val_score

    d = make_toy_dataset(100, 2, seed=11)
    x = np.abs(np.fft.rfft(d.signals(), axis=-1)).reshape(len(d), -1)
    y = d.labels()[:, 0]
    acc = cross_val_score(LogisticRegression(max_iter=2000), x, y, cv=5).mean()
    assert acc > 0.95


@pytest.fixture(scope="module")
def tiny_ckpt():
    d = make_toy_dataset(6, 2, seed=0, length=16)
    cfg = ModelConfig(channels=2, length=16, residual_channels=4, skip_channels=4, num_blocks=1,
                      s4_state_dim=4, embed_dim=8, step_embed_dim=8, step_hidden_dim=8, num_labels=1)
    res = train(d.signals(), d.labels(), cfg, TrainConfig(batch_size=4, total_samples=8, T=5),
                label_names=d.label_names)
    return d, res.checkpoints[-1]


def test_synthetic_copy_contract(tiny_ckpt):
    d, ck = tiny_ckpt
    s = generate_synthetic_copy(ck, d, seed=1, batch_size=5)
    assert len(s) == len(d)
    assert np.array_equal(s.labels(), d.labels())
    assert np.array_equal(s.folds(), d.folds())
    assert [r.source_id for r in s] == [r.id for r in d]
    assert s.signals().shape == d.signals().shape
    again = generate_synthetic_copy(ck, d, seed=1, batch_size=5)
    assert again.signals().tobytes() == s.signals().tobytes()


def test_synthetic_copy_label_mismatch(tiny_ckpt):
    _, ck = tiny_ckpt
    d3 = make_toy_dataset(2, 3, seed=0, length=16)
    with pytest.raises(DatasetError):
        generate_synthetic_copy(ck, d3)


def test_augmentation_modes(tiny_ckpt):
    d = make_toy_dataset(30, 2, seed=5, length=16)
    n_pos_train = sum(1 for r in d if r.fold in TRAIN_FOLDS and r.labels[0] == 1)
    assert n_pos_train == 24
    base = augment_with_positives(d, None, "baseline", 0)
    assert len(base) == len(d)
    dbl = augment_with_positives(d, None, "double", 0)
    assert len(dbl) == len(d) + n_pos_train
    _, ck = tiny_ckpt
    synth = generate_synthetic_copy(ck, d, seed=0)
    aug = augment_with_positives(d, synth, "synth_aug", 0)
    added = aug.records[len(d):]
    assert len(added) == n_pos_train
    assert all(r.labels[0] == 1 and r.id.startswith("syn_") for r in added)
    for out in (dbl, aug):
        for fold in (VAL_FOLD, TEST_FOLD):
            assert [r.id for r in out.subset([fold])] == [r.id for r in d.subset([fold])]
    with pytest.raises(ValueError):
        augment_with_positives(d, None, "triple", 0)
    with pytest.raises(ValueError):
        augment_with_positives(d, None, "synth_aug", 0)


def test_split_has_no_warning_on_full_folds():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        split_folds(fixture_dataset(10))
