import numpy as np
import pytest

from attackability.data import Dataset, SynthSpec, generate, label_directions, load_csv, save_csv, standardize
from attackability.numerics import make_rng


def test_identical_directions_give_identical_columns():
    ds, _ = generate(SynthSpec(n=300, d=5, m=4, rho=1.0, label_noise=0.0, seed=1))
    assert np.all(ds.Y == ds.Y[:, :1])


def test_orthogonal_directions_give_uncorrelated_labels():
    ds, W = generate(SynthSpec(n=2000, d=10, m=2, rho=0.0, label_noise=0.0, seed=2))
    assert abs(W[0] @ W[1]) < 1e-12
    assert abs(np.corrcoef(ds.Y[:, 0], ds.Y[:, 1])[0, 1]) < 0.1


def test_cannot_orthogonalize():
    with pytest.raises(ValueError, match="cannot orthogonalize"):
        generate(SynthSpec(n=10, d=3, m=5, rho=0.0))


@pytest.mark.parametrize("rho", [0.2, 0.5, 0.9])
def test_direction_cosines(rho):
    W = label_directions(12, 5, rho, make_rng(0))
    C = W @ W.T
    np.testing.assert_allclose(np.diag(C), 1.0, atol=1e-12)
    np.testing.assert_allclose(C[~np.eye(5, dtype=bool)], rho, atol=1e-12)


def test_margin_and_consistency():
    spec = SynthSpec(n=500, d=6, m=3, rho=0.5, margin=0.3, label_noise=0.0, seed=3)
    ds, W = generate(spec)
    H = ds.X @ W.T
    assert np.all(np.abs(H) >= 0.3)
    assert np.all(np.sign(H) == ds.Y)


def test_label_noise_rate():
    ds, W = generate(SynthSpec(n=4000, d=6, m=3, label_noise=0.1, seed=4))
    rate = np.mean(np.sign(ds.X @ W.T) != ds.Y)
    assert 0.08 < rate < 0.12


@pytest.mark.parametrize("n", [10, 101, 1000, 1003])
def test_split_sizes_and_determinism(n):
    a, _ = generate(SynthSpec(n=n, d=3, m=2, seed=7))
    b, _ = generate(SynthSpec(n=n, d=3, m=2, seed=7))
    for name, frac in (("train", 0.5), ("val", 0.3), ("test", 0.2)):
        assert abs(len(a.splits[name]) - frac * n) <= 1
        np.testing.assert_array_equal(a.splits[name], b.splits[name])
    allidx = np.concatenate(list(a.splits.values()))
    assert sorted(allidx.tolist()) == list(range(n))
    assert a.X.tobytes() == b.X.tobytes()


def test_standardize_uses_train_statistics():
    ds, _ = generate(SynthSpec(n=400, d=4, m=2, seed=5))
    out, mean, std = standardize(ds)
    Xtr, _ = out.split("train")
    np.testing.assert_allclose(Xtr.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Xtr.std(axis=0), 1.0, atol=1e-12)


class TestCsv:
    def test_round_trip_is_bit_identical(self, tmp_path, rng):
        X = rng.normal(size=(37, 5)) * 10.0 ** rng.integers(-200, 200, size=(37, 5))
        Y = np.where(rng.normal(size=(37, 3)) > 0, 1.0, -1.0)
        splits = {"train": np.arange(20), "val": np.arange(20, 30), "test": np.arange(30, 37)}
        ds = Dataset(X, Y, splits, clip_box=(-1.0, 1.0), meta={"seed": 3})
        path = str(tmp_path / "d.csv")
        save_csv(ds, path)
        back = load_csv(path)
        assert back.X.tobytes() == X.tobytes() and back.Y.tobytes() == Y.tobytes()
        assert back.clip_box == (-1.0, 1.0)
        for k in splits:
            np.testing.assert_array_equal(back.splits[k], splits[k])

    def test_zero_label_names_line(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,f1,l0\n0.5,1.0,1\n0.1,0.2,0\n")
        with pytest.raises(ValueError, match="line 3"):
            load_csv(str(p))

    def test_empty_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("")
        with pytest.raises(ValueError, match="missing header"):
            load_csv(str(p))

    def test_headerless_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0.5,1.0,1\n")
        with pytest.raises(ValueError, match="missing header"):
            load_csv(str(p))

    def test_ragged_row(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,f1,l0\n0.5,1.0,1\n0.5,1\n")
        with pytest.raises(ValueError, match="line 3"):
            load_csv(str(p))

    def test_splits_without_sidecar(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("f0,l0\n" + "".join(f"{i}.0,1\n" for i in range(10)))
        ds = load_csv(str(p), split_seed=1)
        assert sum(len(v) for v in ds.splits.values()) == 10


def test_dataset_rejects_overlapping_splits():
    with pytest.raises(ValueError, match="overlaps"):
        Dataset(np.zeros((3, 1)), np.ones((3, 1)), {"train": [0, 1], "val": [1]})
