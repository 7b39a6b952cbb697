import numpy as np
import pytest

from lipnet1d.data import (Dataset, fit_normalization, load_csv, normalize, split, synth, write_csv)
from lipnet1d.errors import FormatError, LengthMismatch

from oracles import nearest_centroid_accuracy


def test_load_two_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,1,2,3,4\n3,0.5,-1,2e-3,7\n")
    ds = load_csv(p)
    assert len(ds) == 2 and ds.signals.shape == (2, 1, 4)
    np.testing.assert_array_equal(ds.labels, [0, 3])


def test_letter_labels(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("V,1,2\nN,0,0\nA,1,1\n")
    np.testing.assert_array_equal(load_csv(p).labels, [4, 0, 3])


def test_header_skipped(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,v0,v1\n1,0,0\n")
    assert len(load_csv(p)) == 1


@pytest.mark.parametrize("text,row", [("0,1,2\nX,1,2\n", 2), ("0,1,2\n1,a,2\n", 2), ("7,1,2\n", 1),
                                      ("0,1,2\n0\n", 2), ("0,nan,1\n", 1)])
def test_format_errors_carry_row(tmp_path, text, row):
    p = tmp_path / "d.csv"
    p.write_text(text)
    with pytest.raises(FormatError, match=f"row {row}"):
        load_csv(p)


def test_length_mismatch(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0,1,2,3\n1,1,2\n")
    with pytest.raises(LengthMismatch):
        load_csv(p)


def test_empty_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("\n")
    with pytest.raises(FormatError):
        load_csv(p)


def test_roundtrip(tmp_path):
    ds = synth(10, 4)
    write_csv(ds, tmp_path / "a.csv")
    back = load_csv(tmp_path / "a.csv")
    assert np.max(np.abs(back.signals - ds.signals)) <= 1e-12
    np.testing.assert_array_equal(back.labels, ds.labels)
    write_csv(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_synth_one_per_class(tmp_path):
    ds = synth(5, 0)
    assert ds.signals.shape == (5, 1, 128)
    np.testing.assert_array_equal(np.sort(ds.labels), np.arange(5))
    write_csv(ds, tmp_path / "a.csv")
    write_csv(synth(5, 0), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_synth_deterministic_and_seeded():
    a, b, c = synth(50, 9), synth(50, 9), synth(50, 10)
    assert np.array_equal(a.signals, b.signals) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.signals, c.signals)


def test_synth_balanced_and_separable():
    ds = synth(1000, 0)
    assert np.all(np.bincount(ds.labels) == 200)
    assert nearest_centroid_accuracy(ds.signals, ds.labels) >= 0.95


def test_synth_noise_level():
    # square pulses are flat outside the pulse, so the residual there is pure noise
    ds = synth(500, 1)
    sq = ds.signals[ds.labels == 2, 0, :20]
    assert sq.std() == pytest.approx(0.05, rel=0.1)


def test_synth_rejects_small_n():
    with pytest.raises(ValueError):
        synth(4, 0)


def test_normalize_constant_dataset():
    ds = Dataset(np.full((4, 1, 8), 3.0), np.zeros(4, int))
    np.testing.assert_array_equal(normalize(ds).signals, 0.0)


def test_normalize_moments_and_reuse():
    tr, te = split(synth(100, 2), 0.5, 0)
    st = fit_normalization(tr)
    ntr = normalize(tr, st)
    assert abs(ntr.signals.mean()) <= 1e-12 and ntr.signals.std() == pytest.approx(1.0, rel=1e-12)
    nte = normalize(te, st)
    np.testing.assert_allclose(nte.signals, (te.signals - st["mean"]) / st["std"], rtol=0, atol=0)


def test_split_stratified_balanced():
    a, b = split(synth(100, 3), 0.5, 7)
    assert len(a) == len(b) == 50
    assert np.all(np.bincount(a.labels) == 10) and np.all(np.bincount(b.labels) == 10)


def test_split_proportions_unbalanced():
    labels = np.array([0] * 37 + [1] * 11 + [2] * 52)
    ds = Dataset(np.zeros((100, 1, 2)), labels)
    a, _ = split(ds, 0.3, 1)
    for c, n in zip(range(3), (37, 11, 52)):
        assert abs(np.sum(a.labels == c) - 0.3 * n) <= 1


def test_split_seeded_and_validated():
    ds = synth(50, 0)
    a1, _ = split(ds, 0.4, 3)
    a2, _ = split(ds, 0.4, 3)
    assert np.array_equal(a1.signals, a2.signals)
    with pytest.raises(ValueError):
        split(ds, 1.0, 0)
