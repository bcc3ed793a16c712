import struct

import numpy as np
import pytest

from mgce.data import (
    DataError,
    EmbeddingSet,
    Sample,
    Split,
    SyntheticSpec,
    gcd_counts,
    generate_synthetic,
    labels_path_for,
    load_embeddings,
    save_embeddings,
)


def small_spec(**kw):
    base = dict(n_super=1, classes_per_super=2, subclasses_per_class=1,
                samples_per_subclass=4, dim=8, seed=3)
    base.update(kw)
    return SyntheticSpec(**base)


def test_split_rule_small():
    data = generate_synthetic(small_spec())
    assert len(data) == 8
    splits = [s.split for s in data.samples]
    assert splits[:4] == [Split.LABELED_KNOWN] * 2 + [Split.UNLABELED_KNOWN] * 2
    assert splits[4:] == [Split.UNLABELED_NOVEL] * 4
    assert gcd_counts(data) == (2, 6, 1, 2)


def test_generation_is_deterministic():
    a = generate_synthetic(small_spec())
    b = generate_synthetic(small_spec())
    assert a.rows.tobytes() == b.rows.tobytes()
    assert a.samples == b.samples


def test_counts_for_acceptance_shape():
    data = generate_synthetic(SyntheticSpec(2, 5, 2, 20, 64, seed=1))
    n, m, k_l, k_u = gcd_counts(data)
    # 5 known classes of 40 rows, half labeled
    assert (n, m, k_l, k_u) == (100, 300, 5, 10)


def test_odd_class_size_rounds_labeled_down():
    data = generate_synthetic(small_spec(samples_per_subclass=5))
    lab = [s for s in data.samples if s.split is Split.LABELED_KNOWN]
    assert len(lab) == 2


def test_split_invariants():
    data = generate_synthetic(SyntheticSpec(2, 3, 2, 5, 16, seed=0))
    _, _, k_l, _ = gcd_counts(data)
    for s in data.samples:
        if s.split is Split.LABELED_KNOWN:
            assert s.label is not None and s.label < k_l
        elif s.split is Split.UNLABELED_NOVEL:
            assert s.label is None and s.true_label >= k_l


def test_all_labeled_has_no_unlabeled_rows():
    rows = np.eye(3, 4)
    samples = [Sample(i, 0, Split.LABELED_KNOWN, 0) for i in range(3)]
    assert gcd_counts(EmbeddingSet(rows, samples))[1] == 0


def test_cub_protocol_counts():
    # labeled 1498 rows over 100 classes; unlabeled 4496 rows over 200 classes
    samples = [Sample(i, i % 100, Split.LABELED_KNOWN, i % 100) for i in range(1498)]
    for j in range(4496):
        cls = j % 200
        split = Split.UNLABELED_KNOWN if cls < 100 else Split.UNLABELED_NOVEL
        samples.append(Sample(1498 + j, None, split, cls))
    data = EmbeddingSet(np.ones((len(samples), 2)), samples)
    assert gcd_counts(data) == (1498, 4496, 100, 200)


@pytest.mark.parametrize("bad", [
    dict(samples_per_subclass=0),
    dict(dim=1),
    dict(sigma_within=1.0, sigma_sub=0.5),
])
def test_invalid_spec_rejected(bad):
    with pytest.raises(ValueError):
        generate_synthetic(small_spec(**bad))


def _write(tmp_path, rows, labels_csv):
    path = tmp_path / "emb.bin"
    n, d = rows.shape
    path.write_bytes(struct.pack("<4sBII", b"MGCE", 1, n, d) + rows.astype("<f4").tobytes())
    labels_path_for(path).write_text(labels_csv, encoding="utf-8")
    return path


def test_load_minimal_file(tmp_path):
    rows = np.arange(6, dtype=float).reshape(3, 2) + 1
    path = _write(tmp_path, rows, "id,label,split\n0,7,L\n1,,UK\n2,,UN\n")
    data = load_embeddings(path)
    assert len(data) == 3 and data.dim == 2
    # external label 7 is densified to 0
    assert data.samples[0].label == 0
    np.testing.assert_allclose(data.rows, rows)


def test_missing_label_rejected(tmp_path):
    path = _write(tmp_path, np.ones((3, 2)), "id,label,split\n0,,L\n1,,UK\n2,,UN\n")
    with pytest.raises(DataError, match="missing label"):
        load_embeddings(path)


def test_non_finite_rejected(tmp_path):
    rows = np.ones((3, 2))
    rows[1, 1] = np.nan
    path = _write(tmp_path, rows, "id,label,split\n0,1,L\n1,,UK\n2,,UN\n")
    with pytest.raises(DataError, match="non-finite embedding"):
        load_embeddings(path)


def test_bad_magic_and_row_mismatch(tmp_path):
    path = _write(tmp_path, np.ones((3, 2)), "id,label,split\n0,1,L\n1,,UK\n")
    with pytest.raises(DataError, match="row-count mismatch"):
        load_embeddings(path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="bad magic"):
        load_embeddings(path)


def test_novel_row_with_labeled_class_rejected(tmp_path):
    path = _write(tmp_path, np.ones((3, 2)), "id,label,split\n0,1,L\n1,1,UN\n2,,UN\n")
    with pytest.raises(DataError, match="novel row"):
        load_embeddings(path)


def test_round_trip(tmp_path):
    data = generate_synthetic(small_spec())
    path = tmp_path / "d.bin"
    save_embeddings(path, data)
    back = load_embeddings(path)
    np.testing.assert_allclose(back.rows, data.rows, rtol=1e-6)
    assert [s.target for s in back.samples] == [s.target for s in data.samples]
    assert [s.split for s in back.samples] == [s.split for s in data.samples]
