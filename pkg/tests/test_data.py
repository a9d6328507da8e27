import numpy as np
import pytest

from infomri.data import (
    ClsRecord, SegRecord, gen_cls_dataset, gen_seg_dataset, load_dataset, perturb_mask, save_dataset,
)
from infomri.kspace import conjugate_flat_indices, dft2
from infomri.metrics import iou
from infomri.serialization import FormatError, read_container, write_container


def test_zero_radius_annotators_equal_canonical():
    recs = gen_seg_dataset(5, annotators=3, seed=2, max_radius=0)
    for r in recs:
        assert all((a == r.annotations[0]).all() for a in r.annotations)
        assert r.annotations[0].any()


def test_single_annotator():
    recs = gen_seg_dataset(3, annotators=1, seed=4)
    assert all(r.annotations.shape == (1, 32, 32) for r in recs)


def test_seg_determinism(tmp_path):
    save_dataset(tmp_path / "a.bin", gen_seg_dataset(4, seed=7), seed=7)
    save_dataset(tmp_path / "b.bin", gen_seg_dataset(4, seed=7), seed=7)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_annotator_agreement_band():
    recs = gen_seg_dataset(100, seed=0)
    scores = []
    for r in recs:
        A = len(r.annotations)
        scores += [iou(r.annotations[i], r.annotations[j]) for i in range(A) for j in range(i + 1, A)]
    assert 0.6 <= np.mean(scores) <= 0.95


def test_images_real_nonnegative_and_hermitian():
    for rec in gen_seg_dataset(5, seed=3) + gen_cls_dataset(5, seed=3):
        assert np.isrealobj(rec.image) and rec.image.min() >= 0
        k = dft2(rec.image).ravel()
        np.testing.assert_allclose(k[conjugate_flat_indices(rec.image.shape)], np.conj(k), atol=1e-12)


def test_perturb_mask_monotone():
    m = np.zeros((16, 16), bool)
    m[5:11, 5:11] = True
    assert (perturb_mask(m, 0) == m).all()
    assert perturb_mask(m, 2).sum() > m.sum() > perturb_mask(m, -2).sum()
    assert (perturb_mask(m, -1) <= m).all() and (perturb_mask(m, 1) >= m).all()


@pytest.mark.parametrize("classes", [2, 5, 8])
def test_cls_balanced(classes):
    recs = gen_cls_dataset(classes, classes=classes, seed=1)
    assert sorted(r.label for r in recs) == list(range(classes))
    counts = np.bincount([r.label for r in gen_cls_dataset(10 * classes, classes=classes)], minlength=classes)
    assert (counts == 10).all()


def test_cls_bad_class_count():
    with pytest.raises(ValueError):
        gen_cls_dataset(10, classes=9)
    with pytest.raises(ValueError):
        gen_cls_dataset(10, classes=1)


def test_cls_determinism():
    a, b = gen_cls_dataset(12, seed=5), gen_cls_dataset(12, seed=5)
    assert all((x.image == y.image).all() and x.label == y.label for x, y in zip(a, b))


def test_nearest_centroid_learnable():
    train, test = gen_cls_dataset(400, classes=4, seed=0), gen_cls_dataset(400, classes=4, seed=1)
    X = np.stack([r.image.ravel() for r in train])
    y = np.array([r.label for r in train])
    centroids = np.stack([X[y == c].mean(0) for c in range(4)])
    Xt = np.stack([r.image.ravel() for r in test])
    pred = np.argmin(((Xt[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred == [r.label for r in test]) > 0.9


def test_round_trips(tmp_path):
    seg = gen_seg_dataset(3, dims=(8, 12), annotators=2, seed=0)
    save_dataset(tmp_path / "s.bin", seg)
    back = load_dataset(tmp_path / "s.bin")
    assert all(isinstance(r, SegRecord) for r in back)
    for a, b in zip(seg, back):
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.annotations, b.annotations)
    cls = gen_cls_dataset(6, classes=3, seed=0)
    save_dataset(tmp_path / "c.bin", cls)
    back = load_dataset(tmp_path / "c.bin")
    assert all(isinstance(r, ClsRecord) for r in back)
    assert [r.label for r in back] == [r.label for r in cls]
    save_dataset(tmp_path / "e.bin", [])
    assert load_dataset(tmp_path / "e.bin") == []


def test_corrupt_files(tmp_path):
    save_dataset(tmp_path / "s.bin", gen_seg_dataset(2, dims=(8, 8), seed=0))
    header, payload = read_container(tmp_path / "s.bin")
    write_container(tmp_path / "count.bin", header | {"count": 3}, payload)
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "count.bin")
    (tmp_path / "trunc.bin").write_bytes((tmp_path / "s.bin").read_bytes()[:-5])
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "trunc.bin")
    (tmp_path / "junk.bin").write_bytes(b"\x05\0\0\0\0\0\0\0{oops")
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "junk.bin")
