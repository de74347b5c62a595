import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from odmtcnet.dataset import (DatasetError, MultiViewDataset, SplitSpec, channel_views, export_splits,
                              index_split, ingest_feature_maps, lbp_codes, lbp_view, load_dataset,
                              make_splits, make_views, read_splits, wavelet_view)

from conftest import orl_root


def _write_tree(root, classes, size=(6, 5), fmt="png", seed=0):
    rng = np.random.default_rng(seed)
    for name, n in classes.items():
        d = root / name
        d.mkdir(parents=True)
        for i in range(n):
            arr = (rng.random(size) * 255).astype(np.uint8)
            Image.fromarray(arr).save(d / f"{i}.{fmt}")


def test_load_dataset_lexicographic_labels(tmp_path):
    _write_tree(tmp_path, {"b": 2, "a": 3, "c": 1}, fmt="pgm")
    stack = load_dataset(tmp_path)
    assert stack.images.shape == (6, 6, 5)
    assert stack.class_names == ("a", "b", "c")
    assert stack.labels.tolist() == [0, 0, 0, 1, 1, 2]
    assert 0.0 <= stack.images.min() and stack.images.max() <= 1.0


def test_load_dataset_scales_pixels(tmp_path):
    d = tmp_path / "x"
    d.mkdir()
    Image.fromarray(np.full((4, 4), 255, np.uint8)).save(d / "0.png")
    (tmp_path / "y").mkdir()
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "y" / "0.png")
    stack = load_dataset(tmp_path)
    assert stack.images[0].min() == 1.0 and stack.images[1].max() == 0.0


def test_load_dataset_one_class_is_error(tmp_path):
    _write_tree(tmp_path, {"only": 3})
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_load_dataset_heterogeneous_sizes(tmp_path):
    _write_tree(tmp_path / "r", {"a": 1}, size=(4, 4))
    _write_tree(tmp_path / "r", {"b": 1}, size=(5, 4), seed=1)
    with pytest.raises(DatasetError, match="resize"):
        load_dataset(tmp_path / "r")
    assert load_dataset(tmp_path / "r", resize=(4, 4)).images.shape == (2, 4, 4)


def test_load_dataset_unreadable_file(tmp_path):
    _write_tree(tmp_path, {"a": 1, "b": 1})
    (tmp_path / "a" / "broken.png").write_bytes(b"not an image")
    with pytest.raises(DatasetError, match="decode"):
        load_dataset(tmp_path)


def test_load_rgb(tmp_path):
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / name / "0.png")
    assert load_dataset(tmp_path, color="rgb").images.shape == (2, 4, 4, 3)


@pytest.mark.skipif(orl_root() is None, reason="ORL faces not available")
def test_orl_layout():
    stack = load_dataset(orl_root())
    assert stack.images.shape[0] == 400
    assert stack.n_classes == 40


# -- LBP ---------------------------------------------------------------------

def _lbp_bruteforce(img):
    p, q = img.shape
    out = np.zeros((p, q), dtype=int)
    offsets = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]
    for r in range(p):
        for c in range(q):
            code = 0
            for bit, (dr, dc) in enumerate(offsets):
                rr, cc = r + dr, c + dc
                v = img[rr, cc] if 0 <= rr < p and 0 <= cc < q else 0.0
                if v > img[r, c]:
                    code += 2 ** bit
            out[r, c] = code
    return out


def test_lbp_constant_image_is_zero():
    assert not lbp_view(np.full((1, 5, 5), 0.3)).any()


def test_lbp_bright_centre():
    img = np.zeros((3, 3))
    img[1, 1] = 1.0
    # each neighbour only sees the centre above it; the bit is the direction towards the centre
    expected = np.array([[16, 32, 64],
                         [8, 0, 128],
                         [4, 2, 1]])
    np.testing.assert_array_equal(lbp_codes(img)[0], expected)
    for r in range(3):
        for c in range(3):
            if (r, c) != (1, 1):
                assert bin(expected[r, c]).count("1") == 1


def test_lbp_matches_bruteforce():
    rng = np.random.default_rng(3)
    imgs = rng.random((3, 7, 6))
    for img, codes in zip(imgs, lbp_codes(imgs)):
        np.testing.assert_array_equal(codes, _lbp_bruteforce(img))
    np.testing.assert_array_equal(lbp_view(imgs), lbp_codes(imgs) / 255.0)


def test_lbp_is_pure():
    imgs = np.random.default_rng(0).random((2, 8, 8))
    assert lbp_view(imgs).tobytes() == lbp_view(imgs.copy()).tobytes()


# -- wavelet -----------------------------------------------------------------

def test_wavelet_constant():
    out = wavelet_view(np.full((1, 8, 8), 0.7), levels=2)
    np.testing.assert_allclose(out, 0.7, atol=1e-15)


def test_wavelet_checkerboard_level_one():
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)
    np.testing.assert_allclose(wavelet_view(board, 1)[0], 0.5, atol=1e-15)


def test_wavelet_feret_shape_matches_block_means():
    img = np.random.default_rng(1).random((20, 20))
    out = wavelet_view(img, 2)[0]
    assert out.shape == (20, 20)
    means = img.reshape(5, 4, 5, 4).mean(axis=(1, 3))
    np.testing.assert_allclose(out, np.kron(means, np.ones((4, 4))), atol=1e-14)


def test_wavelet_indivisible():
    with pytest.raises(DatasetError):
        wavelet_view(np.zeros((1, 10, 8)), 2)


# -- channels and feature maps -----------------------------------------------

def test_channel_views_pure_red():
    img = np.zeros((1, 4, 4, 3))
    img[..., 0] = 1.0
    r, g = channel_views(img, (0, 1))
    assert (r == 1).all() and (g == 0).all()


def test_channel_views_rejects_gray():
    with pytest.raises(DatasetError):
        channel_views(np.zeros((2, 4, 4)))


def test_ingest_feature_maps(tmp_path):
    rows = np.vstack([np.arange(4096, dtype=float), np.zeros(4096)])
    path = tmp_path / "fc.csv"
    np.savetxt(path, rows, delimiter=",")
    maps = ingest_feature_maps(path, (64, 64))
    assert maps.shape == (2, 64, 64)
    assert maps[0, 1, 0] == 64.0 and maps[0, 0, 1] == 1.0
    assert not maps[1].any()


def test_ingest_feature_maps_length_mismatch(tmp_path):
    path = tmp_path / "bad.csv"
    np.savetxt(path, np.zeros((1, 4095)), delimiter=",")
    with pytest.raises(DatasetError):
        ingest_feature_maps(path, (64, 64))


def test_multiview_invariants():
    with pytest.raises(DatasetError):
        MultiViewDataset(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)), np.array([0, 1]), 2)
    with pytest.raises(DatasetError):
        MultiViewDataset(np.zeros((2, 4, 4)), np.zeros((2, 4, 4)), np.array([0]), 2)
    ds = MultiViewDataset(np.zeros((2, 4, 4)), np.ones((2, 4, 4)), np.array([0, 1]), 2)
    with pytest.raises(ValueError):
        ds.view1[0, 0, 0] = 1.0


def test_make_views_pairs_by_index(tmp_path):
    _write_tree(tmp_path, {"a": 2, "b": 2}, size=(8, 8))
    stack = load_dataset(tmp_path)
    for kind in ("lbp", "wavelet"):
        ds = make_views(stack, kind)
        assert ds.view1.shape == ds.view2.shape == stack.images.shape
        np.testing.assert_array_equal(ds.view1, stack.images)


# -- splits ------------------------------------------------------------------

def test_orl_sized_splits():
    labels = np.repeat(np.arange(40), 10)
    splits = make_splits(labels, SplitSpec(280, 10, 0))
    assert len(splits) == 10
    for tr, te in splits:
        assert (len(tr), len(te)) == (280, 120)
        assert np.union1d(tr, te).size == 400
    assert not np.array_equal(splits[0][0], splits[1][0])


def test_splits_deterministic():
    labels = np.repeat(np.arange(5), 4)
    a = make_splits(labels, SplitSpec(8, 1, 42))
    b = make_splits(labels, SplitSpec(8, 1, 42))
    np.testing.assert_array_equal(a[0][0], b[0][0])


def test_splits_reject_full_train():
    with pytest.raises(ValueError):
        make_splits(np.arange(10) % 2, SplitSpec(10, 1, 0))
    with pytest.raises(ValueError):
        SplitSpec(5, 0, 0)


@settings(max_examples=40, deadline=None)
@given(sizes=st.lists(st.integers(1, 12), min_size=2, max_size=6), frac=st.floats(0.05, 0.95),
       seed=st.integers(0, 2 ** 16))
def test_stratified_allocation_within_one(sizes, frac, seed):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    m = labels.size
    k = min(max(1, int(frac * m)), m - 1)
    tr, te = make_splits(labels, SplitSpec(k, 1, seed, stratified=True))[0]
    assert tr.size == k and te.size == m - k
    for c, n in enumerate(sizes):
        got = np.sum(labels[tr] == c)
        assert abs(got - n * k / m) < 1 + 1e-9


def test_split_csv_roundtrip(tmp_path):
    splits = make_splits(np.repeat(np.arange(4), 3), SplitSpec(6, 3, 1))
    export_splits(tmp_path / "s.csv", splits)
    back = read_splits(tmp_path / "s.csv")
    for (a, b), (c, d) in zip(splits, back):
        np.testing.assert_array_equal(a, c)
        np.testing.assert_array_equal(b, d)


def test_index_split():
    tr, te = index_split([0, 3], [1, 2], 4)
    assert tr.tolist() == [0, 3] and te.tolist() == [1, 2]
    with pytest.raises(ValueError):
        index_split([0, 1], [1], 4)
