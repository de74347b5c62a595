import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from odmtcnet.patches import (PatchGeometry, center, extract_patches, patch_matrix, unvectorize_patch,
                              vectorize_patch)

G3 = PatchGeometry(3, 3)


def test_geometry_validation():
    for bad in [(2, 3), (1, 1), (3, 4)]:
        with pytest.raises(ValueError):
            PatchGeometry(*bad)
    assert PatchGeometry(5, 3).pad == (2, 1)


def test_single_image_centre_column():
    img = np.arange(9, dtype=float).reshape(3, 3)
    data, source = extract_patches(img, G3)
    assert data.shape == (9, 9)
    # pixel (1, 1) is column 4 in raster order and needs no padding
    np.testing.assert_array_equal(data[:, 4], img.ravel(order="F"))
    assert source[4].tolist() == [0, 1, 1]


def test_column_count():
    data, _ = extract_patches(np.zeros((2, 4, 4)), G3)
    assert data.shape == (9, 32)


def test_corner_patch_of_ones():
    data, _ = extract_patches(np.ones((1, 4, 4)), G3)
    corner = data[:, 0]
    # rows {0,1} x cols {0,1} fall inside the image: four ones, five padded zeros
    assert (corner == 1).sum() == 4 and (corner == 0).sum() == 5
    np.testing.assert_array_equal(unvectorize_patch(corner, G3),
                                  [[0, 0, 0], [0, 1, 1], [0, 1, 1]])


@settings(max_examples=30, deadline=None)
@given(img=arrays(np.float64, st.tuples(st.integers(1, 7), st.integers(1, 7)),
                  elements=st.floats(-5, 5)),
       l1=st.sampled_from([3, 5]), l2=st.sampled_from([3, 5]))
def test_columns_unvectorize_to_padded_neighbourhoods(img, l1, l2):
    geom = PatchGeometry(l1, l2)
    data, source = extract_patches(img, geom)
    a, b = geom.pad
    padded = np.pad(img, ((a, a), (b, b)))
    for j, (_, r, s) in enumerate(source):
        np.testing.assert_array_equal(unvectorize_patch(data[:, j], geom), padded[r:r + l1, s:s + l2])
    assert data.shape[1] == img.size


def test_vectorize_roundtrip():
    patch = np.arange(15.0).reshape(3, 5)
    geom = PatchGeometry(3, 5)
    np.testing.assert_array_equal(unvectorize_patch(vectorize_patch(patch), geom), patch)
    assert vectorize_patch(patch)[1] == patch[1, 0]


def test_center_identical_columns():
    v = np.array([1.0, -2.0, 3.0])
    c = center(np.tile(v[:, None], 5))
    assert not c.data.any()
    np.testing.assert_array_equal(c.mean, v)


def test_center_two_columns():
    a, b = np.array([1.0, 4.0]), np.array([3.0, -2.0])
    c = center(np.stack([a, b], axis=1))
    np.testing.assert_allclose(c.data[:, 0], (a - b) / 2)
    np.testing.assert_allclose(c.data[:, 1], -(a - b) / 2)
    np.testing.assert_allclose(c.mean, (a + b) / 2)


def test_center_random_and_idempotent():
    raw = np.random.default_rng(0).standard_normal((4, 10))
    c = center(raw)
    assert np.abs(c.data.sum(axis=1)).max() < 1e-12
    again = center(c.data)
    assert np.abs(again.data - c.data).max() < 1e-12


def test_center_empty():
    with pytest.raises(ValueError):
        center(np.zeros((9, 0)))


def test_patch_matrix_labels():
    stack = np.random.default_rng(1).random((3, 4, 5))
    pm = patch_matrix(stack, [2, 0, 1], G3)
    assert pm.n_columns == 60
    np.testing.assert_array_equal(pm.patch_labels, np.repeat([2, 0, 1], 20))
    assert np.abs(pm.data.mean(axis=1)).max() < 1e-10
