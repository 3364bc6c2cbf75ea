import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualconv.errors import FormatError, GeometryError, PrecisionError, ShapeError
from dualconv.tensor import (col2im, gemm, gemm_mode, gemm_reference, gemm_tiled, im2col, max_abs_diff,
                             output_extent, read_tensor, seeded_random, tensor_from_bytes, tensor_to_bytes,
                             write_tensor, zeros)


def test_zeros_small():
    t = zeros((1, 1, 2, 2), 32)
    assert t.dtype == np.float32 and t.size == 4 and not t.any()


def test_zeros_count():
    t = zeros((2, 3, 4, 4), 64)
    assert t.dtype == np.float64 and t.size == 96 and not t.any()


@pytest.mark.parametrize("shape", [(0, 1, 1, 1), (1, 1, -2, 1), (1, 1, 1)])
def test_zeros_rejects_bad_extents(shape):
    with pytest.raises(ShapeError):
        zeros(shape)


def test_zeros_rejects_overflow():
    with pytest.raises(ShapeError):
        zeros((2**20, 2**20, 2**20, 2**20))


def test_precision_rejected():
    with pytest.raises(PrecisionError):
        zeros((1, 1, 1, 1), 16)


def test_seeded_random_deterministic():
    a = seeded_random((2, 3, 4, 5), 11)
    b = seeded_random((2, 3, 4, 5), 11)
    assert a.tobytes() == b.tobytes()


def test_seeded_random_seeds_differ():
    assert not np.array_equal(seeded_random((1, 2, 3, 3), 0), seeded_random((1, 2, 3, 3), 1))


# pinned from the first generation; a change here means the seeded stream changed
GOLDEN = {
    (0, 32): 0.2739233672618866,
    (0, 64): 0.2739233746429086,
    (1, 32): 0.0236432496458292,
    (1, 64): 0.023643249400513433,
}


@pytest.mark.parametrize("seed,precision", sorted(GOLDEN))
def test_seeded_random_golden(seed, precision):
    assert seeded_random((1, 1, 1, 1), seed, precision).item() == GOLDEN[(seed, precision)]


def test_seeded_random_range():
    t = seeded_random((4, 4, 8, 8), 3, 64)
    assert t.min() >= -1 and t.max() <= 1


def test_output_extent():
    assert output_extent(32, 3, 1, 1) == 32
    assert output_extent(8, 3, 2, 1) == 4
    with pytest.raises(GeometryError):
        output_extent(2, 5, 1, 1)


def test_im2col_single_patch():
    x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    cols = im2col(x, 3, 1, 0)
    assert cols.shape == (9, 1)
    np.testing.assert_array_equal(cols[:, 0], x.ravel())


def test_im2col_pointwise():
    x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    cols = im2col(x, 1, 1, 0)
    assert cols.shape == (1, 9)
    np.testing.assert_array_equal(cols[0], x.ravel())


def _im2col_loop(x, k, s, p):
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
    out = np.zeros((c * k * k, b * ho * wo))
    for bi in range(b):
        for oy in range(ho):
            for ox in range(wo):
                col = bi * ho * wo + oy * wo + ox
                for ci in range(c):
                    for ky in range(k):
                        for kx in range(k):
                            out[ci * k * k + ky * k + kx, col] = xp[bi, ci, oy * s + ky, ox * s + kx]
    return out


def test_im2col_against_loop():
    x = seeded_random((1, 2, 4, 4), 5, 64)
    np.testing.assert_array_equal(im2col(x, 3, 2, 1), _im2col_loop(x, 3, 2, 1))


@given(b=st.integers(1, 2), c=st.integers(1, 3), h=st.integers(3, 7), k=st.sampled_from([1, 2, 3]),
       s=st.integers(1, 2), p=st.integers(0, 2), seed=st.integers(0, 1000))
def test_col2im_is_adjoint(b, c, h, k, s, p, seed):
    x = seeded_random((b, c, h, h), seed, 64)
    cols = im2col(x, k, s, p)
    y = np.random.default_rng(seed).standard_normal(cols.shape)
    lhs = float(np.sum(cols * y))
    rhs = float(np.sum(x * col2im(y, x.shape, k, s, p)))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_gemm_identity():
    m = seeded_random((1, 1, 3, 4), 2, 64)[0, 0]
    np.testing.assert_array_equal(gemm(np.eye(3), m), m)


def test_gemm_scalar():
    assert gemm(np.array([[2.0]]), np.array([[3.0]]))[0, 0] == 6.0


def test_gemm_against_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 4))
    ref = np.zeros((5, 4))
    for i in range(5):
        for j in range(4):
            for k in range(7):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_array_equal(gemm_reference(a, b), ref)


def test_gemm_mismatch():
    with pytest.raises(GeometryError):
        gemm(np.ones((2, 3)), np.ones((4, 2)))
    with pytest.raises(PrecisionError):
        gemm(np.ones((2, 2), np.float32), np.ones((2, 2)))


def test_gemm_variants_agree():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((20, 300)), rng.standard_normal((300, 9))
    np.testing.assert_allclose(gemm_tiled(a, b, 64), gemm_reference(a, b), rtol=0, atol=1e-12)
    with gemm_mode("tiled", 32):
        np.testing.assert_allclose(gemm(a, b), a @ b, atol=1e-12)


def test_max_abs_diff():
    t = seeded_random((1, 2, 2, 2), 0)
    assert max_abs_diff(t, t) == 0.0
    assert max_abs_diff(np.zeros((2, 2)), np.ones((2, 2))) == 1.0
    u = seeded_random((1, 2, 2, 2), 1)
    assert max_abs_diff(t, u) == max(abs(float(p) - float(q)) for p, q in zip(t.ravel(), u.ravel()))


@pytest.mark.parametrize("precision", [32, 64])
def test_tensor_roundtrip(precision):
    t = seeded_random((2, 3, 4, 5), 9, precision)
    back = tensor_from_bytes(tensor_to_bytes(t))
    assert back.dtype == t.dtype and np.array_equal(back, t)
    buf = io.BytesIO()
    write_tensor(buf, t)
    buf.seek(0)
    assert np.array_equal(read_tensor(buf), t)


def test_tensor_bad_blob():
    blob = tensor_to_bytes(zeros((1, 1, 1, 1)))
    with pytest.raises(FormatError):
        tensor_from_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(FormatError):
        tensor_from_bytes(blob[:-2])
