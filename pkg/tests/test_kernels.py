import numpy as np
import pytest

from maa import kernels


def naive_bilinear(img, out_h, out_w):
    """Double-loop oracle: half-pixel centers, clamped at the border."""
    c, h, w = img.shape
    out = np.zeros((c, out_h, out_w))
    for y in range(out_h):
        sy = min(max((y + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for x in range(out_w):
            sx = min(max((x + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[:, y, x] = ((1 - fy) * (1 - fx) * img[:, y0, x0]
                            + (1 - fy) * fx * img[:, y0, x1]
                            + fy * (1 - fx) * img[:, y1, x0]
                            + fy * fx * img[:, y1, x1])
    return out


@pytest.mark.parametrize("shape,out", [((3, 7, 9), (14, 18)), ((3, 8, 8), (10, 13)),
                                       ((3, 12, 12), (5, 7)), ((1, 5, 5), (5, 5))])
def test_resize_matches_naive_oracle(rng, shape, out):
    img = rng.random(shape)
    got = kernels.bilinear_resize(img, *out)
    assert np.allclose(got, naive_bilinear(img, *out), atol=1e-12)


def test_resize_identity_is_exact(rng):
    img = rng.random((3, 16, 16))
    assert np.array_equal(kernels.bilinear_resize(img, 16, 16), img)


def test_resize_preserves_constants_and_range(rng):
    img = np.full((3, 10, 10), 0.37)
    up = kernels.bilinear_resize(img, 23, 17)
    assert np.allclose(up, 0.37)
    img = rng.random((3, 9, 9))
    up = kernels.bilinear_resize(img, 31, 31)
    assert up.min() >= img.min() - 1e-12 and up.max() <= img.max() + 1e-12


def test_resize_vjp_is_adjoint(rng):
    img = rng.random((3, 7, 9))
    g = rng.random((3, 15, 20))
    lhs = float((kernels.bilinear_resize(img, 15, 20) * g).sum())
    rhs = float((img * kernels.bilinear_resize_vjp(g, 7, 9)).sum())
    assert lhs == pytest.approx(rhs, abs=1e-10)


def naive_im2col(x):
    b, c, h, w = x.shape
    cols = np.zeros((b, h * w, c * 9))
    for bi in range(b):
        for y in range(h):
            for xx in range(w):
                for ci in range(c):
                    for dy in range(3):
                        for dx in range(3):
                            sy, sx = y + dy - 1, xx + dx - 1
                            if 0 <= sy < h and 0 <= sx < w:
                                cols[bi, y * w + xx, ci * 9 + dy * 3 + dx] = x[bi, ci, sy, sx]
    return cols


def test_im2col_matches_naive_oracle(rng):
    x = rng.random((2, 3, 5, 6))
    assert np.allclose(kernels.im2col3(x), naive_im2col(x), atol=1e-12)


def test_col2im_is_adjoint_of_im2col(rng):
    x = rng.random((2, 4, 6, 5))
    cols = kernels.im2col3(x)
    g = rng.random(cols.shape)
    lhs = float((cols * g).sum())
    rhs = float((x * kernels.col2im3(g, 4, 6, 5)).sum())
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_backends_agree(rng):
    """The active backend must match the pure-numpy reference paths exactly."""
    img = rng.random((3, 11, 13))
    assert np.allclose(kernels.bilinear_resize(img, 26, 19),
                       kernels._resize_fwd_np(img, *_coords(11, 26), *_coords(13, 19)),
                       atol=1e-12)
    x = rng.random((2, 5, 7, 7))
    assert np.allclose(kernels.im2col3(x), kernels._im2col3_np(x), atol=1e-12)
    cols = rng.random(kernels.im2col3(x).shape)
    assert np.allclose(kernels.col2im3(cols, 5, 7, 7),
                       kernels._col2im3_np(cols, 5, 7, 7), atol=1e-12)


def _coords(n_in, n_out):
    return kernels._axis_coords(n_in, n_out)


def test_backend_name_reports_selection():
    assert kernels.backend_name() in ("numba", "numpy")
    assert kernels.USING_NUMBA == (kernels.backend_name() == "numba")
