import numpy as np
import pytest
from hypothesis import given, strategies as st

from ipunfold.linops import (CirculantOperator, GradientOperators, ShapeError,
                             gaussian_kernel, gradient_operator, identity,
                             kernel_from_spec, load_kernel, save_kernel,
                             uniform_kernel)
from oracles import periodic_conv_direct


def test_identity_kernel_is_identity(rng):
    x = rng.standard_normal((2, 5, 7))
    np.testing.assert_allclose(identity((5, 7)).apply(x), x, atol=1e-14)


def test_constant_image_scales_by_kernel_sum():
    k = gaussian_kernel(1.6, 9) * 1.7
    op = CirculantOperator(k, (12, 12))
    np.testing.assert_allclose(op.apply(np.full((12, 12), 0.3)), 0.3 * k.sum(), rtol=1e-12)


def test_matches_direct_periodic_convolution(rng):
    x = rng.standard_normal((8, 8))
    k = rng.standard_normal((3, 3))
    op = CirculantOperator(k, x.shape)
    np.testing.assert_allclose(op.apply(x), periodic_conv_direct(x, k), atol=1e-12)


@given(st.integers(1, 16), st.integers(1, 16), st.sampled_from([1, 3, 5]),
       st.sampled_from([1, 3]), st.integers(0, 2 ** 32 - 1))
def test_spectrum_application_equals_direct_sum(h, w, kh, kw, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((h, w))
    k = rng.standard_normal((kh, kw))
    op = CirculantOperator(k, (h, w))
    ref = periodic_conv_direct(x, k)
    assert np.linalg.norm(op.apply(x) - ref) <= 1e-10 * max(1.0, np.linalg.norm(ref))


def test_kernel_larger_than_image_wraps(rng):
    x = rng.standard_normal((3, 3))
    k = rng.standard_normal((7, 5))
    op = CirculantOperator(k, (3, 3))
    np.testing.assert_allclose(op.apply(x), periodic_conv_direct(x, k), atol=1e-12)


def test_symmetric_kernel_is_self_adjoint(rng):
    op = CirculantOperator(gaussian_kernel(1.2, 7), (10, 9))
    x = rng.standard_normal((10, 9))
    np.testing.assert_allclose(op.apply_adjoint(x), op.apply(x), atol=1e-12)


def test_adjoint_inner_product_identity(rng):
    op = CirculantOperator(rng.standard_normal((5, 3)), (9, 11))
    for _ in range(100):
        x = rng.standard_normal((9, 11))
        z = rng.standard_normal((9, 11))
        lhs = np.sum(op.apply(x) * z)
        rhs = np.sum(x * op.apply_adjoint(z))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_scalar_kernel_two():
    x = np.arange(12.0).reshape(3, 4)
    np.testing.assert_allclose(CirculantOperator([[2.0]], (3, 4)).apply_adjoint(x), 2 * x)


def test_eigenvalues_identity_and_nonnegative(rng):
    np.testing.assert_allclose(identity((4, 6)).eigenvalues_normal(), 1.0)
    op = CirculantOperator(rng.standard_normal((3, 5)), (7, 8))
    assert op.eigenvalues_normal().min() >= 0


def test_gradient_ring_spectrum():
    N = 9
    op = gradient_operator((1, N), "horizontal")
    p = np.arange(N)
    np.testing.assert_allclose(op.eigenvalues_normal()[0], 2 - 2 * np.cos(2 * np.pi * p / N),
                               atol=1e-12)


def test_normal_eigenvalues_diagonalize_normal_operator(rng):
    op = CirculantOperator(rng.standard_normal((3, 3)), (8, 6))
    x = rng.standard_normal((8, 6))
    lhs = op.eigenvalues_normal() * np.fft.fft2(x)
    rhs = np.fft.fft2(op.apply_adjoint(op.apply(x)))
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)
    np.testing.assert_allclose(op.apply_normal(x), op.apply_adjoint(op.apply(x)), atol=1e-12)


def test_gradients_are_forward_circular_differences(rng):
    x = rng.standard_normal((4, 5))
    g = GradientOperators(x.shape)
    np.testing.assert_allclose(g.vertical.apply(x), np.roll(x, -1, axis=0) - x, atol=1e-12)
    np.testing.assert_allclose(g.horizontal.apply(x), np.roll(x, -1, axis=1) - x, atol=1e-12)
    rows_equal = np.tile(rng.standard_normal((1, 5)), (4, 1))
    np.testing.assert_allclose(g.vertical.apply(rows_equal), 0, atol=1e-12)


def test_gradient_on_single_pixel_is_zero():
    g = GradientOperators((1, 1))
    assert g.vertical.apply(np.ones((1, 1)))[0, 0] == pytest.approx(0, abs=1e-15)


def test_shape_mismatch_and_even_kernel_rejected():
    op = identity((4, 4))
    with pytest.raises(ShapeError):
        op.apply(np.zeros((4, 5)))
    with pytest.raises(ValueError):
        CirculantOperator(np.ones((2, 3)), (4, 4))


def test_channels_processed_independently(rng):
    op = CirculantOperator(gaussian_kernel(1.0, 5), (6, 6))
    x = rng.standard_normal((3, 6, 6))
    out = op.apply(x)
    for c in range(3):
        np.testing.assert_allclose(out[c], op.apply(x[c]), atol=1e-14)


def test_kernel_file_round_trip_and_normalization(tmp_path):
    k = np.arange(1.0, 10.0).reshape(3, 3)
    path = tmp_path / "k.txt"
    save_kernel(path, k)
    np.testing.assert_array_equal(load_kernel(path, normalize=False), k)
    np.testing.assert_allclose(load_kernel(path).sum(), 1.0)
    np.testing.assert_allclose(kernel_from_spec(str(path)), k / k.sum())


def test_kernel_file_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("2 2\n1 2 3\n")
    with pytest.raises(ValueError):
        load_kernel(bad)
    zero = tmp_path / "zero.txt"
    zero.write_text("1 3\n1 0 -1\n")
    with pytest.raises(ValueError):
        load_kernel(zero)
    with pytest.raises(ValueError):
        kernel_from_spec("nonsense")


def test_kernel_specs():
    assert kernel_from_spec("gaussian:1.6").shape == (25, 25)
    assert kernel_from_spec("gaussian:1.0:7").shape == (7, 7)
    np.testing.assert_allclose(kernel_from_spec("uniform:5"), uniform_kernel(5))
    np.testing.assert_array_equal(kernel_from_spec("identity"), [[1.0]])
