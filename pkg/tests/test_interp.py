"""
Tests for the bicubic and tricubic cell patches.
"""
import numpy as np
import pytest

from python_afmm.analysis import fit_order
from python_afmm.interp import (cross_derivative_fields, evaluate,
                                evaluate_grad, fit_bicubic, fit_cell, fit_tricubic)
from python_afmm.models import GridSpec


def cubic_2d(p):
    x, y = p[..., 0], p[..., 1]
    return x ** 3 - 2 * x ** 2 * y + y ** 3 + x * y + 1


def cubic_2d_jet(p):
    x, y = p[..., 0], p[..., 1]
    grad = np.stack([3 * x ** 2 - 4 * x * y + y, -2 * x ** 2 + 3 * y ** 2 + x], axis=-1)
    return cubic_2d(p), grad, -4 * x + 1


def cubic_3d(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    return x ** 3 + x * y * z + y ** 2 * z - 2 * z ** 3 + 1


def cubic_3d_jet(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    grad = np.stack([3 * x ** 2 + y * z, x * z + 2 * y * z, x * y + y ** 2 - 6 * z ** 2], axis=-1)
    cross = np.stack([z, y, x + 2 * y, np.ones_like(x)], axis=-1)
    return cubic_3d(p), grad, cross


class TestBicubic:
    """Test the 2D Hermite patch."""

    def test_linear_data(self):
        """Test that data sampled from x + y reproduces x + y."""
        patch = fit_bicubic([0.0, 1.0, 1.0, 2.0], [[1.0, 1.0]] * 4, [0.0] * 4, 1.0)
        assert evaluate(patch, [0.3, 0.4]) == pytest.approx(0.7)
        np.testing.assert_allclose(evaluate_grad(patch, [0.9, 0.2]), [1.0, 1.0])

    def test_reproduces_tensor_cubic(self, rng):
        """Test exact reproduction of a bicubic polynomial, inside and outside the cell."""
        h, origin = 0.25, np.array([0.5, -0.25])
        corners = origin + h * np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
        phi, psi, phixy = cubic_2d_jet(corners)
        patch = fit_bicubic(phi, psi, phixy, h, origin)
        pts = origin + h * rng.uniform(-0.5, 1.5, size=(20, 2))
        np.testing.assert_allclose(patch.value(pts), cubic_2d(pts), atol=1e-12)
        np.testing.assert_allclose(patch.gradient(pts), cubic_2d_jet(pts)[1], atol=1e-10)
        hess = patch.hessian(pts)
        np.testing.assert_allclose(hess[:, 0, 1], -4 * pts[:, 0] + 1, atol=1e-8)
        np.testing.assert_allclose(hess, np.transpose(hess, (0, 2, 1)))

    def test_single_point_shapes(self):
        """Test that one point gives a float, a (2,) gradient and a (2, 2) Hessian."""
        patch = fit_bicubic([0.0, 1.0, 1.0, 2.0], [[1.0, 1.0]] * 4, [0.0] * 4, 1.0)
        assert isinstance(patch.value([0.5, 0.5]), float)
        assert patch.gradient([0.5, 0.5]).shape == (2,)
        assert patch.hessian([0.5, 0.5]).shape == (2, 2)

    def test_gradient_matches_differences(self, rng):
        """Test evaluate_grad against centered differences of evaluate on random corner data."""
        h, origin = 0.3, np.array([-0.2, 0.4])
        patch = fit_bicubic(rng.normal(size=4), rng.normal(size=(4, 2)), rng.normal(size=4), h, origin)
        step = 1e-6
        for point in origin + h * rng.uniform(0.0, 1.0, size=(10, 2)):
            fd = [(evaluate(patch, point + step * e) - evaluate(patch, point - step * e)) / (2 * step)
                  for e in np.eye(2)]
            np.testing.assert_allclose(evaluate_grad(patch, point), fd, rtol=1e-6, atol=1e-6)

    def test_fourth_order_inside_the_cell(self):
        """Test that a patch fitted to sin(x) sin(y) converges with h^4 inside its cell."""
        origin = np.array([0.3, 0.2])
        local = np.array([[u, v] for u in (0.25, 0.5, 0.75) for v in (0.25, 0.5, 0.75)])
        samples = []
        for h in (0.2, 0.1, 0.05, 0.025):
            corners = origin + h * np.array([[0, 0], [1, 0], [0, 1], [1, 1]])
            x, y = corners[:, 0], corners[:, 1]
            psi = np.stack([np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)], axis=-1)
            patch = fit_bicubic(np.sin(x) * np.sin(y), psi, np.cos(x) * np.cos(y), h, origin)
            pts = origin + h * local
            err = np.abs(patch.value(pts) - np.sin(pts[:, 0]) * np.sin(pts[:, 1]))
            samples.append((h, float(err.max())))
        assert fit_order(samples) >= 3.7


class TestTricubic:
    """Test the 3D Hermite patch."""

    def test_reproduces_tensor_cubic(self, rng):
        """Test exact reproduction of a tricubic polynomial."""
        h, origin = 0.5, np.array([-0.5, 0.0, 0.5])
        offsets = np.array([[(k >> a) & 1 for a in range(3)] for k in range(8)])
        phi, psi, cross = cubic_3d_jet(origin + h * offsets)
        patch = fit_tricubic(phi, psi, cross, h, origin)
        pts = origin + h * rng.uniform(-0.25, 1.25, size=(20, 3))
        np.testing.assert_allclose(patch.value(pts), cubic_3d(pts), atol=1e-11)
        np.testing.assert_allclose(patch.gradient(pts), cubic_3d_jet(pts)[1], atol=1e-9)

    def test_gradient_matches_differences(self, rng):
        """Test the tricubic gradient against centered differences of the value."""
        h, origin = 0.4, np.array([0.1, -0.3, 0.2])
        patch = fit_tricubic(rng.normal(size=8), rng.normal(size=(8, 3)), rng.normal(size=(8, 4)), h, origin)
        step = 1e-6
        for point in origin + h * rng.uniform(0.0, 1.0, size=(10, 3)):
            fd = [(evaluate(patch, point + step * e) - evaluate(patch, point - step * e)) / (2 * step)
                  for e in np.eye(3)]
            np.testing.assert_allclose(evaluate_grad(patch, point), fd, rtol=1e-6, atol=1e-6)


class TestCrossDerivatives:
    """Test mixed derivatives differenced from the gradient field."""

    def test_xy_everywhere(self, small_grid2d):
        """Test that phi = x*y gives phi_xy = 1 at interior and boundary nodes."""
        x, y = small_grid2d.mesh()
        np.testing.assert_allclose(cross_derivative_fields(np.stack([y, x], axis=-1), small_grid2d.h), 1.0)

    def test_x2y2(self, small_grid2d):
        """Test phi = x^2 y^2, whose gradient is quadratic per axis and differenced exactly."""
        x, y = small_grid2d.mesh()
        psi = np.stack([2 * x * y ** 2, 2 * x ** 2 * y], axis=-1)
        cross = cross_derivative_fields(psi, small_grid2d.h)
        assert cross.shape == small_grid2d.shape + (1,)
        np.testing.assert_allclose(cross[..., 0], 4 * x * y, atol=1e-12)

    def test_xyz(self, small_grid3d):
        """Test the pairwise and triple mixed derivatives of phi = x*y*z + x*y."""
        x, y, z = small_grid3d.mesh()
        psi = np.stack([y * z + y, x * z + x, x * y], axis=-1)
        whole = cross_derivative_fields(psi, small_grid3d.h)
        assert whole.shape == small_grid3d.shape + (4,)
        for node in [(0, 4, 8), (4, 4, 4), (8, 0, 2)]:
            xyz = small_grid3d.coords(node)
            np.testing.assert_allclose(whole[node], (xyz[2] + 1.0, xyz[1], xyz[0], 1.0), atol=1e-12)

    def test_x2yz(self, small_grid3d):
        """Test phi = x^2 y z on every node, boundary included."""
        x, y, z = small_grid3d.mesh()
        psi = np.stack([2 * x * y * z, x ** 2 * z, x ** 2 * y], axis=-1)
        whole = cross_derivative_fields(psi, small_grid3d.h)
        expected = np.stack([2 * x * z, 2 * x * y, x ** 2, 2 * x], axis=-1)
        np.testing.assert_allclose(whole, expected, atol=1e-11)

    def test_second_order(self):
        """Test that the error on sin(x) sin(y) drops with h^2, boundary nodes included."""
        samples = []
        for n in (11, 21, 41, 81):
            grid = GridSpec.cube(2, n, -1.0, 1.0)
            x, y = grid.mesh()
            psi = np.stack([np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)], axis=-1)
            err = np.abs(cross_derivative_fields(psi, grid.h)[..., 0] - np.cos(x) * np.cos(y))
            samples.append((grid.h, float(err.max())))
        assert fit_order(samples) == pytest.approx(2.0, abs=0.2)


class TestFitCell:
    """Test fitting patches from whole-field arrays."""

    def test_cell_patch_matches_field(self):
        """Test that a fitted cell reproduces a bicubic field sampled on the grid."""
        grid = GridSpec.cube(2, 9)
        pts = grid.points().reshape(grid.shape + (2,))
        phi, psi, phixy = cubic_2d_jet(pts)
        patch = fit_cell((3, 5), grid, phi, psi, phixy[..., None])
        point = grid.coords((3, 5)) + 0.3 * grid.h
        assert patch.value(point) == pytest.approx(float(cubic_2d(point)), abs=1e-12)
