"""
Tests for the upwind jet systems, the Newton solver and the node update.
"""
import itertools

import numpy as np
import pytest

from python_afmm.analysis import stencil_study
from python_afmm.grid import JetField, StateGrid
from python_afmm.models import GridSpec
from python_afmm.systems import (NeighborData, UpdateCase, newton_solve, residual_grad, residual_hess, select_case,
                                 solve_eikonal_quadratic, solve_gradient, solve_hessian, update_node,
                                 validate_gradient)
from python_afmm.util import MaxIterationsError, SingularJacobianError

NORMAL = np.array([0.6, 0.8])
OFFSET = 0.1


@pytest.fixture
def plane_field():
    """Exact jet of the plane 0.6 x + 0.8 y = 0.1 on [-2, 2]^2 with h = 0.5."""
    grid = GridSpec.cube(2, 9)
    field = JetField.empty(grid)
    pts = grid.points().reshape(grid.shape + (2,))
    field.phi[:] = pts @ NORMAL - OFFSET
    field.psi[:] = NORMAL
    field.hess[:] = 0.0
    return grid, field


def random_neighbours(rng, axes):
    """Neighbour jets along ``axes`` of a 2D node, zero rows elsewhere."""
    nb = NeighborData(available=np.zeros(2, dtype=bool), sigma=np.zeros(2), phi=np.zeros(2),
                      psi=np.zeros((2, 2)), hess=np.zeros((2, 3)))
    for axis in axes:
        nb.available[axis] = True
        nb.sigma[axis] = rng.choice([-1.0, 1.0])
        nb.phi[axis] = rng.uniform(-1.0, 1.0)
        nb.psi[axis] = rng.normal(size=2)
        nb.hess[axis] = rng.normal(size=3)
    return nb


def mirrored(nb):
    """The same neighbour jets with x and y exchanged."""
    return NeighborData(available=nb.available[::-1].copy(), sigma=nb.sigma[::-1].copy(), phi=nb.phi[::-1].copy(),
                        psi=nb.psi[::-1, ::-1].copy(), hess=nb.hess[::-1][:, [1, 0, 2]].copy())


def case_on(axes, nb):
    return UpdateCase(2, axes, tuple(int(nb.sigma[a]) for a in axes), tuple((a, 0) for a in axes))


class TestNewtonSolve:
    """Test the damped Newton iteration."""

    def test_square_root(self):
        """Test the documented example."""
        result = newton_solve(lambda v: v ** 2 - 4, lambda v: np.array([[2 * v[0]]]), [3.0], 1e-12)
        np.testing.assert_allclose(result.x, [2.0])
        assert result.success

    def test_already_converged(self):
        """Test that a root as guess returns without iterating."""
        result = newton_solve(lambda v: v - 1.0, lambda v: np.eye(1), [1.0], 1e-12)
        assert result.nit == 0

    def test_iteration_budget(self):
        """Test that an exhausted budget raises."""
        with pytest.raises(MaxIterationsError):
            newton_solve(lambda v: v ** 2 - 4, lambda v: np.array([[2 * v[0]]]), [3.0], 1e-12, max_iter=1)

    def test_singular_jacobian(self):
        """Test that a singular Jacobian raises."""
        with pytest.raises(SingularJacobianError):
            newton_solve(lambda v: v ** 2 + 1.0, lambda v: np.zeros((1, 1)), [1.0], 1e-12)

    def test_bad_arguments(self):
        """Test tolerance and guess validation."""
        with pytest.raises(ValueError):
            newton_solve(lambda v: v, lambda v: np.eye(1), [1.0], 0.0)
        with pytest.raises(ValueError):
            newton_solve(lambda v: v, lambda v: np.eye(1), [np.nan], 1e-12)


class TestEikonalQuadratic:
    """Test the classical upwind update."""

    def test_documented_example(self):
        """Test two equal neighbours."""
        assert solve_eikonal_quadratic([0.0, 0.0], 0.1) == pytest.approx(0.1 / np.sqrt(2.0))

    def test_one_neighbour(self):
        """Test that a single neighbour gives a + h."""
        assert solve_eikonal_quadratic([0.3], 0.1) == pytest.approx(0.4)

    def test_far_neighbour_is_dropped(self):
        """Test that a neighbour above the one-sided root does not enter."""
        assert solve_eikonal_quadratic([0.0, 0.5], 0.1) == pytest.approx(0.1)

    def test_empty(self):
        """Test that no neighbours is an error."""
        with pytest.raises(ValueError):
            solve_eikonal_quadratic([], 0.1)


class TestUpdateCase:
    """Test the case description."""

    def test_validation(self):
        """Test that empty or mismatched cases are rejected."""
        with pytest.raises(ValueError):
            UpdateCase(2, (), (), ())
        with pytest.raises(ValueError):
            UpdateCase(2, (0, 1), (1,), ((1, 0), (0, 1)))

    def test_restrict(self):
        """Test reducing a 3D case to one axis."""
        case = UpdateCase(3, (0, 1, 2), (1, -1, 1), ((1, 0, 0), (0, -1, 0), (0, 0, 1)))
        reduced = case.restrict((1,))
        assert reduced.axes == (1,) and reduced.signs == (-1,) and reduced.name == "y"
        assert case.name == "xyz"


class TestGradientUpdate:
    """Test value and gradient updates on exact plane data."""

    def test_exact_data_has_zero_residual(self, plane_field):
        """Test that the exact plane jet satisfies the two-axis system."""
        grid, field = plane_field
        case = UpdateCase(2, (0, 1), (-1, -1), ((4, 5), (5, 4)))
        nb = NeighborData.gather(case, field)
        unknowns = np.concatenate([[field.phi[5, 5]], NORMAL])
        np.testing.assert_allclose(residual_grad(case, unknowns, nb, grid.h), 0.0, atol=1e-14)

    def test_two_axis_update(self, plane_field):
        """Test that a node with two upwind neighbours reproduces the plane."""
        grid, field = plane_field
        states = StateGrid(grid)
        for node in [(4, 5), (5, 4)]:
            states.accept(node)
        exact = field.phi[5, 5]
        field.phi[5, 5] = np.nan
        candidate = update_node((5, 5), field, states, grid)
        assert candidate.report.tier == 0
        assert candidate.case.axes == (0, 1)
        assert candidate.phi == pytest.approx(exact, abs=1e-10)
        np.testing.assert_allclose(candidate.psi, NORMAL, atol=1e-10)

    def test_single_axis_update(self, plane_field):
        """Test the one-neighbour system, where psi_y is not differenced."""
        grid, field = plane_field
        states = StateGrid(grid)
        states.accept((4, 5))
        candidate = update_node((5, 5), field, states, grid)
        assert candidate.case.axes == (0,)
        assert candidate.phi == pytest.approx(0.6, abs=1e-10)
        np.testing.assert_allclose(candidate.psi, NORMAL, atol=1e-10)

    def test_no_accepted_neighbour(self, plane_field):
        """Test that updating an isolated node is an error."""
        grid, field = plane_field
        with pytest.raises(ValueError):
            update_node((5, 5), field, StateGrid(grid), grid)

    def test_select_case_prefers_smaller_magnitude(self, plane_field):
        """Test that the upwind neighbour along an axis is the one nearer the interface."""
        grid, field = plane_field
        states = StateGrid(grid)
        for node in [(4, 5), (6, 5)]:
            states.accept(node)
        case = select_case((5, 5), field, states, grid)
        assert case.axes == (0,) and case.neighbors == ((4, 5),)

    def test_validity(self, plane_field):
        """Test the three validity checks."""
        _, field = plane_field
        case = UpdateCase(2, (0,), (-1,), ((4, 5),))
        assert validate_gradient(0.6, NORMAL, case, field)
        assert not validate_gradient(0.1, NORMAL, case, field)
        assert not validate_gradient(-0.6, NORMAL, case, field)
        assert not validate_gradient(0.6, -NORMAL, case, field)
        assert not validate_gradient(np.nan, NORMAL, case, field)


class TestHessianUpdate:
    """Test the Hessian replay of one node."""

    def test_plane_hessian_is_zero(self, plane_field):
        """Test that zero neighbour Hessians give a zero Hessian."""
        grid, field = plane_field
        case = UpdateCase(2, (0, 1), (-1, -1), ((4, 5), (5, 4)))
        hess, report = solve_hessian((5, 5), case, field, grid)
        np.testing.assert_allclose(hess, 0.0, atol=1e-14)
        assert report.converged and report.tier == 0

    def test_circle_hessian(self):
        """Test that exact circle neighbours give a Hessian close to the exact one."""
        grid = GridSpec.cube(2, 201)
        field = JetField.empty(grid)
        node, nbs = (150, 140), ((149, 140), (150, 139))
        for nd in (node,) + nbs:
            x = grid.coords(nd)
            r = np.linalg.norm(x)
            n = x / r
            field.phi[nd] = r - 1.0
            field.psi[nd] = n
            field.hess[nd] = [(1 - n[0] ** 2) / r, (1 - n[1] ** 2) / r, -n[0] * n[1] / r]
        exact = field.hess[node].copy()
        case = UpdateCase(2, (0, 1), (-1, -1), nbs)
        hess, report = solve_hessian(node, case, field, grid)
        assert report.converged
        np.testing.assert_allclose(hess, exact, atol=0.05)

    @pytest.mark.parametrize("seed", range(100))
    def test_rejects_the_spurious_root(self, seed):
        """Test that the solve lands on the root near the neighbours, never the one near -1/h."""
        rng = np.random.default_rng(3000 + seed)
        h = 10.0 ** rng.uniform(-3.0, np.log10(0.2))
        grid = GridSpec.cube(2, 4, 0.0, 3.0 * h)
        axes = [(0,), (1,), (0, 1)][seed % 3]
        field = JetField.empty(grid)
        angle = rng.uniform(0.2, np.pi / 2 - 0.2)
        field.psi[1, 1] = [np.cos(angle), np.sin(angle)]
        nbs = tuple((0, 1) if a == 0 else (1, 0) for a in axes)
        for nd in nbs:
            field.phi[nd] = 0.0
            field.psi[nd] = field.psi[1, 1]
            field.hess[nd] = rng.uniform(-0.5, 0.5, size=3)
        case = UpdateCase(2, axes, (-1,) * len(axes), nbs)
        average = np.mean([field.hess[nd] for nd in nbs], axis=0)
        hess, report = solve_hessian((1, 1), case, field, grid)
        assert report.converged
        assert np.max(np.abs(hess - average)) < 0.1 / h

    @pytest.mark.parametrize("h", [1e-3, 0.05, 0.2])
    def test_spurious_root_exists(self, h):
        """Test that -1/h in the xx slot also zeroes the single-axis residual."""
        case = UpdateCase(2, (0,), (-1,), ((0, 1),))
        nb = NeighborData(available=np.array([True, False]), sigma=np.array([-1.0, 0.0]), phi=np.zeros(2),
                          psi=np.array([[1.0, 0.0], [0.0, 0.0]]), hess=np.zeros((2, 3)))
        spurious = np.array([-1.0 / h, 0.0, 0.0])
        np.testing.assert_allclose(residual_hess(case, spurious, np.array([1.0, 0.0]), nb, h), 0.0,
                                   atol=1e-9 / h ** 2)


class TestMirrorSymmetry:
    """Test that exchanging x and y permutes the residuals and nothing else."""

    @pytest.mark.parametrize("axes", [(0,), (1,), (0, 1)])
    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_residuals(self, axes, seed):
        """Test the value and gradient equations."""
        rng = np.random.default_rng(seed)
        nb = random_neighbours(rng, axes)
        h = rng.uniform(0.01, 0.5)
        unknowns = rng.normal(size=3)
        swapped_axes = tuple(sorted(1 - a for a in axes))
        res = residual_grad(case_on(axes, nb), unknowns, nb, h)
        swapped_nb = mirrored(nb)
        swapped = residual_grad(case_on(swapped_axes, swapped_nb), unknowns[[0, 2, 1]], swapped_nb, h)
        np.testing.assert_allclose(swapped[[0, 2, 1]], res, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("axes", [(0,), (1,), (0, 1)])
    @pytest.mark.parametrize("seed", range(10))
    def test_hessian_residuals(self, axes, seed):
        """Test the Hessian equations."""
        rng = np.random.default_rng(100 + seed)
        nb = random_neighbours(rng, axes)
        h = rng.uniform(0.01, 0.5)
        hess, psi = rng.normal(size=3), rng.normal(size=2)
        swapped_axes = tuple(sorted(1 - a for a in axes))
        res = residual_hess(case_on(axes, nb), hess, psi, nb, h)
        swapped_nb = mirrored(nb)
        swapped = residual_hess(case_on(swapped_axes, swapped_nb), hess[[1, 0, 2]], psi[::-1].copy(), swapped_nb, h)
        np.testing.assert_allclose(swapped[[1, 0, 2]], res, rtol=1e-12, atol=1e-12)


class TestPlaneCases3D:
    """Test every 3D neighbour subset on exact plane data."""

    @pytest.mark.parametrize("signs", [(1, 1, 1), (-1, 1, -1)])
    @pytest.mark.parametrize("axes", [c for k in (1, 2, 3) for c in itertools.combinations(range(3), k)])
    def test_subset_reproduces_the_plane(self, axes, signs):
        """Test that the solve returns the exact value and normal."""
        normal = np.array([0.48, 0.6, 0.64]) * np.array(signs)
        grid = GridSpec.cube(3, 9)
        field = JetField.empty(grid)
        pts = grid.points().reshape(grid.shape + (3,))
        field.phi[:] = pts @ normal + 1.0
        field.psi[:] = normal
        field.hess[:] = 0.0
        node = (4, 4, 4)
        nb_signs, nbs = [], []
        for a in axes:
            step = -int(np.sign(normal[a]))
            nd = list(node)
            nd[a] += step
            nb_signs.append(step)
            nbs.append(tuple(nd))
        case = UpdateCase(3, axes, tuple(nb_signs), tuple(nbs))
        phi, psi, result = solve_gradient(case, field, grid.h)
        assert result.success
        assert phi == pytest.approx(field.phi[node], abs=1e-9)
        np.testing.assert_allclose(psi, normal, atol=1e-9)


class TestDiagonalStencilSolve:
    """Test the two-axis solve against the closed-form diagonal stencil."""

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_closed_form(self, seed):
        """Test value and gradient at a random (x, h, r0)."""
        rng = np.random.default_rng(500 + seed)
        r0 = rng.uniform(0.5, 2.0)
        x = rng.uniform(0.01, 0.65 * r0)
        h = rng.uniform(1e-3, 0.3)
        field = JetField(phi=np.zeros((2, 2)), psi=np.zeros((2, 2, 2)), hess=np.zeros((2, 2, 3)))
        for nd, point in (((1, 0), [x + h, x]), ((0, 1), [x, x + h])):
            point = np.array(point)
            field.phi[nd] = np.linalg.norm(point) - r0
            field.psi[nd] = point / np.linalg.norm(point)
        case = UpdateCase(2, (0, 1), (1, 1), ((1, 0), (0, 1)))
        phi, psi, _ = solve_gradient(case, field, h, base_tol=1e-13)
        closed = stencil_study(x, h, r0)
        assert phi == pytest.approx(closed.phi, abs=1e-10)
        np.testing.assert_allclose(psi, [closed.psi, closed.psi], atol=1e-10)
