import numpy as np
import pytest

from fdot.continuity import (
    CG,
    ContinuityProjector,
    ContinuityRhs,
    IntervalCoupling,
    continuity_residual,
    interior_adjoint,
    interior_divergence,
    project_continuity,
    solve_poisson,
)
from fdot.grid import (
    COLLOCATED,
    STAGGERED,
    Grid,
    TransportState,
    field_dot,
    state_dot,
)


def two_bump_marginals(grid):
    x = grid.cell_centers(0)
    mu = np.exp(-((x - 0.3) ** 2) / 0.01)
    nu = np.exp(-((x - 0.7) ** 2) / 0.01)
    if grid.d == 2:
        mu = np.outer(mu, np.ones(grid.N[1]))
        nu = np.outer(nu, np.ones(grid.N[1]))
    return mu / mu.sum(), nu / nu.sum()


def random_state(grid, layout, rng):
    x = TransportState.zeros(grid, layout)
    x.rho[:] = rng.standard_normal(x.rho.shape)
    if layout == COLLOCATED:
        x.u[:] = rng.standard_normal(x.u.shape)
        x.m[:] = rng.standard_normal(x.m.shape)
    else:
        for a in x.m:
            a[:] = rng.standard_normal(a.shape)
    return x


class TestRhs:
    def test_marginals_enter_first_and_last_rows(self):
        g = Grid((8,), 4)
        mu, nu = two_bump_marginals(g)
        rhs = ContinuityRhs.from_marginals(mu, nu, g)
        np.testing.assert_allclose(rhs.y[0], mu / g.dt)
        np.testing.assert_allclose(rhs.y[-1], -nu / g.dt)
        assert np.all(rhs.y[1:-1] == 0.0)

    def test_rejects_shape_mismatch(self):
        g = Grid((8,), 4)
        with pytest.raises(ValueError):
            ContinuityRhs.from_marginals(np.ones(7) / 7, np.ones(8) / 8, g)

    def test_rejects_unequal_mass(self):
        g = Grid((8,), 4)
        with pytest.raises(ValueError):
            ContinuityRhs.from_marginals(np.ones(8) / 8, np.ones(8) / 4, g)


class TestPoissonSolve:
    @pytest.mark.parametrize("N,P", [((16,), 6), ((8, 10), 5)])
    @pytest.mark.parametrize("layout", [COLLOCATED, STAGGERED])
    def test_spectral_residual(self, N, P, layout):
        g = Grid(N, P)
        rng = np.random.default_rng(0)
        rhs = rng.standard_normal(g.div_shape(layout))
        rhs -= rhs.mean()
        proj = ContinuityProjector(g, layout)
        phi = proj.solve(rhs)
        back = interior_divergence(
            interior_adjoint(phi.phi, g, layout), g)
        resid = np.linalg.norm(back - rhs) / np.linalg.norm(rhs)
        assert resid <= 1e-10

    def test_cg_matches_spectral(self):
        g = Grid((12,), 5)
        rng = np.random.default_rng(1)
        rhs = rng.standard_normal(g.div_shape(COLLOCATED))
        rhs -= rhs.mean()
        phi_s = ContinuityProjector(g).solve(rhs).phi
        phi_c = ContinuityProjector(g, backend=CG, tol=1e-13).solve(rhs).phi
        assert np.linalg.norm(phi_s - phi_c) <= 1e-8 * max(np.linalg.norm(phi_s), 1.0)

    def test_rejects_incompatible_rhs(self):
        g = Grid((8,), 4)
        with pytest.raises(ValueError, match="incompatible"):
            ContinuityProjector(g).solve(np.ones(g.div_shape(COLLOCATED)))

    def test_rejects_wrong_shape(self):
        g = Grid((8,), 4)
        with pytest.raises(ValueError):
            ContinuityProjector(g).solve(np.zeros((3, 3)))

    def test_rejects_unknown_backend(self):
        with pytest.raises(ValueError):
            ContinuityProjector(Grid((8,), 4), backend="lu")

    def test_module_level_wrapper(self):
        g = Grid((8,), 4)
        rng = np.random.default_rng(2)
        rhs = rng.standard_normal(g.div_shape(COLLOCATED))
        rhs -= rhs.mean()
        phi = solve_poisson(rhs, g)
        assert abs(phi.phi.mean()) <= 1e-12


class TestProjection:
    @pytest.mark.parametrize("N,P", [((16,), 6), ((6, 8), 4)])
    @pytest.mark.parametrize("layout", [COLLOCATED, STAGGERED])
    def test_lands_on_constraint_set(self, N, P, layout):
        g = Grid(N, P)
        mu, nu = two_bump_marginals(g)
        rhs = ContinuityRhs.from_marginals(mu, nu, g, layout)
        rng = np.random.default_rng(3)
        x = random_state(g, layout, rng)
        x.rho[0] = mu
        x.rho[-1] = nu
        y = ContinuityProjector(g, layout).project(x, rhs)
        assert continuity_residual(y, rhs, g) <= 1e-10
        np.testing.assert_array_equal(y.rho[0], mu)
        np.testing.assert_array_equal(y.rho[-1], nu)

    def test_idempotent(self):
        g = Grid((16,), 6)
        mu, nu = two_bump_marginals(g)
        rhs = ContinuityRhs.from_marginals(mu, nu, g)
        rng = np.random.default_rng(4)
        x = random_state(g, COLLOCATED, rng)
        x.rho[0] = mu
        x.rho[-1] = nu
        proj = ContinuityProjector(g)
        y1 = proj.project(x, rhs)
        y2 = proj.project(y1, rhs)
        assert (y2 - y1).rho == pytest.approx(0.0, abs=1e-9) or \
            np.abs((y2 - y1).rho).max() <= 1e-9
        assert np.abs((y2 - y1).m).max() <= 1e-9

    def test_nearest_point(self):
        # no point of the constraint set may be closer than the projection
        g = Grid((10,), 4)
        mu, nu = two_bump_marginals(g)
        rhs = ContinuityRhs.from_marginals(mu, nu, g)
        proj = ContinuityProjector(g)
        rng = np.random.default_rng(5)
        x = random_state(g, COLLOCATED, rng)
        x.rho[0] = mu
        x.rho[-1] = nu
        y = proj.project(x, rhs)
        d0 = np.sqrt(state_dot(x - y, x - y, g))
        for _ in range(20):
            pert = random_state(g, COLLOCATED, rng) * 0.1
            z = proj.project(y + pert, rhs)
            dz = np.sqrt(state_dot(x - z, x - z, g))
            assert dz >= d0 - 1e-10

    def test_module_level_wrapper(self):
        g = Grid((10,), 4)
        mu, nu = two_bump_marginals(g)
        rhs = ContinuityRhs.from_marginals(mu, nu, g)
        rng = np.random.default_rng(6)
        x = random_state(g, COLLOCATED, rng)
        x.rho[0] = mu
        x.rho[-1] = nu
        y = project_continuity(x, rhs, g)
        assert continuity_residual(y, rhs, g) <= 1e-10


class TestIntervalCoupling:
    def make(self, N=(10,), P=5):
        g = Grid(N, P)
        mu, nu = two_bump_marginals(g)
        return g, mu, nu, IntervalCoupling(mu, nu, g)

    def test_residual_zero_on_consistent_state(self):
        g, mu, nu, coup = self.make()
        rng = np.random.default_rng(7)
        x = TransportState.zeros(g)
        x.rho[:] = rng.standard_normal(x.rho.shape)
        x.rho[0] = mu
        x.rho[-1] = nu
        x.u[:] = 0.5 * (x.rho[:-1] + x.rho[1:])
        assert np.abs(coup.residual(x)).max() <= 1e-14

    def test_projection_satisfies_constraint(self):
        g, mu, nu, coup = self.make()
        rng = np.random.default_rng(8)
        x = random_state(g, COLLOCATED, rng)
        x.rho[0] = mu
        x.rho[-1] = nu
        y = coup.project(x)
        assert np.abs(coup.residual(y)).max() <= 1e-13
        np.testing.assert_array_equal(y.rho[0], mu)
        np.testing.assert_array_equal(y.rho[-1], nu)
        np.testing.assert_array_equal(y.m, x.m)

    def test_projection_idempotent_and_nearest(self):
        g, mu, nu, coup = self.make()
        rng = np.random.default_rng(9)
        x = random_state(g, COLLOCATED, rng)
        x.rho[0] = mu
        x.rho[-1] = nu
        y = coup.project(x)
        y2 = coup.project(y)
        assert np.abs((y2 - y).rho).max() <= 1e-13
        d0 = state_dot(x - y, x - y, g)
        for _ in range(20):
            z = coup.project(y + random_state(g, COLLOCATED, rng) * 0.1)
            dz = state_dot(x - z, x - z, g)
            assert dz >= d0 - 1e-10

    def test_adjoint_identity(self):
        g, mu, nu, _ = self.make((6, 7), 4)
        zero = np.zeros(g.N)
        coup = IntervalCoupling(zero, zero, g)  # homogeneous map
        rng = np.random.default_rng(10)
        for _ in range(10):
            x = random_state(g, COLLOCATED, rng)
            phi = rng.standard_normal((g.P, *g.N))
            lhs = field_dot(coup.residual(x), phi, g)
            rhs = state_dot(x, coup.apply_adjoint(phi), g)
            assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

    def test_rejects_bad_shapes(self):
        g = Grid((10,), 5)
        with pytest.raises(ValueError):
            IntervalCoupling(np.ones(9), np.ones(10), g)
        _, _, _, coup = self.make()
        with pytest.raises(ValueError):
            coup.apply_adjoint(np.zeros((3, 3)))
