import numpy as np
import pytest

from dwr_adapt.fem import DirichletBC, Space, solve, stiffness_matrix
from dwr_adapt.fem.assembly import load_vector
from dwr_adapt.fsi_toy import (DegenerateCoefficientError, FluidIntegral, FsiDomain, FsiProblem, InterfaceFlux,
                               fsi_adjoint, fsi_dwr, lift, smooth_bump)
from dwr_adapt.geometry import two_subdomain_square
from dwr_adapt.hyperelastic import NewtonConfig
from dwr_adapt.mesh import dorfler_mark, uniform_refine

LOAD = smooth_bump((0.5, 0.5), 0.3, (4.0, 2.0))


def problem(n=6, degree=1, coupled=True, amplitude=1.0, load=LOAD):
    return FsiProblem(two_subdomain_square(n), degree, load, amplitude, coupled)


def solved(pb):
    return pb.newton_solve(None, NewtonConfig(abs_tol=1e-14, rel_tol=1e-11)).x


def test_partition_and_interface():
    m = two_subdomain_square(4)
    dom = FsiDomain(m)
    assert dom.fluid_cells.sum() == dom.solid_cells.sum() == 16
    eids = dom.interface_edges
    assert len(eids) == 4
    mids = m.vertices[m.edges[eids]].mean(axis=1)
    np.testing.assert_allclose(mids[:, 1], 0.5)
    with pytest.raises(ValueError):
        FsiDomain(m.replace(region=np.full(m.num_cells, 3)))


def test_dof_sets():
    pb = problem(4)
    # v lives on fluid nodes off the interface and outer boundary; u on all interior nodes
    assert pb.nv == 2 * 3 * 1 and pb.nu == 2 * 3 * 3
    assert pb.num_dofs == pb.nv + pb.nu


def test_zero_state_residual_without_load():
    pb = problem(load=None)
    np.testing.assert_array_equal(pb.residual(np.zeros(pb.num_dofs)), 0.0)
    np.testing.assert_array_equal(solved(pb), 0.0)


def test_u_block_is_a_poisson_solve_when_v_vanishes():
    """With v = 0 the phi equations reduce to (grad u, grad phi)_S = (f, phi)."""
    pb = problem()
    x = np.zeros(pb.num_dofs)
    r = pb.residual(x)
    f = pb.load_vector()
    np.testing.assert_allclose(r[: pb.nu], -f[pb.u_dofs])
    np.testing.assert_allclose(r[pb.nu:], 0.0)


def test_uncoupled_v_block_is_vector_poisson():
    """coupled=False: the v-rows of the phi equations are the fluid Laplacian."""
    pb = problem(coupled=False)
    K = pb.tangent(np.zeros(pb.num_dofs))
    V = Space(pb.mesh, 1, 1)
    L = stiffness_matrix(V, cells=pb.domain.fluid_cells)
    nodes = pb.v_dofs[0::2] // 2
    Kvv = K[: pb.nu][:, : pb.nv].toarray()
    rows = np.searchsorted(pb.u_dofs, pb.v_dofs)
    np.testing.assert_allclose(Kvv[rows[0::2]][:, 0::2], L[nodes][:, nodes].toarray(), atol=1e-14)


@pytest.mark.parametrize("degree", [1, 2])
def test_tangent_matches_differences(degree, rng):
    pb = problem(4, degree)
    x = 0.01 * rng.normal(size=pb.num_dofs)
    K = pb.tangent(x)
    h = 1e-6
    for _ in range(5):
        d = rng.normal(size=pb.num_dofs)
        fd = (pb.residual(x + h * d) - pb.residual(x - h * d)) / (2 * h)
        assert np.linalg.norm(fd - K @ d) <= 1e-6 * np.linalg.norm(K @ d)


def test_adjoint_matrix_is_transpose(rng):
    for degree in (1, 2):
        pb = problem(4, degree)
        x = 0.01 * rng.normal(size=pb.num_dofs)
        K = pb.tangent(x)
        diff = abs(pb.adjoint_matrix(x) - K.T.tocsr())
        assert (diff.max() if diff.nnz else 0.0) <= 1e-12 * abs(K).max()


def test_newton_converges_quadratically():
    pb = problem(8, amplitude=1.0)
    res = pb.newton_solve(None, NewtonConfig(abs_tol=1e-14, rel_tol=1e-12))
    n = res.history[0]
    pairs = [(a, b) for a, b in zip(n[1:-1], n[2:]) if a < 0.5 * n[0] and b > 1e-12]
    assert pairs, n
    a, b = pairs[-1]
    assert np.log(b / n[0]) / np.log(a / n[0]) >= 1.7, n


@pytest.mark.parametrize("goal", [FluidIntegral((1.0, 0.0)), InterfaceFlux(1)])
def test_adjoint_gradient_matches_differences(goal):
    pb = problem(6, amplitude=1.0)
    x = solved(pb)
    y = pb.adjoint_solve(x, goal)
    grad = -y @ pb.load_derivative()
    h = 1e-5
    jp = goal.evaluate(problem(6, amplitude=1.0 + h), solved(problem(6, amplitude=1.0 + h)))
    jm = goal.evaluate(problem(6, amplitude=1.0 - h), solved(problem(6, amplitude=1.0 - h)))
    fd = (jp - jm) / (2 * h)
    assert abs(grad - fd) <= 1e-4 * abs(fd)


def test_zero_goal_gives_zero_adjoint_and_estimate():
    pb = problem()
    x = solved(pb)
    rep = fsi_dwr(pb, x, FluidIntegral((0.0, 0.0)))
    assert rep.eta_global == 0.0 and rep.sum_local == 0.0


def test_one_way_limit():
    """Without coupling the u-equations do not see v: u solves the solid/fluid Laplace problems."""
    pb = problem(coupled=False)
    x = solved(pb)
    pb_c = problem(coupled=True, amplitude=1e-4)
    x_c = solved(pb_c) / 1e-4
    # small loads: the coupled solution tends to the uncoupled one
    np.testing.assert_allclose(x_c, x, rtol=0, atol=1e-3 * np.abs(x).max())


def test_degenerate_coefficient_raises():
    pb = problem(4)
    x = np.zeros(pb.num_dofs)
    x[pb.nv:] = 10.0 * np.random.default_rng(0).normal(size=pb.nu)
    with pytest.raises(DegenerateCoefficientError):
        pb.residual(x)


def test_estimator_effectivity_and_conservativity():
    goal = FluidIntegral((1.0, 0.0))
    pb = problem(8)
    x = solved(pb)
    rep = fsi_dwr(pb, x, goal)
    ref_mesh = uniform_refine(uniform_refine(pb.mesh))
    ref = problem(8)
    ref = FsiProblem(ref_mesh, 1, LOAD)
    j_ref = goal.evaluate(ref, solved(ref))
    err = j_ref - rep.J_value
    assert 0.3 <= rep.eta_global / abs(err) <= 3.0
    assert rep.eta_global <= rep.sum_local
    assert abs(rep.signed_local.sum() - rep.extras["residual_of_weight"]) <= 1e-9 * rep.sum_local


def test_low_order_adjoint_gives_no_signal():
    goal = FluidIntegral((1.0, 0.0))
    pb = problem(8)
    x = solved(pb)
    y = pb.adjoint_solve(x, goal)  # adjoint in V_h
    assert abs(pb.residual(x) @ y) <= 1e-10 * np.abs(y).max()
    z, w = fsi_adjoint(pb, x, goal)
    assert np.abs(w.coefficients[np.setdiff1d(np.arange(pb.space.num_dofs), pb.v_dofs)]).max() == 0.0


def test_interface_goal_marks_near_interface():
    goal = InterfaceFlux(1)
    pb = problem(8)
    rep = fsi_dwr(pb, solved(pb), goal)
    marked = dorfler_mark(rep.eta_local, 0.5)
    y = pb.mesh.centroids[marked, 1]
    assert np.mean(np.abs(y - 0.5) <= 2 / 8) >= 0.5


def test_lift_preserves_fields():
    pb = problem(4)
    x = np.random.default_rng(3).normal(size=pb.num_dofs)
    hi = FsiProblem(pb.domain, 2, LOAD)
    xh = lift(pb, x, hi)
    pts = np.random.default_rng(4).uniform(0.05, 0.95, (20, 2))
    for a, b in zip(pb.split(x), hi.split(xh)):
        np.testing.assert_allclose(a(pts), b(pts), atol=1e-12)
