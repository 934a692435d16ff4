import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from dwr_adapt.fem import (CellQuadrature, DirichletBC, Field, SingularMatrixError, Space, build_space, condense,
                           embed, extrapolate, interpolate, load_vector, quadrature, solve, stiffness_matrix,
                           transfer)
from dwr_adapt.mesh import rectangle_mesh, refine, uniform_refine, unit_square

# -- quadrature ------------------------------------------------------------------


def monomial_integral(a, b):
    """int over the reference triangle of x^a y^b = a! b! / (a + b + 2)!"""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)


def test_centroid_rule():
    pts, wts = quadrature(1)
    np.testing.assert_allclose(pts, [[1 / 3, 1 / 3]])
    np.testing.assert_allclose(wts, [0.5])


def test_three_point_rule_quadratics():
    pts, wts = quadrature(2)
    assert len(wts) == 3
    for a, b in [(2, 0), (1, 1), (0, 2)]:
        assert abs(wts @ (pts[:, 0] ** a * pts[:, 1] ** b) - monomial_integral(a, b)) < 1e-15


@pytest.mark.parametrize("order", range(0, 13))
def test_rule_exactness(order):
    pts, wts = quadrature(order)
    assert abs(wts.sum() - 0.5) < 1e-14
    for a in range(order + 1):
        for b in range(order + 1 - a):
            exact = monomial_integral(a, b)
            assert abs(wts @ (pts[:, 0] ** a * pts[:, 1] ** b) - exact) <= 1e-13 * max(1.0, exact)


def test_unsupported_order():
    with pytest.raises(ValueError):
        quadrature(99)


# -- spaces ----------------------------------------------------------------------
def test_dof_counts(square2):
    assert build_space(square2, 1).num_dofs == 4
    assert build_space(square2, 2, 2).num_dofs == 18  # (NV + NE) * 2 = (4 + 5) * 2
    assert build_space(square2, 3).num_dofs == 4 + 2 * 5 + 2


def test_dof_count_formula(artery_mesh):
    m = artery_mesh
    for k in (1, 2, 3):
        V = Space(m, k, 2)
        assert V.num_dofs == 2 * (m.num_vertices + (k - 1) * m.num_edges + (k - 1) * (k - 2) // 2 * m.num_cells)


def test_dirichlet_only_on_tagged_boundary(square2):
    V = build_space(square2, 2, 1, {4: 1.5})
    fixed, vals = V.dirichlet()
    assert np.all(np.abs(V.node_coords[fixed, 0]) < 1e-14)
    np.testing.assert_allclose(vals, 1.5)
    assert len(fixed) == 3


def test_unknown_dirichlet_tag(square2):
    with pytest.raises(KeyError):
        build_space(square2, 1, 1, {99: 0.0})


# -- solver ----------------------------------------------------------------------
def test_solve_identity():
    np.testing.assert_array_equal(solve(sp.identity(3, format="csr"), [1.0, 0, 0]), [1.0, 0, 0])


def test_solve_2x2():
    np.testing.assert_allclose(solve(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), [3.0, 3.0]), [1.0, 1.0])


def test_solve_singular_reports_dof():
    A = sp.csr_matrix(np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 1.0]]))
    with pytest.raises(SingularMatrixError, match="dof 1"):
        solve(A, np.ones(3))
    with pytest.raises(SingularMatrixError):
        solve(sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])), np.ones(2))


def test_poisson_matches_dense_oracle():
    m = uniform_refine(unit_square(2))
    V = build_space(m, 2, 1, {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0})
    K = stiffness_matrix(V)
    f = load_vector(V, lambda x: np.sin(np.pi * x[..., 0]) * x[..., 1])
    system = condense(K, f, *V.dirichlet())
    x = solve(system)
    dense = np.linalg.solve(system.matrix.toarray(), system.rhs)
    np.testing.assert_allclose(x[system.free], dense, rtol=1e-10, atol=1e-14)
    r = system.matrix @ x[system.free] - system.rhs
    assert np.linalg.norm(r) <= 1e-10 * (sp.linalg.norm(system.matrix) * np.linalg.norm(x) + np.linalg.norm(system.rhs))


def test_stiffness_symmetric(artery_mesh):
    for k in (1, 2, 3):
        K = stiffness_matrix(Space(artery_mesh, k))
        assert abs(K - K.T).max() <= 1e-12 * abs(K).max()


def test_condensed_system_square_and_symmetric(square2):
    V = build_space(uniform_refine(square2), 2, 1, {1: 1.0})
    s = condense(stiffness_matrix(V), np.zeros(V.num_dofs), *V.dirichlet())
    n = V.num_dofs - len(V.fixed_dofs)
    assert s.matrix.shape == (n, n)
    assert abs(s.matrix - s.matrix.T).max() <= 1e-12 * abs(s.matrix).max()


def test_solution_holds_dirichlet_values():
    m = unit_square(3)
    V = build_space(m, 2, 1, {1: lambda x: x[:, 0] ** 2})
    x = solve(condense(stiffness_matrix(V), np.zeros(V.num_dofs), *V.dirichlet()))
    fixed, vals = V.dirichlet()
    np.testing.assert_array_equal(x[fixed], vals)


# -- transfer operators ------------------------------------------------------------
def test_interpolate_reproduces_p1_in_p2():
    m = unit_square(3)
    V1, V2 = Space(m, 1), Space(m, 2)
    f = Field(V1, V1.interpolate_function(lambda x: 2 * x[:, 0] - x[:, 1] + 0.3))
    back = interpolate(embed(f, V2), V1)
    np.testing.assert_allclose(back.coefficients, f.coefficients, atol=1e-14)


def test_interpolate_x_squared_vertex_values():
    m = rectangle_mesh(0, 1, 0, 0.5, 1, 1)
    V2, V1 = Space(m, 2), Space(m, 1)
    g = interpolate(Field(V2, V2.interpolate_function(lambda x: x[:, 0] ** 2)), V1)
    for vid, (x, _) in enumerate(m.vertices):
        assert abs(g.coefficients[vid] - x**2) < 1e-14


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_interpolation_projection_property(seed):
    rng = np.random.default_rng(seed)
    m = unit_square(2)
    V1, V2 = Space(m, 1, 2), Space(m, 2, 2)
    v = Field(V1, rng.normal(size=V1.num_dofs))
    v_hat = embed(v, V2)
    assert np.linalg.norm(v_hat.coefficients - embed(interpolate(v_hat, V1), V2).coefficients) < 1e-13
    w = Field(V2, rng.normal(size=V2.num_dofs))
    assert np.linalg.norm(w.coefficients - embed(interpolate(w, V1), V2).coefficients) > 1e-3


def test_extrapolate_zero():
    m = unit_square(4)
    z = extrapolate(Field(Space(m, 1, 2)), Space(m, 2, 2))
    assert np.all(z.coefficients == 0)


@pytest.mark.parametrize("k", [1, 2])
def test_extrapolate_reproduces_polynomials(k):
    m = unit_square(6)
    V, W = Space(m, k), Space(m, k + 1)

    def p(x):
        return 1 + x[:, 0] - 2 * x[:, 1] + 3 * x[:, 0] ** (k + 1) - x[:, 0] * x[:, 1] ** k

    f = Field(V, V.interpolate_function(p))
    g = extrapolate(f, W)
    np.testing.assert_allclose(g.coefficients, W.interpolate_function(p), atol=1e-10)


def test_extrapolate_differs_from_embedding():
    m = unit_square(6)
    V, W = Space(m, 1), Space(m, 2)
    f = Field(V, V.interpolate_function(lambda x: np.sin(3 * x[:, 0]) * np.exp(x[:, 1])))
    g = extrapolate(f, W)
    diff = g.coefficients - embed(f, W).coefficients
    assert np.abs(diff).max() > 1e-3
    assert np.abs(g.coefficients - embed(interpolate(g, V), W).coefficients).max() > 1e-3


def test_extrapolate_keeps_dirichlet_values():
    m = unit_square(4)
    V = Space(m, 1, 1, [DirichletBC(1, 0.0)])
    W = V.enriched()
    f = Field(V, V.interpolate_function(lambda x: x[:, 1] * (1 + x[:, 0] ** 2)))
    g = extrapolate(f, W)
    assert np.all(g.coefficients[W.fixed_dofs] == 0.0)


def test_transfer_exact_for_nested_meshes():
    m = unit_square(3)
    r = refine(m, [0, 4, 7])
    V, W = Space(m, 2), Space(r, 2)
    f = Field(V, V.interpolate_function(lambda x: x[:, 0] ** 2 - x[:, 0] * x[:, 1]))
    np.testing.assert_allclose(transfer(f, W).coefficients,
                               W.interpolate_function(lambda x: x[:, 0] ** 2 - x[:, 0] * x[:, 1]), atol=1e-14)


def test_cell_quadrature_integrates_area(artery_mesh):
    q = CellQuadrature(artery_mesh, 3)
    assert abs(q.dx.sum() - artery_mesh.areas.sum()) < 1e-12 * artery_mesh.areas.sum()
