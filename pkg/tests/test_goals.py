import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwr_adapt.elasticity import LinearMaterial
from dwr_adapt.fem import DirichletBC, Field, Space
from dwr_adapt.goals import (BoundaryFlux, Combined, PointValue, SubdomainIntegral, derivative_rhs,
                             resolve_signs, sign_weights)
from dwr_adapt.hyperelastic import HyperMaterial
from dwr_adapt.mesh import unit_square

MOONEY = HyperMaterial("mooney", {"C10": 0.3, "C01": 0.1}, kappa=5.0)


@pytest.fixture
def V2():
    m = unit_square(3)
    return Space(m.replace(region=np.where(m.centroids[:, 0] < 0.5, 1, 2)), 2, 2)


def test_subdomain_integral_of_linear_field():
    V = Space(unit_square(2), 1, 2)
    u = Field(V, V.interpolate_function(lambda x: np.stack([x[..., 0], 0 * x[..., 0]], -1)))
    assert SubdomainIntegral(None, (1.0, 0.0)).evaluate(u) == pytest.approx(0.5, abs=1e-14)
    assert SubdomainIntegral(None, (0.0, 1.0)).evaluate(u) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("goal", [SubdomainIntegral((1,), (1.0, 2.0)), PointValue((0.3, 0.6), 1),
                                  BoundaryFlux(2, (1.0, 0.0)), BoundaryFlux(3)])
def test_zero_displacement_gives_zero(goal, V2):
    assert goal.evaluate(Field(V2), None, MOONEY) == 0.0


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_linear_goals_are_linear(a, b, seed):
    V = Space(unit_square(2).replace(region=np.array([1, 2] * 4)), 2, 2)
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=(2, V.num_dofs))
    for g in (SubdomainIntegral((2,), (0.5, -1.0)), PointValue((0.7, 0.2), 0)):
        lhs = g.evaluate(Field(V, a * u + b * v))
        rhs = a * g.evaluate(Field(V, u)) + b * g.evaluate(Field(V, v))
        assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)) * np.abs([u, v]).max())
        # derivative is the representing vector
        d = derivative_rhs(g, Field(V))
        assert d @ u == pytest.approx(g.evaluate(Field(V, u)), abs=1e-12 * np.abs(u).max())


def test_point_value_at_vertex(V2):
    x = np.arange(V2.num_dofs, dtype=float)
    u = Field(V2, x)
    k = int(np.argmin(np.linalg.norm(V2.mesh.vertices - [1 / 3, 2 / 3], axis=1)))
    assert PointValue(tuple(V2.mesh.vertices[k]), 1).evaluate(u) == pytest.approx(u(V2.mesh.vertices[k][None])[0, 1])


def test_boundary_flux_uniaxial_linear():
    """u = (e x, 0): sigma_xx = (lam + 2 mu) e on the right edge (tag 2)."""
    E, nu, e = 3.0, 0.25, 1e-3
    mat = LinearMaterial({0: E}, {0: nu})
    mu, lam = E / (2 * (1 + nu)), E * nu / ((1 + nu) * (1 - 2 * nu))
    V = Space(unit_square(2), 1, 2)
    u = Field(V, V.interpolate_function(lambda x: np.stack([e * x[..., 0], 0 * x[..., 0]], -1)))
    assert BoundaryFlux(2).evaluate(u, None, mat) == pytest.approx((lam + 2 * mu) * e, rel=1e-12)
    assert BoundaryFlux(2, (0.0, 1.0), thickness=2.0).evaluate(u, None, mat) == pytest.approx(0.0, abs=1e-15)
    assert BoundaryFlux(3).evaluate(u, None, mat) == pytest.approx(lam * e, rel=1e-12)


@pytest.mark.parametrize("direction", [None, (0.3, -1.0)])
def test_boundary_flux_derivative_matches_differences(direction, rng):
    V = Space(unit_square(3), 2, 2)
    x = 0.02 * rng.normal(size=V.num_dofs)
    g = BoundaryFlux(3, direction, thickness=1.75)
    d = g.derivative(Field(V, x), None, MOONEY)
    h = 1e-6
    for _ in range(5):
        v = rng.normal(size=V.num_dofs)
        fd = (g.evaluate(Field(V, x + h * v), None, MOONEY) - g.evaluate(Field(V, x - h * v), None, MOONEY)) / (2 * h)
        assert abs(fd - d @ v) <= 1e-6 * max(1.0, abs(d @ v))


def test_boundary_flux_mixed_pressure_derivative(rng):
    mat = HyperMaterial("mooney", {"C10": 0.3, "C01": 0.1}, incompressible=True)
    m = unit_square(2)
    V, Q = Space(m, 2, 2), Space(m, 1, 1)
    x = 0.02 * rng.normal(size=V.num_dofs)
    p = rng.normal(size=Q.num_dofs) * 0.1
    g = BoundaryFlux(1)
    d = g.derivative(Field(V, x), Field(Q, p), mat)
    assert d.shape == (V.num_dofs + Q.num_dofs,)
    q = rng.normal(size=Q.num_dofs)
    h = 1e-6
    fd = (g.evaluate(Field(V, x), Field(Q, p + h * q), mat) - g.evaluate(Field(V, x), Field(Q, p - h * q), mat)) / (2 * h)
    assert fd == pytest.approx(d[V.num_dofs:] @ q, rel=1e-6, abs=1e-10)


def test_combined_is_weighted_sum(V2, rng):
    u = Field(V2, rng.normal(size=V2.num_dofs))
    gs = [SubdomainIntegral((1,), (1.0, 0.0)), PointValue((0.5, 0.5), 1)]
    c = Combined(gs, (2.0, 3.0), np.array([0.5, -4.0]))
    assert c.evaluate(u) == pytest.approx(0.5 * gs[0].evaluate(u) - 4.0 * gs[1].evaluate(u))
    np.testing.assert_allclose(c.derivative(u), 0.5 * gs[0].derivative(u) - 4.0 * gs[1].derivative(u))
    assert Combined(gs, (2.0, 3.0)).weights.tolist() == [2.0, 3.0]
    assert c.linear and not Combined([BoundaryFlux(1)], (1.0,)).linear


def test_combined_validation():
    g = SubdomainIntegral()
    with pytest.raises(ValueError):
        Combined([g, g], (1.0,))
    with pytest.raises(ValueError):
        Combined([g], (-1.0,))
    with pytest.raises(TypeError):
        Combined([Combined([g], (1.0,))], (1.0,))


def test_goal_errors(V2):
    with pytest.raises(KeyError):
        SubdomainIntegral((7,)).evaluate(Field(V2))
    with pytest.raises(KeyError):
        BoundaryFlux(9).evaluate(Field(V2), None, MOONEY)
    with pytest.raises(ValueError):
        BoundaryFlux(1).evaluate(Field(V2))


def test_sign_weights_rules():
    w = sign_weights([0.0, 2.0], [1.0, 1.0], [1.0, 3.0])
    np.testing.assert_allclose(w, [1.0, -1.5])  # zero value: denominator replaced by 1
    with pytest.warns(UserWarning):
        w = sign_weights([1.0, 2.0], [1.0, 2.5], [1.0, 1.0])
    np.testing.assert_allclose(w, [0.0, 0.5])


@settings(max_examples=100, deadline=None)
@given(jh=st.lists(st.floats(0.1, 10), min_size=2, max_size=5), seed=st.integers(0, 2**16))
def test_sign_weighted_errors_never_cancel(jh, seed):
    rng = np.random.default_rng(seed)
    jh = np.array(jh) * rng.choice([-1, 1], len(jh))
    delta = rng.uniform(0.01, 1, len(jh)) * rng.choice([-1, 1], len(jh))
    omegas = rng.uniform(0.1, 2, len(jh))
    w = sign_weights(jh, jh + delta, omegas)
    combined_error = w @ delta
    np.testing.assert_allclose(combined_error, np.sum(omegas * np.abs(delta) / np.abs(jh)))
    assert combined_error >= np.max(omegas * np.abs(delta) / np.abs(jh))


def test_opposite_errors_cancel_without_signs():
    """Two goals with errors +e and -e: plain sum sees nothing, sign weights see both."""
    V = Space(unit_square(2).replace(region=np.array([1, 2] * 4)), 1, 2)
    u_h = Field(V, np.zeros(V.num_dofs))
    x = np.zeros(V.num_dofs)
    x[0::2] = 1.0
    u_fine = Field(V, x)
    goals = [SubdomainIntegral(None, (1.0, 0.0)), SubdomainIntegral(None, (-1.0, 0.0))]
    plain = Combined(goals, (1.0, 1.0))
    assert plain.evaluate(u_fine) - plain.evaluate(u_h) == pytest.approx(0.0, abs=1e-15)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w = resolve_signs(goals, (1.0, 1.0), u_h, u_fine)
    np.testing.assert_allclose(w, [1.0, -1.0])
    signed = Combined(goals, (1.0, 1.0), w)
    assert signed.evaluate(u_fine) - signed.evaluate(u_h) == pytest.approx(2.0)
