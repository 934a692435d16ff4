"""Small problems with known solutions, used by tests and scripts.

``manufactured_multigoal`` builds a clamped unit square whose body force is
chosen so that

    u(x, y) = (sin(pi x) sin(pi y), 0.5 sin(2 pi x) sin(pi y))

solves linear elasticity exactly.  Two subdomain goals are attached, the
mean of u_x over [0, 1/2]^2 and of u_y over [1/2, 1]^2; on P1 meshes their
discretization errors have opposite signs, so an unweighted sum would
cancel.  Their exact values are available in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elasticity import LinearMaterial, Loads
from .fem.space import DirichletBC
from .goals import Combined, SubdomainIntegral
from .mesh import Mesh, rectangle_mesh

PI = np.pi


def manufactured_displacement(x: np.ndarray) -> np.ndarray:
    X, Y = x[..., 0], x[..., 1]
    return np.stack([np.sin(PI * X) * np.sin(PI * Y), 0.5 * np.sin(2 * PI * X) * np.sin(PI * Y)], axis=-1)


def manufactured_body_force(mu: float, lam: float):
    """B = -div sigma(u) for the manufactured displacement (constant Lame parameters)."""

    def body(x):
        X, Y = x[..., 0], x[..., 1]
        s1 = np.sin(PI * X) * np.sin(PI * Y)
        s2 = np.sin(2 * PI * X) * np.sin(PI * Y)
        lap = np.stack([-2 * PI**2 * s1, -2.5 * PI**2 * s2], axis=-1)
        grad_div = np.stack([-PI**2 * s1 + PI**2 * np.cos(2 * PI * X) * np.cos(PI * Y),
                             PI**2 * np.cos(PI * X) * np.cos(PI * Y) - 0.5 * PI**2 * s2], axis=-1)
        return -(mu * lap + (lam + mu) * grad_div)

    return body


@dataclass
class MultigoalProblem:
    mesh: Mesh
    material: LinearMaterial
    loads: Loads
    bcs: list
    goals: list
    exact: np.ndarray

    def combined(self, omegas=(1.0, 1.0)) -> Combined:
        return Combined(self.goals, tuple(omegas))

    def adapter(self, omegas=(1.0, 1.0), dual_strategy: str = "enriched_solve"):
        from .driver import LinearElasticityAdapter

        return LinearElasticityAdapter(self.material, self.bcs, self.combined(omegas), loads=self.loads,
                                       dual_strategy=dual_strategy, exact=self.exact)


def manufactured_multigoal(n: int = 8, E: float = 1.0, nu: float = 0.3) -> MultigoalProblem:
    """Clamped unit square (``n`` x ``n`` squares, ``n`` even) with two goals.

    Region tags: 2 on [0, 1/2]^2, 3 on [1/2, 1]^2, 1 elsewhere.
    """
    if n % 2:
        raise ValueError("n must be even so the goal regions are resolved")
    m = rectangle_mesh(0.0, 1.0, 0.0, 1.0, n, n, region=1)
    c = m.centroids
    region = np.where((c[:, 0] < 0.5) & (c[:, 1] < 0.5), 2, np.where((c[:, 0] > 0.5) & (c[:, 1] > 0.5), 3, 1))
    m = m.replace(region=region)
    mat = LinearMaterial({t: E for t in (1, 2, 3)}, {t: nu for t in (1, 2, 3)})
    mu = E / (2 * (1 + nu))
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    loads = Loads(body=manufactured_body_force(mu, lam))
    goals = [SubdomainIntegral((2,), (1.0, 0.0)), SubdomainIntegral((3,), (0.0, 1.0))]
    # int_0^{1/2} sin(pi t) dt = 1/pi, int_{1/2}^1 sin(2 pi t) dt = -1/pi, int_{1/2}^1 sin(pi t) dt = 1/pi
    exact = np.array([1.0 / PI**2, 0.5 * (-1.0 / PI) * (1.0 / PI)])
    bcs = [DirichletBC(t) for t in (1, 2, 3, 4)]
    return MultigoalProblem(m, mat, loads, bcs, goals, exact)
