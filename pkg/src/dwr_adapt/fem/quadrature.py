"""Quadrature rules on the reference triangle and the reference interval."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_ORDER = 12


@lru_cache(maxsize=None)
def triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Points (n, 2) and weights (n,) on the triangle (0,0),(1,0),(0,1).

    The rule integrates every polynomial of total degree ``order`` exactly;
    the weights sum to 1/2.  Orders 1 and 2 use the classical centroid and
    three-point rules, higher orders a collapsed (conical) Gauss product.
    """
    if not isinstance(order, (int, np.integer)) or order < 0 or order > MAX_ORDER:
        raise ValueError(f"unsupported quadrature order {order!r} (0..{MAX_ORDER})")
    if order <= 1:
        pts, wts = np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
    elif order == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        wts = np.full(3, 1 / 6)
    else:
        n = int(np.ceil((order + 1) / 2))
        # x-direction carries the collapse factor (1 - x) -> Gauss-Jacobi(1, 0)
        xj, wj = roots_jacobi(n, 1.0, 0.0)
        xg, wg = roots_legendre(n)
        u = 0.5 * (xj + 1.0)
        t = 0.5 * (xg + 1.0)
        U, T = np.meshgrid(u, t, indexing="ij")
        pts = np.stack([U.ravel(), ((1.0 - U) * T).ravel()], axis=1)
        wts = (np.outer(wj, wg) * 0.125).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


@lru_cache(maxsize=None)
def interval_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points in [0, 1] and weights summing to 1."""
    if order < 0 or order > 4 * MAX_ORDER:
        raise ValueError(f"unsupported quadrature order {order!r}")
    n = max(1, int(np.ceil((order + 1) / 2)))
    x, w = roots_legendre(n)
    s, ws = 0.5 * (x + 1.0), 0.5 * w
    s.setflags(write=False)
    ws.setflags(write=False)
    return s, ws
