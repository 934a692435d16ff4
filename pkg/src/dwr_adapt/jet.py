"""Second-order forward-mode automatic differentiation on batches of points.

A :class:`Jet` carries, for ``N`` evaluation points and ``n`` independent
variables, the value ``v`` (N,), gradient ``g`` (N, n) and Hessian
``h`` (N, n, n).  Arithmetic propagates all three exactly, so energy
densities written with ordinary operators yield stresses (gradients) and
consistent tangents (Hessians) without hand derivation.
"""
from __future__ import annotations

import numpy as np


class Jet:
    __array_priority__ = 1000

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h=None):
        self.v = v
        self.g = g
        self.h = h

    # -- construction ------------------------------------------------------
    @staticmethod
    def variables(values: np.ndarray, second_order: bool = True) -> list["Jet"]:
        """Independent variables from ``values`` of shape (N, n)."""
        values = np.asarray(values, dtype=float)
        N, n = values.shape
        out = []
        for i in range(n):
            g = np.zeros((N, n))
            g[:, i] = 1.0
            h = np.zeros((N, n, n)) if second_order else None
            out.append(Jet(values[:, i].copy(), g, h))
        return out

    def _const(self, c) -> "Jet":
        c = np.broadcast_to(np.asarray(c, dtype=float), self.v.shape)
        h = None if self.h is None else np.zeros_like(self.h)
        return Jet(c.copy(), np.zeros_like(self.g), h)

    def _wrap(self, other) -> "Jet":
        return other if isinstance(other, Jet) else self._const(other)

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.v + other, self.g, self.h)
        h = None if self.h is None or other.h is None else self.h + other.h
        return Jet(self.v + other.v, self.g + other.g, h)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.g, None if self.h is None else -self.h)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            c = np.asarray(other, dtype=float)
            return Jet(self.v * c, self.g * c[..., None] if c.ndim else self.g * c,
                       None if self.h is None else (self.h * c[..., None, None] if c.ndim else self.h * c))
        v = self.v * other.v
        g = self.g * other.v[:, None] + other.g * self.v[:, None]
        h = None
        if self.h is not None and other.h is not None:
            outer = self.g[:, :, None] * other.g[:, None, :]
            h = (self.h * other.v[:, None, None] + other.h * self.v[:, None, None]
                 + outer + np.swapaxes(outer, 1, 2))
        return Jet(v, g, h)

    __rmul__ = __mul__

    def _chain(self, f0, f1, f2):
        g = self.g * f1[:, None]
        h = None
        if self.h is not None:
            h = self.h * f1[:, None, None] + f2[:, None, None] * self.g[:, :, None] * self.g[:, None, :]
        return Jet(f0, g, h)

    def reciprocal(self):
        inv = 1.0 / self.v
        return self._chain(inv, -inv * inv, 2.0 * inv ** 3)

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / np.asarray(other, dtype=float))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, Jet):
            raise TypeError("Jet exponents must be constants")
        p = float(p)
        if p == 2.0:
            return self * self
        v = self.v
        return self._chain(v ** p, p * v ** (p - 1), p * (p - 1) * v ** (p - 2))

    def log(self):
        v = self.v
        return self._chain(np.log(v), 1.0 / v, -1.0 / (v * v))

    def exp(self):
        e = np.exp(self.v)
        return self._chain(e, e, e)

    def sqrt(self):
        return self ** 0.5

    def __repr__(self):
        return f"Jet(N={self.v.shape[0]}, n={self.g.shape[1]}, second_order={self.h is not None})"


def log(x):
    return x.log() if isinstance(x, Jet) else np.log(x)


def exp(x):
    return x.exp() if isinstance(x, Jet) else np.exp(x)
