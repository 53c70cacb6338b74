"""Truncated Taylor jets for propagating time-derivatives through pulse transforms.

A :class:`Jet` stores the normalized Taylor coefficients ``c[k] = f^(k)(t) / k!``
of a (complex) function at one or many instants.  The leading axis indexes the
coefficient order, any trailing axes are broadcast sample axes, so a whole
sampled pulse is transformed with a handful of vectorized array operations.
"""
from __future__ import annotations

from math import factorial

import numpy as np

MAX_ORDER = 3


class JetOrderError(ValueError):
    """Raised when a transform needs more derivatives than a jet carries."""


class Jet:
    """Value and time-derivatives up to ``order`` of a function.

    Parameters
    ----------
    coeffs : array_like
        Normalized Taylor coefficients, shape ``(order + 1, *samples)``.
    """

    __slots__ = ("c",)

    def __init__(self, coeffs):
        c = np.asarray(coeffs)
        if c.ndim == 0 or c.shape[0] - 1 > MAX_ORDER:
            raise JetOrderError(f"jet order must be in 0..{MAX_ORDER}")
        self.c = c

    @classmethod
    def from_derivatives(cls, *derivs) -> "Jet":
        """Build a jet from ``value, d1, d2, ...`` (plain derivatives)."""
        arrs = np.broadcast_arrays(*[np.asarray(d) for d in derivs])
        return cls(np.stack([a / factorial(k) for k, a in enumerate(arrs)]))

    @classmethod
    def constant(cls, value, order: int = MAX_ORDER) -> "Jet":
        value = np.asarray(value)
        c = np.zeros((order + 1,) + value.shape, dtype=np.result_type(value, float))
        c[0] = value
        return cls(c)

    # -- accessors ---------------------------------------------------------
    @property
    def order(self) -> int:
        return self.c.shape[0] - 1

    @property
    def value(self):
        return self.c[0]

    def deriv(self, k: int):
        """Plain ``k``-th time-derivative."""
        if k > self.order:
            raise JetOrderError(f"derivative {k} undefined for a jet of order {self.order}")
        return self.c[k] * factorial(k)

    @property
    def d1(self):
        return self.deriv(1)

    @property
    def d2(self):
        return self.deriv(2)

    @property
    def d3(self):
        return self.deriv(3)

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise JetOrderError(f"cannot raise jet order {self.order} to {order}")
        return Jet(self.c[: order + 1])

    def __getitem__(self, idx) -> "Jet":
        """Index the sample axes, keeping all coefficients."""
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.c[(slice(None),) + idx])

    def __repr__(self) -> str:
        return f"Jet(order={self.order}, shape={self.c.shape[1:]})"

    # -- arithmetic --------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            return other
        value = np.asarray(other)
        if value.ndim == 0:
            value = value.reshape((1,) * (self.c.ndim - 1))
        return Jet.constant(value, self.order)

    def _pair(self, other):
        other = self._coerce(other)
        n = min(self.order, other.order)
        return self.c[: n + 1], other.c[: n + 1], n

    def __add__(self, other):
        a, b, _ = self._pair(other)
        return Jet(a + b)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.c)

    def __sub__(self, other):
        a, b, _ = self._pair(other)
        return Jet(a - b)

    def __rsub__(self, other):
        a, b, _ = self._pair(other)
        return Jet(b - a)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * np.asarray(other))
        a, b, n = self._pair(other)
        out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
        for k in range(n + 1):
            for j in range(k + 1):
                out[k] += a[j] * b[k - j]
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c / np.asarray(other))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self._coerce(other) * self.reciprocal()

    def reciprocal(self) -> "Jet":
        b = self.c
        q = np.zeros_like(b, dtype=np.result_type(b, float))
        q[0] = 1.0 / b[0]
        for k in range(1, self.order + 1):
            acc = sum(b[j] * q[k - j] for j in range(1, k + 1))
            q[k] = -acc / b[0]
        return Jet(q)

    def conj(self) -> "Jet":
        return Jet(np.conj(self.c))

    @property
    def real(self) -> "Jet":
        return Jet(self.c.real)

    @property
    def imag(self) -> "Jet":
        return Jet(self.c.imag)

    def diff(self) -> "Jet":
        """Time-derivative; the result has one order less."""
        if self.order == 0:
            raise JetOrderError("cannot differentiate an order-0 jet")
        k = np.arange(1, self.order + 1).reshape((-1,) + (1,) * (self.c.ndim - 1))
        return Jet(self.c[1:] * k)

    def integrate(self, value0) -> "Jet":
        """Inverse of :meth:`diff` given the zeroth coefficient."""
        c = np.zeros((self.order + 2,) + self.c.shape[1:], dtype=np.result_type(self.c, value0))
        c[0] = value0
        k = np.arange(1, self.order + 2).reshape((-1,) + (1,) * (self.c.ndim - 1))
        c[1:] = self.c / k
        return Jet(c)

    def sqrt(self, root0=None) -> "Jet":
        """Square root; ``root0`` fixes the branch of the value (principal by default).

        Coefficients are left at zero where the value vanishes.
        """
        y = self.c
        s = np.zeros_like(y, dtype=np.result_type(y, float))
        s[0] = np.sqrt(y[0]) if root0 is None else root0
        nz = s[0] != 0
        den = np.where(nz, 2.0 * s[0], 1.0)
        for k in range(1, self.order + 1):
            acc = sum(s[j] * s[k - j] for j in range(1, k))
            s[k] = np.where(nz, (y[k] - acc) / den, 0.0)
        return Jet(s)

    def arctan(self) -> "Jet":
        """Arctangent of a real jet."""
        z = self.c.real
        w0 = np.arctan(z[0])
        if self.order == 0:
            return Jet(w0[None])
        zr = Jet(z)
        dw = zr.diff() / (1.0 + zr * zr).truncate(self.order - 1)
        return dw.integrate(w0)

    def abs(self) -> "Jet":
        """Modulus of a complex jet (real jet)."""
        return (self * self.conj()).real.sqrt()
