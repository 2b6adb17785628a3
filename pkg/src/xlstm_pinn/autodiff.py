"""Truncated-Taylor jets for input-space derivatives, nested inside JAX reverse mode.

A :class:`Jet` carries the normalized Taylor coefficients ``f^(k)(0) / k!`` of
a quantity along an input direction.  Every primitive the networks use has a
propagation rule here, so coordinate derivatives up to fourth order are exact
to rounding.  The rules are written in ``jax.numpy``, so the whole computation
stays traceable and :func:`param_grad` differentiates any scalar built from
jets with respect to the parameters.

A jet may also carry several directions at once (``ndir``).  Coefficient 0 is
shared; every higher coefficient then has a leading direction axis.  This
evaluates the expensive value path once for ``u_xx`` and ``u_yy`` together.

The module-level functions (:func:`tanh`, :func:`sigmoid`, ...) accept plain
arrays as well as jets, so model code runs unchanged in both modes.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

MAX_ORDER = 4
DIVISION_GUARD = np.finfo(np.float64).tiny


class JetDomainError(ValueError):
    """Raised when a jet operation leaves its domain (e.g. division by ~0)."""


class TapeError(RuntimeError):
    """Raised when a recorded loss cannot be differentiated (not a scalar)."""


def _concrete(x):
    """Return ``x`` as a numpy array, or None while tracing under jit/grad."""
    if isinstance(x, jax.core.Tracer):
        return None
    return np.asarray(x)


def _zero():
    return jnp.zeros((), dtype=jnp.float64)


@jax.tree_util.register_pytree_node_class
class Jet:
    """Value plus Taylor coefficients up to a fixed order.

    ``coeffs[0]`` has the value shape; ``coeffs[k]`` (k >= 1) has the value
    shape, prefixed by a direction axis when ``ndir`` is set.  Higher
    coefficients of constants are stored as 0-d zeros and broadcast lazily.
    """

    __slots__ = ("coeffs", "ndir")
    # Reject numpy ufuncs (np.sin(jet) etc.): only the rules below are supported.
    __array_ufunc__ = None

    def __init__(self, coeffs, ndir: int | None = None):
        if not isinstance(coeffs, tuple):
            coeffs = tuple(jnp.asarray(c, dtype=jnp.float64) for c in coeffs)
        self.coeffs = coeffs
        self.ndir = ndir

    def tree_flatten(self):
        return self.coeffs, self.ndir

    @classmethod
    def tree_unflatten(cls, ndir, children):
        return cls(tuple(children), ndir)

    @classmethod
    def constant(cls, value, order: int, ndir: int | None = None) -> "Jet":
        value = jnp.asarray(value, dtype=jnp.float64)
        return cls((value,) + tuple(_zero() for _ in range(order)), ndir)

    @classmethod
    def seed(cls, point, direction, order: int) -> "Jet":
        """Identity jet at ``point`` moving along one ``direction``.

        ``direction`` is an axis index, a vector, or one vector per point.
        """
        point = jnp.asarray(point, dtype=jnp.float64)
        tangent = jnp.broadcast_to(_direction_vector(direction, point.shape[-1]), point.shape)
        return cls(_seed_coeffs(point, tangent, order))

    @classmethod
    def seed_many(cls, point, directions: Sequence, order: int) -> "Jet":
        """Identity jet carrying several directions with a shared value."""
        point = jnp.asarray(point, dtype=jnp.float64)
        tangents = jnp.stack([jnp.broadcast_to(_direction_vector(d, point.shape[-1]), point.shape)
                              for d in directions])
        return cls(_seed_coeffs(point, tangents, order), len(directions))

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def value(self):
        return self.coeffs[0]

    @property
    def shape(self):
        return self.coeffs[0].shape

    def derivative(self, k: int):
        """k-th derivative; carries a leading direction axis for multi-direction jets."""
        if k == 0:
            return self.coeffs[0]
        lead = () if self.ndir is None else (self.ndir,)
        return jnp.broadcast_to(self.coeffs[k], lead + self.shape) * float(math.factorial(k))

    def derivatives(self):
        if self.ndir is not None:
            raise ValueError("derivatives() stacks single-direction jets only; use derivative(k)")
        return jnp.stack([self.derivative(k) for k in range(self.order + 1)])

    def __repr__(self):
        return f"Jet(order={self.order}, shape={tuple(self.shape)}, ndir={self.ndir})"

    def __array__(self, dtype=None, copy=None):
        raise TypeError("Jet cannot be converted to an array; use .value or .derivative(k)")

    def _map(self, fn):
        """Apply an index/reduction to every coefficient, skipping the direction axis."""
        out = [fn(self.coeffs[0], False)]
        for c in self.coeffs[1:]:
            out.append(c if c.ndim == 0 else fn(c, self.ndir is not None))
        return Jet(tuple(out), self.ndir)

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return self._map(lambda c, lead: c[((slice(None),) if lead else ()) + idx])

    def __pow__(self, other):
        raise TypeError("power is not a supported jet primitive")

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.order != self.order:
                raise ValueError(f"jet order mismatch: {self.order} vs {other.order}")
            if other.ndir != self.ndir and None not in (other.ndir, self.ndir):
                raise ValueError("jets carry different direction counts")
            return other
        return Jet.constant(other, self.order, self.ndir)

    def _ndir_with(self, other):
        return self.ndir if self.ndir is not None else getattr(other, "ndir", None)

    def __add__(self, other):
        if isinstance(other, Jet):
            other = self._lift(other)
            return Jet(tuple(a + b for a, b in zip(self.coeffs, other.coeffs)), self._ndir_with(other))
        other = jnp.asarray(other)
        value = self.coeffs[0] + other
        if value.shape == self.shape:
            return Jet((value,) + self.coeffs[1:], self.ndir)
        # Adding a larger constant broadcasts the derivative coefficients too.
        lead = () if self.ndir is None else (self.ndir,)
        pad = (1,) * (value.ndim - len(self.shape))
        rest = tuple(
            c if c.ndim == 0 else jnp.broadcast_to(c.reshape(lead + pad + self.shape), lead + value.shape)
            for c in self.coeffs[1:]
        )
        return Jet((value,) + rest, self.ndir)

    __radd__ = __add__

    def __neg__(self):
        return Jet(tuple(-c for c in self.coeffs), self.ndir)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            other = jnp.asarray(other)
            return Jet(tuple(c * other for c in self.coeffs), self.ndir)
        other = self._lift(other)
        a, b = self.coeffs, other.coeffs
        out = tuple(sum(a[j] * b[k - j] for j in range(k + 1)) for k in range(self.order + 1))
        return Jet(out, self._ndir_with(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            other = jnp.asarray(other)
            return Jet(tuple(c / other for c in self.coeffs), self.ndir)
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(Jet.constant(other, self.order, self.ndir), self)

    def __matmul__(self, matrix):
        if isinstance(matrix, Jet):
            raise TypeError("jet @ jet is not a supported primitive")
        return Jet(tuple(c if c.ndim == 0 else c @ matrix for c in self.coeffs), self.ndir)

    def sum(self, axis: int = -1, keepdims: bool = False):
        if axis >= 0:
            raise ValueError("jet reductions take negative axes")
        return self._map(lambda c, lead: jnp.sum(c, axis=axis, keepdims=keepdims))

    def mean(self, axis: int = -1, keepdims: bool = False):
        if axis >= 0:
            raise ValueError("jet reductions take negative axes")
        return self._map(lambda c, lead: jnp.mean(c, axis=axis, keepdims=keepdims))


def _seed_coeffs(point, tangent, order):
    if order == 0:
        return (point,)
    return (point, tangent) + tuple(_zero() for _ in range(order - 1))


def _direction_vector(direction, dim: int):
    if isinstance(direction, (int, np.integer)):
        if not 0 <= direction < dim:
            raise ValueError(f"direction index {direction} out of range for dimension {dim}")
        return jnp.zeros(dim, dtype=jnp.float64).at[direction].set(1.0)
    return jnp.asarray(direction, dtype=jnp.float64)


def _integrate(x: Jet, dy, y0):
    """Coefficients of y with y' = F'(x) x', given the coefficients d of F'(x).

    Uses k * y_k = sum_{j=1..k} j * x_j * d_{k-j}; ``dy(ys, m)`` returns d_m
    and may read ys[0..m].
    """
    ys = [y0]
    xs = x.coeffs
    for k in range(1, x.order + 1):
        acc = sum((j * xs[j]) * dy(ys, k - j) for j in range(1, k + 1))
        ys.append(acc / k if k > 1 else acc)
    return Jet(tuple(ys), x.ndir)


def _square_coeff(ys, m):
    return sum(ys[j] * ys[m - j] for j in range(m + 1))


def _tanh(x):
    # XLA's float64 tanh is ~10x slower than exp on CPU.  The exp form loses
    # relative accuracy near zero, where the odd series takes over.
    ax = jnp.abs(x)
    e = jnp.exp(-2.0 * ax)
    t = (1.0 - e) / (1.0 + e)
    x2 = ax * ax
    series = ax * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0))))
    return jnp.sign(x) * jnp.where(ax < 1e-2, series, t)


def tanh(x):
    if not isinstance(x, Jet):
        return _tanh(x)

    def dy(ys, m):
        return (1.0 if m == 0 else 0.0) - _square_coeff(ys, m)

    return _integrate(x, dy, _tanh(x.value))


def sigmoid(x):
    if not isinstance(x, Jet):
        return jax.nn.sigmoid(x)

    def dy(ys, m):
        return ys[m] - _square_coeff(ys, m)

    return _integrate(x, dy, jax.nn.sigmoid(x.value))


def exp(x):
    if not isinstance(x, Jet):
        return jnp.exp(x)
    return _integrate(x, lambda ys, m: ys[m], jnp.exp(x.value))


def log_sigmoid(x):
    """log(sigmoid(x)); derivative is sigmoid(-x) = 1 - sigmoid(x)."""
    if not isinstance(x, Jet):
        return jax.nn.log_sigmoid(x)
    s = sigmoid(x).coeffs

    def dy(ys, m):
        return (1.0 if m == 0 else 0.0) - s[m]

    return _integrate(x, dy, jax.nn.log_sigmoid(x.value))


def sqrt(x):
    if not isinstance(x, Jet):
        return jnp.sqrt(x)
    xs = x.coeffs
    ys = [jnp.sqrt(xs[0])]
    for k in range(1, x.order + 1):
        cross = sum(ys[j] * ys[k - j] for j in range(1, k)) if k > 1 else 0.0
        ys.append((xs[k] - cross) / (2.0 * ys[0]))
    return Jet(tuple(ys), x.ndir)


def divide(a, b):
    if not isinstance(b, Jet):
        return a / b
    if not isinstance(a, Jet):
        a = Jet.constant(a, b.order, b.ndir)
    b0 = _concrete(b.value)
    if b0 is not None and np.any(np.abs(b0) < DIVISION_GUARD):
        raise JetDomainError("jet division by a value below the machine guard")
    qs = []
    for k in range(a.order + 1):
        acc = a.coeffs[k] - sum(b.coeffs[j] * qs[k - j] for j in range(1, k + 1)) if k else a.coeffs[0]
        qs.append(acc / b.coeffs[0])
    return Jet(tuple(qs), a._ndir_with(b))


def _select(mask, a: Jet, b: Jet) -> Jet:
    return Jet(tuple(jnp.where(mask, x, y) for x, y in zip(a.coeffs, b.coeffs)), a._ndir_with(b))


def maximum(a, b):
    """Elementwise max; ties take the left argument."""
    if not isinstance(a, Jet) and not isinstance(b, Jet):
        return jnp.where(a >= b, a, b)
    ref = a if isinstance(a, Jet) else b
    a, b = ref._lift(a), ref._lift(b)
    return _select(a.value >= b.value, a, b)


def clip(x, lo: float, hi: float):
    """Clamp to [lo, hi]; at either bound the unclamped branch is kept."""
    if not isinstance(x, Jet):
        return jnp.where(x < lo, lo, jnp.where(x > hi, hi, x))
    inside = (x.value >= lo) & (x.value <= hi)
    value = jnp.where(x.value < lo, lo, jnp.where(x.value > hi, hi, x.value))
    return Jet((value,) + tuple(jnp.where(inside, c, 0.0) for c in x.coeffs[1:]), x.ndir)


def affine(x, weight, bias=None):
    """``x @ weight + bias`` for arrays or jets (bias only touches the value)."""
    y = x @ weight
    if bias is not None:
        y = y + bias
    return y


def is_finite(x) -> bool | None:
    """True/False for concrete inputs, None while tracing."""
    parts = x.coeffs if isinstance(x, Jet) else (x,)
    arrays = [_concrete(p) for p in parts]
    if any(a is None for a in arrays):
        return None
    return all(bool(np.all(np.isfinite(a))) for a in arrays)


def _as_jet(out, order, ndir=None):
    return out if isinstance(out, Jet) else Jet.constant(out, order, ndir)


def _check_order(order):
    if not isinstance(order, (int, np.integer)) or not 0 <= order <= MAX_ORDER:
        raise ValueError(f"order must lie in 0..{MAX_ORDER}, got {order}")


def jet_eval(f: Callable, point, direction, order: int) -> Jet:
    """Value and derivatives of ``f`` along ``direction`` at ``point``.

    ``point`` is a coordinate vector or a batch ``(N, d)``; ``f`` maps a jet of
    coordinates to a jet (or array) of outputs.
    """
    _check_order(order)
    return _as_jet(f(Jet.seed(point, direction, order)), order)


def jet_eval_many(f: Callable, point, directions: Sequence, order: int) -> Jet:
    """Like :func:`jet_eval` for several directions sharing one value pass."""
    _check_order(order)
    return _as_jet(f(Jet.seed_many(point, directions, order)), order, len(directions))


def mixed_jet(f: Callable, point, directions: Sequence):
    """Derivative of ``f`` along an ordered list of at most two directions.

    One direction gives the directional derivative (it may be an explicit
    vector such as an outward normal).  Two directions use the polarization
    identity on second directional derivatives.
    """
    directions = list(directions)
    if len(directions) > 2:
        raise ValueError("mixed_jet supports at most two directions")
    point = jnp.asarray(point, dtype=jnp.float64)
    if not directions:
        return jet_eval(f, point, 0, 0).value
    vecs = [_direction_vector(d, point.shape[-1]) for d in directions]
    if len(vecs) == 1:
        return jet_eval(f, point, vecs[0], 1).derivative(1)
    second = jet_eval_many(f, point, [vecs[0] + vecs[1], vecs[0] - vecs[1]], 2).derivative(2)
    return (second[0] - second[1]) / 4.0


def normal_derivative(f: Callable, points):
    """Radial derivative (x f_x + y f_y) / r, the outward normal on a circle."""
    points = jnp.asarray(points, dtype=jnp.float64)
    normals = points / jnp.linalg.norm(points, axis=-1, keepdims=True)
    return jet_eval(f, points, normals, 1).derivative(1)


def flatten_params(params):
    """Flat float64 vector plus the inverse map back to the parameter tree."""
    return ravel_pytree(params)


def param_grad(loss_fn: Callable, params):
    """Gradient of a scalar ``loss_fn(params)`` as one flat vector.

    The reverse sweep is JAX's; the traced forward record plays the role of
    the tape.  Non-scalar outputs are rejected before differentiation.
    """
    out = jax.eval_shape(loss_fn, params)
    if getattr(out, "shape", None) != ():
        raise TapeError(f"loss must be a scalar, got shape {getattr(out, 'shape', None)}")
    grads = jax.grad(loss_fn)(params)
    flat, _ = ravel_pytree(grads)
    return np.asarray(flat)
