"""Truncated-Taylor scalar arithmetic for forward-mode differentiation.

``Dual`` carries a value together with its first directional derivative along
a single tangent direction; ``Dual2`` additionally carries the second
directional derivative (the quadratic form ``v^T H v`` for the same tangent).
Components may be plain floats or numpy arrays of matching shape, so an
entire parameter vector can be pushed through a log-density in one lifted
evaluation.

No tape is kept: every operation immediately combines the incoming
components, which is what keeps the memory footprint at roughly two or three
function evaluations.

The first two components of every ``Dual2`` rule are written with exactly the
same expressions (and the same operation order) as the ``Dual`` rule, so
projecting a ``Dual2`` computation onto ``(value, d1)`` reproduces the
``Dual`` computation bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

Arraylike = Union[float, np.ndarray]


class DomainError(ArithmeticError):
    """An elementary operation was applied outside its domain."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        super().__init__(f"domain error in '{op}'" + (f": {detail}" if detail else ""))


class EvaluationError(RuntimeError):
    """A lifted evaluation produced a non-finite quantity."""

    def __init__(self, message: str, coordinate: int | None = None):
        self.coordinate = coordinate
        super().__init__(message)


def _any(mask) -> bool:
    return bool(np.any(mask))


class Dual:
    """First-order dual scalar: ``(value, d1)`` with ``d1`` the directional
    derivative along the active tangent."""

    __slots__ = ("value", "d1")

    # Keep numpy from absorbing us into object arrays; reflected dunders run.
    __array_ufunc__ = None

    def __init__(self, value: Arraylike, d1: Arraylike = 0.0):
        self.value = value
        self.d1 = d1

    @classmethod
    def constant(cls, value: Arraylike) -> "Dual":
        return cls(value, 0.0)

    def _coerce(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        if isinstance(other, Dual2):
            raise TypeError("cannot mix Dual and Dual2 operands")
        return Dual(other, 0.0)

    def __repr__(self):
        return f"Dual({self.value!r}, {self.d1!r})"

    def __add__(self, other):
        o = self._coerce(other)
        return Dual(self.value + o.value, self.d1 + o.d1)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Dual(self.value - o.value, self.d1 - o.d1)

    def __rsub__(self, other):
        o = self._coerce(other)
        return Dual(o.value - self.value, o.d1 - self.d1)

    def __mul__(self, other):
        o = self._coerce(other)
        return Dual(self.value * o.value, self.d1 * o.value + self.value * o.d1)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if _any(o.value == 0):
            raise DomainError("div", "division by zero value")
        q = self.value / o.value
        return Dual(q, (self.d1 - q * o.d1) / o.value)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        return Dual(-self.value, -self.d1)

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("only integer powers are supported; use exp/log for the rest")
        if n < 0 and _any(self.value == 0):
            raise DomainError("pow", "negative power of zero value")
        if n == 0:
            return Dual(np.ones_like(np.asarray(self.value, dtype=float)), 0.0)
        t = n * self.value ** (n - 1)
        return Dual(self.value ** n, t * self.d1)

    def __abs__(self):
        s = np.sign(self.value)  # sign(0) == 0: subgradient choice at the kink
        return Dual(np.abs(self.value), s * self.d1)

    def __getitem__(self, idx):
        return Dual(self.value[idx], _index(self.d1, idx))

    def reshape(self, *shape):
        return Dual(np.reshape(self.value, shape), _reshape(self.d1, shape))

    # -- elementary functions ------------------------------------------------

    def exp(self):
        e = np.exp(self.value)
        return Dual(e, e * self.d1)

    def log(self):
        if _any(self.value <= 0):
            raise DomainError("log", "non-positive value")
        t = self.d1 / self.value
        return Dual(np.log(self.value), t)

    def sqrt(self):
        if _any(self.value < 0):
            raise DomainError("sqrt", "negative value")
        s = np.sqrt(self.value)
        t = 0.5 * self.d1 / s
        return Dual(s, t)

    def tanh(self):
        t = np.tanh(self.value)
        sech2 = 1.0 - t * t
        return Dual(t, sech2 * self.d1)

    def relu(self):
        m = self.value > 0
        return Dual(np.where(m, self.value, 0.0), np.where(m, self.d1, 0.0))

    def sin(self):
        return Dual(np.sin(self.value), np.cos(self.value) * self.d1)

    def cos(self):
        return Dual(np.cos(self.value), -np.sin(self.value) * self.d1)

    def square(self):
        t = 2.0 * self.value
        return Dual(self.value * self.value, t * self.d1)


class Dual2:
    """Second-order dual scalar: ``(value, d1, d2)`` where ``d2`` is the
    second directional derivative along the same tangent."""

    __slots__ = ("value", "d1", "d2")

    __array_ufunc__ = None

    def __init__(self, value: Arraylike, d1: Arraylike = 0.0, d2: Arraylike = 0.0):
        self.value = value
        self.d1 = d1
        self.d2 = d2

    @classmethod
    def constant(cls, value: Arraylike) -> "Dual2":
        return cls(value, 0.0, 0.0)

    def _coerce(self, other) -> "Dual2":
        if isinstance(other, Dual2):
            return other
        if isinstance(other, Dual):
            raise TypeError("cannot mix Dual and Dual2 operands")
        return Dual2(other, 0.0, 0.0)

    def __repr__(self):
        return f"Dual2({self.value!r}, {self.d1!r}, {self.d2!r})"

    def __add__(self, other):
        o = self._coerce(other)
        return Dual2(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Dual2(self.value - o.value, self.d1 - o.d1, self.d2 - o.d2)

    def __rsub__(self, other):
        o = self._coerce(other)
        return Dual2(o.value - self.value, o.d1 - self.d1, o.d2 - self.d2)

    def __mul__(self, other):
        o = self._coerce(other)
        return Dual2(
            self.value * o.value,
            self.d1 * o.value + self.value * o.d1,
            self.d2 * o.value + 2.0 * (self.d1 * o.d1) + self.value * o.d2,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if _any(o.value == 0):
            raise DomainError("div", "division by zero value")
        q = self.value / o.value
        d1 = (self.d1 - q * o.d1) / o.value
        d2 = (self.d2 - 2.0 * d1 * o.d1 - q * o.d2) / o.value
        return Dual2(q, d1, d2)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        return Dual2(-self.value, -self.d1, -self.d2)

    def __pow__(self, n):
        if not isinstance(n, int):
            raise TypeError("only integer powers are supported; use exp/log for the rest")
        if n < 0 and _any(self.value == 0):
            raise DomainError("pow", "negative power of zero value")
        if n == 0:
            return Dual2(np.ones_like(np.asarray(self.value, dtype=float)), 0.0, 0.0)
        t = n * self.value ** (n - 1)
        if n == 1:
            return Dual2(self.value ** n, t * self.d1, t * self.d2)
        d2 = n * (n - 1) * self.value ** (n - 2) * (self.d1 * self.d1) + t * self.d2
        return Dual2(self.value ** n, t * self.d1, d2)

    def __abs__(self):
        s = np.sign(self.value)
        return Dual2(np.abs(self.value), s * self.d1, s * self.d2)

    def __getitem__(self, idx):
        return Dual2(self.value[idx], _index(self.d1, idx), _index(self.d2, idx))

    def reshape(self, *shape):
        return Dual2(
            np.reshape(self.value, shape), _reshape(self.d1, shape), _reshape(self.d2, shape)
        )

    # -- elementary functions ------------------------------------------------

    def exp(self):
        e = np.exp(self.value)
        return Dual2(e, e * self.d1, e * (self.d2 + self.d1 * self.d1))

    def log(self):
        if _any(self.value <= 0):
            raise DomainError("log", "non-positive value")
        t = self.d1 / self.value
        return Dual2(np.log(self.value), t, self.d2 / self.value - t * t)

    def sqrt(self):
        if _any(self.value < 0):
            raise DomainError("sqrt", "negative value")
        s = np.sqrt(self.value)
        t = 0.5 * self.d1 / s
        return Dual2(s, t, 0.5 * self.d2 / s - 0.25 * (self.d1 * self.d1) / (s * self.value))

    def tanh(self):
        t = np.tanh(self.value)
        sech2 = 1.0 - t * t
        return Dual2(t, sech2 * self.d1, sech2 * self.d2 - 2.0 * t * sech2 * (self.d1 * self.d1))

    def relu(self):
        m = self.value > 0
        return Dual2(
            np.where(m, self.value, 0.0),
            np.where(m, self.d1, 0.0),
            np.where(m, self.d2, 0.0),
        )

    def sin(self):
        s = np.sin(self.value)
        c = np.cos(self.value)
        return Dual2(s, c * self.d1, c * self.d2 - s * (self.d1 * self.d1))

    def cos(self):
        s = np.sin(self.value)
        c = np.cos(self.value)
        return Dual2(c, -s * self.d1, -s * self.d2 - c * (self.d1 * self.d1))

    def square(self):
        t = 2.0 * self.value
        return Dual2(self.value * self.value, t * self.d1, t * self.d2 + 2.0 * (self.d1 * self.d1))


DualKind = Union[Dual, Dual2]


def _index(component, idx):
    return component[idx] if isinstance(component, np.ndarray) else component


def _reshape(component, shape):
    return np.reshape(component, shape) if isinstance(component, np.ndarray) else component


# ---------------------------------------------------------------------------
# Generic functions: dispatch on plain arrays / Dual / Dual2 so that targets
# can be written once. On plain inputs these call the same numpy routines the
# lifted rules use for their value component, which keeps the plain and
# lifted values identical to the last bit.
# ---------------------------------------------------------------------------


def exp(x):
    return x.exp() if isinstance(x, (Dual, Dual2)) else np.exp(x)


def log(x):
    if isinstance(x, (Dual, Dual2)):
        return x.log()
    if _any(np.asarray(x) <= 0):
        raise DomainError("log", "non-positive value")
    return np.log(x)


def sqrt(x):
    if isinstance(x, (Dual, Dual2)):
        return x.sqrt()
    if _any(np.asarray(x) < 0):
        raise DomainError("sqrt", "negative value")
    return np.sqrt(x)


def tanh(x):
    return x.tanh() if isinstance(x, (Dual, Dual2)) else np.tanh(x)


def relu(x):
    if isinstance(x, (Dual, Dual2)):
        return x.relu()
    return np.where(np.asarray(x) > 0, x, 0.0)


def sin(x):
    return x.sin() if isinstance(x, (Dual, Dual2)) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, (Dual, Dual2)) else np.cos(x)


def square(x):
    return x.square() if isinstance(x, (Dual, Dual2)) else x * x


def sum(x, axis=None):  # noqa: A001 - mirrors numpy's own shadowing
    if isinstance(x, Dual):
        return Dual(np.sum(x.value, axis=axis), _sum_component(x.d1, axis))
    if isinstance(x, Dual2):
        return Dual2(
            np.sum(x.value, axis=axis),
            _sum_component(x.d1, axis),
            _sum_component(x.d2, axis),
        )
    return np.sum(x, axis=axis)


def _sum_component(component, axis):
    if isinstance(component, np.ndarray):
        return np.sum(component, axis=axis)
    # A scalar component (constant lift) sums to itself times the count, but
    # constants only ever carry 0.0 here.
    return component


def matmul(a, b):
    """Matrix product handling any mix of constant arrays and duals.

    The product rule goes through unchanged because matmul is bilinear.
    """
    a_dual = isinstance(a, (Dual, Dual2))
    b_dual = isinstance(b, (Dual, Dual2))
    if not a_dual and not b_dual:
        return np.matmul(a, b)
    if a_dual and b_dual and type(a) is not type(b):
        raise TypeError("cannot mix Dual and Dual2 operands")
    kind = type(a) if a_dual else type(b)
    av, bv = (a.value if a_dual else a), (b.value if b_dual else b)
    value = np.matmul(av, bv)
    da1 = _mm_component(a, "d1") if a_dual else None
    db1 = _mm_component(b, "d1") if b_dual else None
    if kind is Dual:
        return Dual(value, _mm_pair(da1, bv, av, db1, value))
    d1 = _mm_pair(da1, bv, av, db1, value)
    da2 = _mm_component(a, "d2") if a_dual else None
    db2 = _mm_component(b, "d2") if b_dual else None
    d2 = _mm_pair(da2, bv, av, db2, value)
    if da1 is not None and db1 is not None:
        d2 = d2 + 2.0 * np.matmul(da1, db1)
    return Dual2(value, d1, d2)


def _mm_component(x, field):
    # Scalar components can only come from a constant lift (exactly zero);
    # matmul treats them as an absent term.
    c = getattr(x, field)
    if isinstance(c, np.ndarray):
        return c
    if c != 0.0:
        raise TypeError(f"matmul needs array-valued dual components, got scalar {field}={c!r}")
    return None


def _mm_pair(da, bv, av, db, value):
    # da @ bv + av @ db, skipping whichever side is a constant.
    left = np.matmul(da, bv) if da is not None else None
    right = np.matmul(av, db) if db is not None else None
    if left is None and right is None:
        return np.zeros_like(value)
    if left is None:
        return right
    if right is None:
        return left
    return left + right


def logsumexp(x, axis=None):
    """Log-sum-exp stabilized by the (constant) max of the values.

    Subtracting a constant shift leaves all derivatives exact, so the dual
    components flow only through exp/sum/log.
    """
    v = x.value if isinstance(x, (Dual, Dual2)) else x
    m = np.max(v, axis=axis, keepdims=True)
    s = log(sum(exp(x - m), axis=axis))
    shift = np.squeeze(m, axis=axis) if axis is not None else np.squeeze(m)
    return s + shift


# ---------------------------------------------------------------------------
# Named operation tables (handy for table-driven tests and the self-check
# command; the operators above are the everyday surface).
# ---------------------------------------------------------------------------

_BINARY_OPS: dict[str, Callable] = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}

_UNARY_OPS: dict[str, Callable] = {
    "neg": lambda a: -a,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "tanh": tanh,
    "relu": relu,
    "abs": abs,
    "sin": sin,
    "cos": cos,
    "square": square,
}


def lift_binary(op: str, a: DualKind, b: DualKind) -> DualKind:
    """Apply a named binary operation to lifted scalars."""
    try:
        fn = _BINARY_OPS[op]
    except KeyError:
        raise ValueError(f"unknown binary op '{op}'") from None
    return fn(a, b)


def lift_unary(op: str, a: DualKind) -> DualKind:
    """Apply a named unary operation to a lifted scalar."""
    try:
        fn = _UNARY_OPS[op]
    except KeyError:
        raise ValueError(f"unknown unary op '{op}'") from None
    return fn(a)


# ---------------------------------------------------------------------------
# Tangent vectors and the whole-function forward operators.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TangentVector:
    """A direction in parameter space; ``unit`` marks unit Euclidean norm."""

    components: np.ndarray
    unit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "components", np.asarray(self.components, dtype=float))
        if self.unit:
            norm = float(np.linalg.norm(self.components))
            if abs(norm - 1.0) > 1e-12:
                raise ValueError(f"unit tangent has norm {norm!r}")

    def __len__(self):
        return self.components.shape[0]


def _as_direction(v) -> np.ndarray:
    if isinstance(v, TangentVector):
        return v.components
    return np.asarray(v, dtype=float)


def _check_inputs(target, theta: np.ndarray, v: np.ndarray) -> None:
    if theta.shape != (target.dim,):
        raise ValueError(f"theta has shape {theta.shape}, target dimension is {target.dim}")
    if v.shape != (target.dim,):
        raise ValueError(f"tangent has shape {v.shape}, target dimension is {target.dim}")
    if not np.all(np.isfinite(theta)):
        bad = int(np.argmin(np.isfinite(theta)))
        raise EvaluationError(f"non-finite parameter at coordinate {bad}", coordinate=bad)


def eval_f1(target, theta, v, allow_zero_density: bool = False) -> tuple[float, float]:
    """One forward pass: the log-density and its directional derivative.

    Returns ``(f, jvp)`` with ``jvp = grad f(theta) . v``. A single lifted
    evaluation; no full gradient is formed or stored.

    ``allow_zero_density`` lets a log-density of exactly ``-inf`` pass
    through as ``(-inf, nan)`` instead of raising; samplers use it for
    proposal points, where zero density is a rejection, not a failure.
    """
    theta = np.asarray(theta, dtype=float)
    direction = _as_direction(v)
    _check_inputs(target, theta, direction)
    with np.errstate(all="ignore"):
        out = target.log_density(Dual(theta, direction))
    f, jvp = float(out.value), float(out.d1)
    if not np.isfinite(f):
        if allow_zero_density and f == -np.inf:
            return f, math.nan
        raise EvaluationError(f"{target.name}: non-finite log-density {f!r}")
    if not np.isfinite(jvp):
        raise EvaluationError(f"{target.name}: non-finite directional derivative {jvp!r}")
    return f, jvp


def eval_f2(target, theta, v, allow_zero_density: bool = False) -> tuple[float, float, float]:
    """One second-order forward pass.

    Returns ``(f, jvp, vhv)`` where ``vhv = v^T H v`` is the second
    directional derivative along the same tangent. ``allow_zero_density``
    is as in :func:`eval_f1` (returns ``(-inf, nan, nan)``).
    """
    theta = np.asarray(theta, dtype=float)
    direction = _as_direction(v)
    _check_inputs(target, theta, direction)
    with np.errstate(all="ignore"):
        out = target.log_density(Dual2(theta, direction, 0.0))
    f, jvp, vhv = float(out.value), float(out.d1), float(out.d2)
    if not np.isfinite(f):
        if allow_zero_density and f == -np.inf:
            return f, math.nan, math.nan
        raise EvaluationError(f"{target.name}: non-finite log-density {f!r}")
    if not np.isfinite(jvp):
        raise EvaluationError(f"{target.name}: non-finite directional derivative {jvp!r}")
    if not np.isfinite(vhv):
        raise EvaluationError(f"{target.name}: non-finite curvature {vhv!r}")
    return f, jvp, vhv
