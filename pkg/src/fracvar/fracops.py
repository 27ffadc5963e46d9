r"""Discrete fractional integrals and derivatives on uniform grids.

Left-anchored operators are built directly; right-anchored ones are the
reflection ``x -> a + b - x`` of their left counterparts, so the mirror
identities hold bitwise on the grid.

* Riemann-Liouville integrals use product-trapezoidal quadrature (piecewise
  linear interpolation of the integrand, exact kernel moments).
* Caputo derivatives use the L1 scheme, with truncation order ``2 - alpha``.
* Riemann-Liouville derivatives differentiate the ``1 - alpha`` integral with
  central differences; the anchor node is linearly extrapolated from the two
  nearest interior nodes and the far node uses a one-sided second-order
  stencil. Both endpoint values are low-accuracy by construction.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .special import gamma

__all__ = [
    "FracParams",
    "Grid",
    "SampledFunction",
    "OperatorKind",
    "DiscreteOperator",
    "rlfi_left",
    "rlfi_right",
    "cfd_left",
    "cfd_right",
    "rlfd_left",
    "rlfd_right",
    "combined_caputo",
    "dual_rl",
    "build_operator_matrix",
    "trapezoid",
    "ibp_residual_combined",
    "ibp_residual_caputo",
    "ibp_residual_rlfi",
]


def _check_order(order: float, name: str = "order") -> float:
    order = float(order)
    if not (0.0 < order < 1.0):
        raise ValueError(f"{name} must lie in (0,1), got {order!r}")
    return order


@dataclass(frozen=True)
class FracParams:
    """Orders and weight of the combined Caputo operator.

    ``gamma * (left Caputo of order alpha) + (1 - gamma) * (right Caputo of
    order beta)``.
    """

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", _check_order(self.alpha, "alpha"))
        object.__setattr__(self, "beta", _check_order(self.beta, "beta"))
        g = float(self.gamma)
        if not (0.0 <= g <= 1.0):
            raise ValueError(f"gamma must lie in [0,1], got {g!r}")
        object.__setattr__(self, "gamma", g)


@dataclass(frozen=True)
class Grid:
    """Uniform partition of ``[a, b]`` into ``n - 1`` cells."""

    a: float
    b: float
    n: int

    def __post_init__(self):
        a, b, n = float(self.a), float(self.b), self.n
        if not (math.isfinite(a) and math.isfinite(b)) or not a < b:
            raise ValueError(f"grid needs finite a < b, got a={a}, b={b}")
        if int(n) != n or n < 3:
            raise ValueError(f"grid needs at least 3 nodes, got n={n}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "n", int(n))

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        x = self.a + self.h * np.arange(self.n, dtype=float)
        x[-1] = self.b
        return x

    def sample(self, func) -> "SampledFunction":
        """Sample a vectorized callable at the grid nodes."""
        return SampledFunction(self, np.asarray(func(self.nodes), dtype=float) * np.ones(self.n))


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Values of a real function at the nodes of a grid (read-only)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(
                f"expected {self.grid.n} samples, got array of shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("sampled values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.grid.n

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def reflect(self) -> "SampledFunction":
        """Samples of ``f(a + b - x)``."""
        return SampledFunction(self.grid, self.values[::-1])


# -- weights ----------------------------------------------------------------

_SERIES_CUTOFF = 16


def _first_diff_power(p: float, m: np.ndarray) -> np.ndarray:
    """``(m + 1)**p - m**p`` without cancellation for large ``m``."""
    m = np.asarray(m, dtype=float)
    out = np.empty_like(m)
    zero = m == 0
    out[zero] = 1.0
    mm = m[~zero]
    out[~zero] = mm**p * np.expm1(p * np.log1p(1.0 / mm))
    return out


def _second_diff_power(p: float, m: np.ndarray) -> np.ndarray:
    """``(m + 1)**p - 2 m**p + (m - 1)**p`` for integers ``m >= 1``."""
    m = np.asarray(m, dtype=float)
    out = np.empty_like(m)
    small = m < _SERIES_CUTOFF
    ms = m[small]
    out[small] = (ms + 1.0) ** p - 2.0 * ms**p + (ms - 1.0) ** p
    mb = m[~small]
    if mb.size:
        # 2 * sum_{k even >= 2} binom(p, k) m**(p - k)
        inv2 = 1.0 / (mb * mb)
        coef = 1.0
        total = np.zeros_like(mb)
        term_pow = np.ones_like(mb)
        for k in range(1, 25):
            coef *= (p - k + 1) / k
            if k % 2 == 0:
                term_pow = term_pow * inv2
                total += coef * term_pow
        out[~small] = 2.0 * mb**p * total
    return out


@functools.lru_cache(maxsize=64)
def _rlfi_weights(n: int, order: float):
    """Product-trapezoid weights for the left integral of ``order`` on n nodes.

    Returns ``(first, conv)`` with ``I[k] = C * (first[k] f_0 +
    sum_{j=1..k} conv[k - j] f_j)`` and ``C = h**order / Gamma(order + 2)``.
    """
    p = order + 1.0
    conv = np.empty(n - 1)
    conv[0] = 1.0
    if n > 2:
        conv[1:] = _second_diff_power(p, np.arange(1, n - 1))
    k = np.arange(2, n, dtype=float)
    first = np.zeros(n)
    first[1] = order
    # (k-1)^(a+1) - (k-1-a) k^a rewritten to avoid cancellation
    first[2:] = k**order * ((k - 1.0) * np.expm1(order * np.log1p(-1.0 / k)) + order)
    conv.setflags(write=False)
    first.setflags(write=False)
    return first, conv


@functools.lru_cache(maxsize=64)
def _l1_weights(n: int, order: float) -> np.ndarray:
    w = _first_diff_power(1.0 - order, np.arange(n - 1))
    w.setflags(write=False)
    return w


# -- left-anchored kernels on raw arrays -------------------------------------


def _rlfi_left_values(f: np.ndarray, h: float, order: float) -> np.ndarray:
    n = f.shape[0]
    first, conv = _rlfi_weights(n, order)
    out = np.zeros(n)
    out[1:] = first[1:] * f[0] + np.convolve(conv, f[1:])[: n - 1]
    return out * (h**order / gamma(order + 2.0))


def _cfd_left_values(f: np.ndarray, h: float, order: float) -> np.ndarray:
    n = f.shape[0]
    w = _l1_weights(n, order)
    out = np.zeros(n)
    out[1:] = np.convolve(w, np.diff(f))[: n - 1]
    return out * (h ** (-order) / gamma(2.0 - order))


def _ddx_anchored_left(u: np.ndarray, h: float) -> np.ndarray:
    """Derivative of samples; node 0 extrapolated, node n-1 one-sided."""
    n = u.shape[0]
    d = np.empty(n)
    d[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    d[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * h)
    if n > 3:
        d[0] = 2.0 * d[1] - d[2]
    else:
        d[0] = d[1]
    return d


def _rlfd_left_values(f: np.ndarray, h: float, order: float) -> np.ndarray:
    return _ddx_anchored_left(_rlfi_left_values(f, h, 1.0 - order), h)


def _values(f: SampledFunction) -> np.ndarray:
    if not isinstance(f, SampledFunction):
        raise TypeError(f"expected SampledFunction, got {type(f).__name__}")
    return f.values


# -- public operators ------------------------------------------------------


def rlfi_left(f: SampledFunction, alpha: float) -> SampledFunction:
    """Left Riemann-Liouville integral ``(1/G(a)) int_a^x (x-t)^(a-1) f(t) dt``."""
    alpha = _check_order(alpha, "alpha")
    return SampledFunction(f.grid, _rlfi_left_values(_values(f), f.grid.h, alpha))


def rlfi_right(f: SampledFunction, alpha: float) -> SampledFunction:
    """Right Riemann-Liouville integral over ``[x, b]``; zero at ``x = b``."""
    alpha = _check_order(alpha, "alpha")
    v = _values(f)[::-1]
    return SampledFunction(f.grid, _rlfi_left_values(v, f.grid.h, alpha)[::-1])


def cfd_left(f: SampledFunction, alpha: float) -> SampledFunction:
    """Left Caputo derivative by the L1 scheme; zero at ``x = a``."""
    alpha = _check_order(alpha, "alpha")
    return SampledFunction(f.grid, _cfd_left_values(_values(f), f.grid.h, alpha))


def cfd_right(f: SampledFunction, alpha: float) -> SampledFunction:
    """Right Caputo derivative, the mirror image of :func:`cfd_left`."""
    alpha = _check_order(alpha, "alpha")
    v = _values(f)[::-1]
    return SampledFunction(f.grid, _cfd_left_values(v, f.grid.h, alpha)[::-1])


def rlfd_left(f: SampledFunction, alpha: float) -> SampledFunction:
    """Left Riemann-Liouville derivative ``d/dx I_left^(1-alpha) f``."""
    alpha = _check_order(alpha, "alpha")
    return SampledFunction(f.grid, _rlfd_left_values(_values(f), f.grid.h, alpha))


def rlfd_right(f: SampledFunction, alpha: float) -> SampledFunction:
    """Right Riemann-Liouville derivative ``-d/dx I_right^(1-alpha) f``."""
    alpha = _check_order(alpha, "alpha")
    v = _values(f)[::-1]
    return SampledFunction(f.grid, _rlfd_left_values(v, f.grid.h, alpha)[::-1])


def combined_caputo(f: SampledFunction, p: FracParams) -> SampledFunction:
    """``gamma * cfd_left(f, alpha) + (1 - gamma) * cfd_right(f, beta)``.

    The weight-one cases return the one-sided operator untouched.
    """
    if p.gamma == 1.0:
        return cfd_left(f, p.alpha)
    if p.gamma == 0.0:
        return cfd_right(f, p.beta)
    left = cfd_left(f, p.alpha).values
    right = cfd_right(f, p.beta).values
    return SampledFunction(f.grid, p.gamma * left + (1.0 - p.gamma) * right)


def dual_rl(f: SampledFunction, p: FracParams) -> SampledFunction:
    """Operator produced by integrating the combined derivative by parts.

    ``(1 - gamma) * rlfd_left(f, beta) + gamma * rlfd_right(f, alpha)``: sides,
    orders and weights are all swapped relative to :func:`combined_caputo`.
    """
    if p.gamma == 1.0:
        return rlfd_right(f, p.alpha)
    if p.gamma == 0.0:
        return rlfd_left(f, p.beta)
    left = rlfd_left(f, p.beta).values
    right = rlfd_right(f, p.alpha).values
    return SampledFunction(f.grid, (1.0 - p.gamma) * left + p.gamma * right)


# -- matrices ----------------------------------------------------------------


class OperatorKind(enum.Enum):
    RLFI_LEFT = "rlfi-left"
    RLFI_RIGHT = "rlfi-right"
    RLFD_LEFT = "rlfd-left"
    RLFD_RIGHT = "rlfd-right"
    CFD_LEFT = "cfd-left"
    CFD_RIGHT = "cfd-right"
    COMBINED_CAPUTO = "combined"
    DUAL_RL = "dual"

    @property
    def needs_params(self) -> bool:
        return self in (OperatorKind.COMBINED_CAPUTO, OperatorKind.DUAL_RL)


Orders = Union[FracParams, float]


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Dense ``n x n`` matrix realization of a fractional operator."""

    grid: Grid
    kind: OperatorKind
    orders: Orders
    matrix: np.ndarray = field(repr=False)

    def apply(self, f: SampledFunction) -> SampledFunction:
        # the difference form is used so Caputo rows kill constants exactly
        if f.grid != self.grid:
            raise ValueError("sampled function lives on a different grid")
        return _APPLY[self.kind](f, self.orders)


_APPLY = {
    OperatorKind.RLFI_LEFT: rlfi_left,
    OperatorKind.RLFI_RIGHT: rlfi_right,
    OperatorKind.RLFD_LEFT: rlfd_left,
    OperatorKind.RLFD_RIGHT: rlfd_right,
    OperatorKind.CFD_LEFT: cfd_left,
    OperatorKind.CFD_RIGHT: cfd_right,
    OperatorKind.COMBINED_CAPUTO: combined_caputo,
    OperatorKind.DUAL_RL: dual_rl,
}


def _rlfi_left_matrix(n: int, h: float, order: float) -> np.ndarray:
    first, conv = _rlfi_weights(n, order)
    k, j = np.indices((n, n))
    lag = k - j
    m = np.zeros((n, n))
    mask = (j >= 1) & (lag >= 0)
    m[mask] = conv[lag[mask]]
    m[:, 0] = first
    m[0, :] = 0.0
    return m * (h**order / gamma(order + 2.0))


def _cfd_left_matrix(n: int, h: float, order: float) -> np.ndarray:
    w = _l1_weights(n, order)
    wpad = np.concatenate([w, [0.0]])
    k, j = np.indices((n, n))
    # coefficient of f_j in row k: w[k-j] (from d_{j-1}) - w[k-1-j] (from d_j)
    plus = np.where((j >= 1) & (j <= k), wpad[np.clip(k - j, 0, n - 1)], 0.0)
    minus = np.where(j <= k - 1, wpad[np.clip(k - 1 - j, 0, n - 1)], 0.0)
    m = plus - minus
    m[0, :] = 0.0
    return m * (h ** (-order) / gamma(2.0 - order))


def _rlfd_left_matrix(n: int, h: float, order: float) -> np.ndarray:
    i = _rlfi_left_matrix(n, h, 1.0 - order)
    d = np.empty_like(i)
    d[1:-1] = (i[2:] - i[:-2]) / (2.0 * h)
    d[-1] = (3.0 * i[-1] - 4.0 * i[-2] + i[-3]) / (2.0 * h)
    d[0] = 2.0 * d[1] - d[2] if n > 3 else d[1]
    return d


_LEFT_BUILDERS = {
    "rlfi": _rlfi_left_matrix,
    "cfd": _cfd_left_matrix,
    "rlfd": _rlfd_left_matrix,
}


@functools.lru_cache(maxsize=32)
def _one_sided(family: str, right: bool, grid: Grid, order: float) -> np.ndarray:
    m = _LEFT_BUILDERS[family](grid.n, grid.h, order)
    if right:
        m = np.ascontiguousarray(m[::-1, ::-1])
    m.setflags(write=False)
    return m


def build_operator_matrix(kind, grid: Grid, orders: Orders) -> DiscreteOperator:
    """Assemble the dense matrix of ``kind`` on ``grid``.

    ``orders`` is a :class:`FracParams` for the combined and dual operators
    and a single order in (0, 1) for the one-sided ones.
    """
    try:
        kind = OperatorKind(kind)
    except ValueError:
        raise ValueError(f"unknown operator kind {kind!r}") from None
    if kind.needs_params:
        if not isinstance(orders, FracParams):
            raise TypeError(f"{kind.value} needs FracParams orders")
        p = orders
        if kind is OperatorKind.COMBINED_CAPUTO:
            left, right = ("cfd", p.alpha), ("cfd", p.beta)
            wl, wr = p.gamma, 1.0 - p.gamma
        else:
            left, right = ("rlfd", p.beta), ("rlfd", p.alpha)
            wl, wr = 1.0 - p.gamma, p.gamma
        if wr == 0.0:
            mat = _one_sided(left[0], False, grid, left[1])
        elif wl == 0.0:
            mat = _one_sided(right[0], True, grid, right[1])
        else:
            mat = wl * _one_sided(left[0], False, grid, left[1]) + wr * _one_sided(
                right[0], True, grid, right[1]
            )
            mat.setflags(write=False)
    else:
        if isinstance(orders, FracParams):
            raise TypeError(f"{kind.value} takes a single order")
        order = _check_order(orders)
        family, side = kind.value.split("-")
        mat = _one_sided(family, side == "right", grid, order)
    return DiscreteOperator(grid, kind, orders, mat)


# -- integration by parts checks ---------------------------------------------


def trapezoid(values, grid: Grid) -> float:
    """Composite trapezoid rule on the grid."""
    v = np.asarray(values, dtype=float)
    return float(grid.h * (v.sum() - 0.5 * (v[0] + v[-1])))


def _same_grid(f: SampledFunction, g: SampledFunction) -> Grid:
    if f.grid != g.grid:
        raise ValueError("f and g must be sampled on the same grid")
    return f.grid


def ibp_residual_combined(f: SampledFunction, g: SampledFunction, p: FracParams) -> float:
    """``|LHS - RHS|`` of the integration-by-parts rule of the combined operator.

    ``int g D f = gamma [f I_right^(1-alpha) g]_a^b
    + (1 - gamma) [-f I_left^(1-beta) g]_a^b + int f D_dual g``.
    """
    grid = _same_grid(f, g)
    fv, gv = f.values, g.values
    lhs = trapezoid(gv * combined_caputo(f, p).values, grid)
    rhs = trapezoid(fv * dual_rl(g, p).values, grid)
    if p.gamma != 0.0:
        ir = rlfi_right(g, 1.0 - p.alpha).values
        rhs += p.gamma * (fv[-1] * ir[-1] - fv[0] * ir[0])
    if p.gamma != 1.0:
        il = rlfi_left(g, 1.0 - p.beta).values
        rhs += (1.0 - p.gamma) * (-(fv[-1] * il[-1]) + fv[0] * il[0])
    return abs(lhs - rhs)


def ibp_residual_caputo(
    f: SampledFunction, g: SampledFunction, alpha: float, side: str = "left"
) -> float:
    """Residual of the integration-by-parts formula for a one-sided Caputo derivative."""
    grid = _same_grid(f, g)
    fv, gv = f.values, g.values
    if side == "left":
        lhs = trapezoid(gv * cfd_left(f, alpha).values, grid)
        rhs = trapezoid(fv * rlfd_right(g, alpha).values, grid)
        ir = rlfi_right(g, 1.0 - alpha).values
        rhs += fv[-1] * ir[-1] - fv[0] * ir[0]
    elif side == "right":
        lhs = trapezoid(gv * cfd_right(f, alpha).values, grid)
        rhs = trapezoid(fv * rlfd_left(g, alpha).values, grid)
        il = rlfi_left(g, 1.0 - alpha).values
        rhs += -(fv[-1] * il[-1]) + fv[0] * il[0]
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return abs(lhs - rhs)


def ibp_residual_rlfi(f: SampledFunction, g: SampledFunction, alpha: float) -> float:
    """``|int g I_left f - int f I_right g|`` on the grid."""
    grid = _same_grid(f, g)
    lhs = trapezoid(g.values * rlfi_left(f, alpha).values, grid)
    rhs = trapezoid(f.values * rlfi_right(g, alpha).values, grid)
    return abs(lhs - rhs)
