r"""Fractional variational problems in the combined Caputo derivative.

Functionals have the form ``J(y) = int_a^b L(x, y(x), v(x)) dx`` where
``v = D y`` is the combined Caputo derivative applied componentwise. The
solvers use the direct method: the functional is discretized on the grid
(trapezoid rule, dense operator matrix) and minimized over node values, and
the fractional Euler-Lagrange residual

    R_i = dL/dy_i + D_dual (dL/dv_i)

is evaluated afterwards through :mod:`fracvar.fracops` as an independent
certificate.

Component indices in this module are zero-based.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .expr import Binary, Bindings, Const, ExprAst, diff
from .fracops import (
    FracParams,
    Grid,
    OperatorKind,
    SampledFunction,
    build_operator_matrix,
    combined_caputo,
    dual_rl,
    rlfi_left,
    rlfi_right,
    trapezoid,
)
from .optimize import OptimizeResult, minimize_bfgs

log = logging.getLogger(__name__)

__all__ = [
    "Trajectory",
    "Boundary",
    "Constraint",
    "SolverOptions",
    "Problem",
    "VariationProbe",
    "SolveReport",
    "norm_1_inf",
    "evaluate_functional",
    "first_variation",
    "el_residual",
    "el_residual_max",
    "transversality_residual",
    "standard_probes",
    "random_probe",
    "regularity_matrix",
    "check_regularity",
    "functional_gradient",
    "solve_basic",
    "solve_free_endpoint",
    "solve_isoperimetric",
    "solve_isoperimetric_ineq",
    "solve",
    "variation_certificate",
]


# -- data --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """``N`` sampled components on a grid; ``values`` has shape ``(N, n)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != self.grid.n or v.shape[0] < 1:
            raise ValueError(f"trajectory needs shape (N, {self.grid.n}), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("trajectory values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dims(self) -> int:
        return self.values.shape[0]

    def component(self, i: int) -> SampledFunction:
        return SampledFunction(self.grid, self.values[i])

    @classmethod
    def from_functions(cls, grid: Grid, *funcs) -> "Trajectory":
        x = grid.nodes
        return cls(grid, np.array([np.broadcast_to(f(x), x.shape) for f in funcs]))


@dataclass(frozen=True)
class Boundary:
    """Boundary data of one component.

    The left value is always fixed. ``kind`` is ``"fixed"`` (``right`` is the
    value), ``"free"`` (``right`` unused) or ``"upper"`` (``y(b) <= right``).
    """

    left: float
    right: Optional[float] = None
    kind: str = "fixed"

    def __post_init__(self):
        if self.kind not in ("fixed", "free", "upper"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if not math.isfinite(float(self.left)):
            raise ValueError("left boundary value must be finite")
        if self.kind != "free":
            if self.right is None or not math.isfinite(float(self.right)):
                raise ValueError(f"{self.kind} boundary needs a finite right value")

    @classmethod
    def fixed(cls, left: float, right: float) -> "Boundary":
        return cls(float(left), float(right), "fixed")

    @classmethod
    def free(cls, left: float) -> "Boundary":
        return cls(float(left), None, "free")

    @classmethod
    def upper(cls, left: float, bound: float) -> "Boundary":
        return cls(float(left), float(bound), "upper")


@dataclass(frozen=True)
class Constraint:
    """Isoperimetric constraint ``int G dx == target`` (``"eq"``) or ``<= target`` (``"le"``)."""

    integrand: ExprAst
    target: float
    relation: str = "eq"

    def __post_init__(self):
        if self.relation not in ("eq", "le"):
            raise ValueError(f"relation must be 'eq' or 'le', got {self.relation!r}")


@dataclass(frozen=True)
class SolverOptions:
    tol_g: float = 1e-8
    tol_r: float = 5e-2
    tol_v: float = 1e-5
    tol_c: float = 1e-8
    tol_cs: float = 1e-6
    tol_t: float = 5e-2
    tol_reg: float = 1e-8
    el_margin: float = 0.05
    max_iter: int = 200
    max_outer: int = 50


@dataclass(frozen=True, eq=False)
class Problem:
    """A discretized fractional variational problem."""

    params: FracParams
    grid: Grid
    lagrangian: ExprAst
    boundary: tuple
    constraints: tuple = ()
    parameters: Mapping[str, object] = field(default_factory=dict)
    options: SolverOptions = SolverOptions()

    def __post_init__(self):
        object.__setattr__(self, "boundary", tuple(self.boundary))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        n_dims = self.lagrangian.n_dims
        if len(self.boundary) != n_dims:
            raise ValueError(
                f"lagrangian has N={n_dims} but {len(self.boundary)} boundary specs were given"
            )
        names = set(self.lagrangian.params)
        for c in self.constraints:
            if c.integrand.n_dims != n_dims:
                raise ValueError("constraint integrand dimension differs from the lagrangian")
            names |= set(c.integrand.params)
        params = {}
        for name, value in dict(self.parameters).items():
            arr = np.asarray(value, dtype=float)
            if arr.ndim == 0:
                params[name] = float(arr)
            elif arr.shape == (self.grid.n,):
                arr = arr.copy()
                arr.setflags(write=False)
                params[name] = arr
            else:
                raise ValueError(f"parameter {name!r} must be a scalar or have {self.grid.n} node values")
        missing = names - set(params)
        if missing:
            raise ValueError(f"unbound parameters: {', '.join(sorted(missing))}")
        object.__setattr__(self, "parameters", params)

    @property
    def dims(self) -> int:
        return self.lagrangian.n_dims

    def replace(self, **changes) -> "Problem":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class VariationProbe:
    """Direction ``h`` and step schedule for a first-variation estimate."""

    direction: Trajectory
    epsilons: tuple = (1e-2, 5e-3, 2.5e-3)

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if len(eps) < 2 or len(set(eps)) != len(eps) or min(eps) <= 0:
            raise ValueError("epsilon schedule needs at least two distinct positive steps")
        object.__setattr__(self, "epsilons", eps)
        if not np.any(self.direction.values):
            raise ValueError("variation direction must be nonzero")


@dataclass
class SolveReport:
    trajectory: Trajectory
    cost: float
    el_residual_max: float
    transversality_residuals: dict = field(default_factory=dict)
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    constraint_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    complementary_slackness: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0
    converged: bool = False
    gradient_max: float = float("nan")
    el_tolerance: float = float("nan")
    branches: dict = field(default_factory=dict)
    slacks: np.ndarray = field(default_factory=lambda: np.zeros(0))
    abnormal: bool = False
    regularity_det: Optional[float] = None
    message: str = ""

    def to_dict(self) -> dict:
        def arr(a):
            return [float(v) for v in np.asarray(a, dtype=float).ravel()]

        return {
            "converged": bool(self.converged),
            "cost": float(self.cost),
            "el_residual_max": float(self.el_residual_max),
            "el_tolerance": float(self.el_tolerance),
            "gradient_max": float(self.gradient_max),
            "iterations": int(self.iterations),
            "transversality_residuals": {
                f"y{i + 1}": float(t) for i, t in sorted(self.transversality_residuals.items())
            },
            "branches": {f"y{i + 1}": b for i, b in sorted(self.branches.items())},
            "multipliers": arr(self.multipliers),
            "constraint_residuals": arr(self.constraint_residuals),
            "slacks": arr(self.slacks),
            "complementary_slackness": arr(self.complementary_slackness),
            "abnormal": bool(self.abnormal),
            "regularity_det": None if self.regularity_det is None else float(self.regularity_det),
            "message": self.message,
        }


# -- discretization helpers --------------------------------------------------


def _weights(grid: Grid) -> np.ndarray:
    w = np.full(grid.n, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return w


@functools.lru_cache(maxsize=128)
def _first_partials(ast: ExprAst):
    n = ast.n_dims
    ly = tuple(diff(ast, f"y{i + 1}") for i in range(n))
    lv = tuple(diff(ast, f"v{i + 1}") for i in range(n))
    return ly, lv


@functools.lru_cache(maxsize=128)
def _second_partials(ast: ExprAst):
    ly, lv = _first_partials(ast)
    n = ast.n_dims
    names = [f"y{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)]
    firsts = ly + lv
    return tuple(tuple(diff(d, name) for name in names) for d in firsts)


def _check_dims(prob: Problem, y: Trajectory):
    if y.dims != prob.dims:
        raise ValueError(f"trajectory has N={y.dims}, problem has N={prob.dims}")
    if y.grid != prob.grid:
        raise ValueError("trajectory lives on a different grid than the problem")


def _bindings(prob: Problem, Y: np.ndarray, V: np.ndarray) -> Bindings:
    return Bindings(prob.grid.nodes, list(Y), list(V), prob.parameters)


def _eval_nodes(ast: ExprAst, b: Bindings, n: int) -> np.ndarray:
    return np.broadcast_to(ast.eval(b), (n,))


def _derivative_values(prob: Problem, Y: np.ndarray) -> np.ndarray:
    return np.array([combined_caputo(SampledFunction(prob.grid, row), prob.params).values for row in Y])


def _combined_matrix(prob: Problem) -> np.ndarray:
    return build_operator_matrix(OperatorKind.COMBINED_CAPUTO, prob.grid, prob.params).matrix


def _augmented(lagrangian: ExprAst, constraints: Sequence[Constraint], lams) -> ExprAst:
    """``L - sum lam_j G_j`` as a single expression."""
    root = lagrangian.root
    params = set(lagrangian.params)
    for c, lam in zip(constraints, lams):
        root = Binary("-", root, Binary("*", Const(float(lam)), c.integrand.root))
        params |= set(c.integrand.params)
    return ExprAst(root, lagrangian.n_dims, frozenset(params))


# -- functional, variations, residuals ---------------------------------------


def norm_1_inf(y: Trajectory, p: FracParams) -> float:
    """``max_x |y(x)| + max_x |D y(x)|`` with the Euclidean norm on R^N."""
    dy = np.array([combined_caputo(y.component(i), p).values for i in range(y.dims)])
    return float(np.max(np.linalg.norm(y.values, axis=0)) + np.max(np.linalg.norm(dy, axis=0)))


def evaluate_functional(prob: Problem, y: Trajectory, integrand: Optional[ExprAst] = None) -> float:
    """Trapezoid value of ``int L(x, y, D y) dx`` (or of ``integrand``)."""
    _check_dims(prob, y)
    ast = prob.lagrangian if integrand is None else integrand
    V = _derivative_values(prob, y.values)
    vals = _eval_nodes(ast, _bindings(prob, y.values, V), prob.grid.n)
    return trapezoid(vals, prob.grid)


def _fixed_right(prob: Problem, pinned=frozenset()) -> list:
    return [bc.kind == "fixed" or i in pinned for i, bc in enumerate(prob.boundary)]


def _check_admissible(prob: Problem, h: Trajectory, pinned=frozenset()):
    _check_dims(prob, h)
    if np.any(h.values[:, 0] != 0.0):
        raise ValueError("variation must vanish at the left endpoint")
    for i, fixed in enumerate(_fixed_right(prob, pinned)):
        if fixed and h.values[i, -1] != 0.0:
            raise ValueError(f"variation of component {i} must vanish at the fixed right endpoint")


def _richardson(values: Sequence[float], eps: Sequence[float]) -> float:
    """Extrapolate central differences to zero step, errors in even powers of eps."""
    order = np.argsort(eps)[::-1]
    t = [float(values[k]) for k in order]
    e = [float(eps[k]) for k in order]
    for level in range(1, len(t)):
        for k in range(len(t) - 1, level - 1, -1):
            r = (e[k - level] / e[k]) ** 2
            t[k] = t[k] + (t[k] - t[k - 1]) / (r - 1.0)
    return t[-1]


def first_variation(
    prob: Problem,
    y: Trajectory,
    probe: VariationProbe,
    integrand: Optional[ExprAst] = None,
) -> float:
    """Estimate ``d/de J(y + e h)`` at ``e = 0`` by Richardson-extrapolated central differences."""
    _check_dims(prob, y)
    h = probe.direction
    _check_admissible(prob, h)
    diffs = []
    for eps in probe.epsilons:
        plus = Trajectory(prob.grid, y.values + eps * h.values)
        minus = Trajectory(prob.grid, y.values - eps * h.values)
        jp = evaluate_functional(prob, plus, integrand)
        jm = evaluate_functional(prob, minus, integrand)
        diffs.append((jp - jm) / (2.0 * eps))
    return _richardson(diffs, probe.epsilons)


def el_residual(prob: Problem, y: Trajectory, integrand: Optional[ExprAst] = None) -> list:
    """Euler-Lagrange residual ``dL/dy_i + D_dual dL/dv_i`` for every component."""
    _check_dims(prob, y)
    ast = prob.lagrangian if integrand is None else integrand
    ly, lv = _first_partials(ast)
    V = _derivative_values(prob, y.values)
    b = _bindings(prob, y.values, V)
    n = prob.grid.n
    out = []
    for i in range(prob.dims):
        costate = SampledFunction(prob.grid, _eval_nodes(lv[i], b, n))
        out.append(SampledFunction(prob.grid, _eval_nodes(ly[i], b, n) + dual_rl(costate, prob.params).values))
    return out


def _window(prob: Problem, margin: Optional[float]) -> int:
    margin = prob.options.el_margin if margin is None else margin
    return max(2, int(math.ceil(margin * (prob.grid.n - 1) - 1e-9)))


def el_residual_max(
    prob: Problem,
    y: Trajectory,
    integrand: Optional[ExprAst] = None,
    margin: Optional[float] = None,
) -> float:
    """Max of the EL residual away from the endpoints.

    The costate is generically singular at the anchors, so nodes within
    ``margin * (b - a)`` of either end are skipped (``prob.options.el_margin``
    by default); the endpoints and their neighbours are always skipped.
    """
    m = _window(prob, margin)
    res = el_residual(prob, y, integrand)
    return float(max(np.max(np.abs(r.values[m:-m])) for r in res))


def _el_scale(prob: Problem, y: Trajectory, integrand: Optional[ExprAst]) -> float:
    ast = prob.lagrangian if integrand is None else integrand
    ly, _ = _first_partials(ast)
    V = _derivative_values(prob, y.values)
    b = _bindings(prob, y.values, V)
    m = _window(prob, None)
    scale = 1.0
    for d in ly:
        scale = max(scale, float(np.max(np.abs(_eval_nodes(d, b, prob.grid.n)[m:-m]))))
    return scale


def transversality_residual(
    prob: Problem, y: Trajectory, l: int, integrand: Optional[ExprAst] = None
) -> float:
    """Natural boundary residual of component ``l`` at ``x = b``.

    ``gamma * I_right^(1-alpha) c - (1 - gamma) * I_left^(1-beta) c`` at ``b``
    with costate ``c = dL/dv_l`` along ``y``. The right integral vanishes
    identically at ``b`` on the grid, so its limit is taken by linear
    extrapolation from the two nearest interior nodes.
    """
    _check_dims(prob, y)
    if not 0 <= l < prob.dims:
        raise ValueError(f"component index {l} out of range")
    if prob.boundary[l].kind == "fixed":
        raise ValueError(f"component {l} has a fixed right endpoint")
    ast = prob.lagrangian if integrand is None else integrand
    _, lv = _first_partials(ast)
    V = _derivative_values(prob, y.values)
    c = SampledFunction(prob.grid, _eval_nodes(lv[l], _bindings(prob, y.values, V), prob.grid.n))
    p = prob.params
    total = 0.0
    if p.gamma != 0.0:
        ir = rlfi_right(c, 1.0 - p.alpha).values
        total += p.gamma * (2.0 * ir[-2] - ir[-3])
    if p.gamma != 1.0:
        total -= (1.0 - p.gamma) * rlfi_left(c, 1.0 - p.beta).values[-1]
    return float(total)


def _bump(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    inside = (x > lo) & (x < hi)
    return np.where(inside, np.sin(np.pi * (x - lo) / (hi - lo)) ** 2, 0.0)


def standard_probes(prob: Problem, r: Optional[int] = None) -> list:
    """``r`` admissible bump variations with disjoint supports.

    Probe ``j`` is a ``sin^2`` bump on the ``j``-th of ``r`` equal
    subintervals, acting on component ``j mod N``.
    """
    r = len(prob.constraints) if r is None else r
    if r < 1:
        raise ValueError("need at least one probe")
    g = prob.grid
    x = g.nodes
    edges = np.linspace(g.a, g.b, r + 1)
    probes = []
    for j in range(r):
        h = np.zeros((prob.dims, g.n))
        h[j % prob.dims] = _bump(x, edges[j], edges[j + 1])
        if not np.any(h):
            raise ValueError("grid too coarse for the requested number of probes")
        probes.append(VariationProbe(Trajectory(g, h)))
    return probes


def random_probe(prob: Problem, rng: np.random.Generator, modes: int = 5, pinned=frozenset()) -> VariationProbe:
    """Random smooth admissible variation (sine series, plus a linear ramp at free ends)."""
    g = prob.grid
    s = (g.nodes - g.a) / (g.b - g.a)
    h = np.zeros((prob.dims, g.n))
    for i in range(prob.dims):
        coef = rng.normal(size=modes)
        h[i] = sum(c * np.sin((k + 1) * np.pi * s) for k, c in enumerate(coef))
        h[i, 0] = 0.0
        if _fixed_right(prob, pinned)[i]:
            h[i, -1] = 0.0
        else:
            h[i] += rng.normal() * s
    return VariationProbe(Trajectory(g, h))


def regularity_matrix(prob: Problem, y: Trajectory, probes: Sequence[VariationProbe]) -> np.ndarray:
    """Matrix of constraint first variations ``A[i, j] = dG_i(y; h_j)``."""
    r = len(prob.constraints)
    if r == 0:
        raise ValueError("problem has no isoperimetric constraints")
    if len(probes) < r:
        raise ValueError(f"need {r} probes for {r} constraints, got {len(probes)}")
    return np.array(
        [[first_variation(prob, y, probes[j], c.integrand) for j in range(r)] for c in prob.constraints]
    )


def check_regularity(prob: Problem, y: Trajectory, probes: Sequence[VariationProbe]) -> float:
    """Determinant of the constraint first-variation matrix; near zero means abnormal."""
    return float(np.linalg.det(regularity_matrix(prob, y, probes)))


def _normalized_det(mat: np.ndarray) -> float:
    rows = np.linalg.norm(mat, axis=1)
    if np.any(rows == 0.0):
        return 0.0
    return float(abs(np.linalg.det(mat)) / np.prod(rows))


# -- the discrete functional ---------------------------------------------------


class _Discrete:
    """Discretized functional over the free node values of a problem."""

    def __init__(self, prob: Problem, integrand: ExprAst, mask: np.ndarray, fixed: np.ndarray):
        self.prob = prob
        self.ast = integrand
        self.mask = mask
        self.fixed = fixed
        self.M = _combined_matrix(prob)
        self.w = _weights(prob.grid)
        self.index = np.flatnonzero(mask.ravel())

    def unpack(self, z: np.ndarray) -> np.ndarray:
        Y = self.fixed.copy()
        Y[self.mask] = z
        return Y

    def _bind(self, Y):
        V = Y @ self.M.T
        return V, _bindings(self.prob, Y, V)

    def value(self, Y: np.ndarray) -> float:
        _, b = self._bind(Y)
        return float(self.w @ _eval_nodes(self.ast, b, self.prob.grid.n))

    def full_gradient(self, Y: np.ndarray, ast: Optional[ExprAst] = None) -> np.ndarray:
        ast = self.ast if ast is None else ast
        ly, lv = _first_partials(ast)
        _, b = self._bind(Y)
        n = self.prob.grid.n
        return np.array(
            [self.w * _eval_nodes(ly[i], b, n) + (self.w * _eval_nodes(lv[i], b, n)) @ self.M for i in range(len(ly))]
        )

    def fun_grad(self, z: np.ndarray):
        Y = self.unpack(z)
        return self.value(Y), self.full_gradient(Y)[self.mask]

    def full_hessian(self, Y: np.ndarray) -> np.ndarray:
        second = _second_partials(self.ast)
        N = self.prob.dims
        n = self.prob.grid.n
        M, w = self.M, self.w
        _, b = self._bind(Y)
        H = np.zeros((N * n, N * n))
        for i in range(N):
            for j in range(N):
                blk = np.zeros((n, n))
                yy, yv = second[i][j], second[i][N + j]
                vy, vv = second[N + i][j], second[N + i][N + j]
                if not yy.is_constant_zero:
                    blk[np.diag_indices(n)] += w * _eval_nodes(yy, b, n)
                if not yv.is_constant_zero:
                    blk += (w * _eval_nodes(yv, b, n))[:, None] * M
                if not vy.is_constant_zero:
                    blk += ((w * _eval_nodes(vy, b, n))[:, None] * M).T
                if not vv.is_constant_zero:
                    blk += M.T @ ((w * _eval_nodes(vv, b, n))[:, None] * M)
                H[i * n:(i + 1) * n, j * n:(j + 1) * n] = blk
        return H

    def hessian(self, z: np.ndarray) -> np.ndarray:
        H = self.full_hessian(self.unpack(z))
        return H[np.ix_(self.index, self.index)]


def _layout(prob: Problem, pinned=frozenset()):
    """Initial trajectory and the mask of decision variables."""
    g = prob.grid
    s = (g.nodes - g.a) / (g.b - g.a)
    N = prob.dims
    Y = np.zeros((N, g.n))
    mask = np.zeros((N, g.n), dtype=bool)
    mask[:, 1:-1] = True
    for i, bc in enumerate(prob.boundary):
        if bc.kind == "fixed" or i in pinned:
            right = bc.right
        else:
            right = 0.0
            mask[i, -1] = True
        Y[i] = bc.left + (right - bc.left) * s
        Y[i, 0] = bc.left
        Y[i, -1] = right
    return Y, mask


def functional_gradient(prob: Problem, y: Trajectory, integrand: Optional[ExprAst] = None) -> np.ndarray:
    """Analytic gradient of the discretized functional w.r.t. every node value.

    ``dJ/dy_i(x_k) = w_k dL/dy_i(x_k) + sum_m w_m dL/dv_i(x_m) M[m, k]``.
    Shape ``(N, n)``; entries at fixed nodes are included for inspection.
    """
    _check_dims(prob, y)
    ast = prob.lagrangian if integrand is None else integrand
    Y = np.array(y.values)
    disc = _Discrete(prob, ast, np.ones_like(Y, dtype=bool), Y)
    return disc.full_gradient(Y)


def _minimize(prob: Problem, integrand: ExprAst, Y0: np.ndarray, mask: np.ndarray):
    disc = _Discrete(prob, integrand, mask, Y0)
    opts = prob.options
    res = minimize_bfgs(disc.fun_grad, Y0[mask], disc.hessian, tol_g=opts.tol_g, max_iter=opts.max_iter)
    Y = disc.unpack(res.x)
    log.debug("inner solve: %s after %d iterations (|g|=%.3g)", res.message, res.iterations,
              float(np.max(np.abs(res.grad))) if res.grad.size else 0.0)
    return Y, res, disc


def _gmax(res: OptimizeResult) -> float:
    return float(np.max(np.abs(res.grad))) if res.grad.size else 0.0


def _base_report(prob, Y, res, integrand=None) -> SolveReport:
    traj = Trajectory(prob.grid, Y)
    el = el_residual_max(prob, traj, integrand)
    tol = prob.options.tol_r * _el_scale(prob, traj, integrand)
    return SolveReport(
        trajectory=traj,
        cost=evaluate_functional(prob, traj),
        el_residual_max=el,
        iterations=res.iterations,
        gradient_max=_gmax(res),
        el_tolerance=tol,
    )


# -- solvers -----------------------------------------------------------------


def solve_basic(prob: Problem) -> SolveReport:
    """Minimize with both endpoints of every component fixed."""
    if prob.constraints:
        raise ValueError("solve_basic does not take isoperimetric constraints")
    if any(bc.kind != "fixed" for bc in prob.boundary):
        raise ValueError("solve_basic needs fixed right endpoints; use solve_free_endpoint")
    Y0, mask = _layout(prob)
    Y, res, _ = _minimize(prob, prob.lagrangian, Y0, mask)
    rep = _base_report(prob, Y, res)
    el_ok = rep.el_residual_max < rep.el_tolerance
    rep.converged = res.converged and el_ok
    rep.message = res.message if el_ok else f"{res.message}; EL residual above tolerance"
    return rep


def solve_free_endpoint(prob: Problem) -> SolveReport:
    """Minimize with some right endpoints free or bounded above.

    Bounded components are handled with an active set: a violated bound is
    pinned and the problem re-solved; a pinned bound whose transversality
    residual has the wrong sign is released again.
    """
    if prob.constraints:
        raise ValueError("free-endpoint problems with isoperimetric constraints are not supported")
    open_ends = [i for i, bc in enumerate(prob.boundary) if bc.kind != "fixed"]
    if not open_ends:
        raise ValueError("no free or bounded right endpoint; use solve_basic")
    opts = prob.options
    bounded = [i for i in open_ends if prob.boundary[i].kind == "upper"]
    pinned: frozenset = frozenset()
    seen = set()
    iterations = 0
    Y = None
    for _ in range(2 ** len(bounded) + 1):
        seen.add(pinned)
        Y0, mask = _layout(prob, pinned)
        Y, res, _ = _minimize(prob, prob.lagrangian, Y0, mask)
        iterations += res.iterations
        traj = Trajectory(prob.grid, Y)
        violated = {i for i in bounded if i not in pinned and Y[i, -1] > prob.boundary[i].right + opts.tol_c}
        if violated:
            nxt = pinned | violated
        else:
            wrong_sign = {i for i in pinned if transversality_residual(prob, traj, i) > opts.tol_t}
            if not wrong_sign:
                break
            nxt = pinned - wrong_sign
        if nxt in seen:
            break
        pinned = frozenset(nxt)

    rep = _base_report(prob, Y, res)
    rep.iterations = iterations
    traj = rep.trajectory
    ok = res.converged and rep.el_residual_max < rep.el_tolerance
    problems = [] if ok else [res.message if not res.converged else "EL residual above tolerance"]
    for i in open_ends:
        bc = prob.boundary[i]
        t = transversality_residual(prob, traj, i)
        rep.transversality_residuals[i] = t
        if bc.kind == "free":
            rep.branches[i] = "free"
            if abs(t) >= opts.tol_t:
                problems.append(f"|T| too large for y{i + 1}")
            continue
        slack = traj.values[i, -1] - bc.right
        rep.branches[i] = "active" if i in pinned else "inactive"
        cs = slack * t
        if slack > opts.tol_c:
            problems.append(f"bound violated for y{i + 1}")
        if t > opts.tol_t:
            problems.append(f"T has the wrong sign for y{i + 1}")
        if i not in pinned and abs(t) >= opts.tol_t:
            problems.append(f"|T| too large for inactive y{i + 1}")
        if abs(cs) >= opts.tol_cs:
            problems.append(f"complementary slackness fails for y{i + 1}")
    rep.complementary_slackness = np.array(
        [(traj.values[i, -1] - prob.boundary[i].right) * rep.transversality_residuals[i] for i in bounded]
    )
    rep.converged = not problems
    rep.message = "; ".join(problems) if problems else res.message
    return rep


def _constraint_values(prob: Problem, Y: np.ndarray, constraints) -> np.ndarray:
    traj = Trajectory(prob.grid, Y)
    return np.array([evaluate_functional(prob, traj, c.integrand) for c in constraints])


def _solve_equality(prob: Problem, constraints: Sequence[Constraint], Y0: np.ndarray, lam0: np.ndarray):
    """Newton iteration on the multipliers with an inner direct solve of ``int F``.

    Returns ``(Y, lam, inner_result, iterations, status)`` where status is
    ``"ok"``, ``"abnormal"`` or ``"cap"``.
    """
    opts = prob.options
    _, mask = _layout(prob)
    targets = np.array([c.target for c in constraints])
    lam = np.array(lam0, dtype=float)
    Y = Y0
    iterations = 0
    res = None
    for _ in range(opts.max_outer):
        F = _augmented(prob.lagrangian, constraints, lam)
        Y, res, disc = _minimize(prob, F, Y, mask)
        iterations += res.iterations
        resid = _constraint_values(prob, Y, constraints) - targets
        if np.max(np.abs(resid)) < opts.tol_c and res.converged:
            return Y, lam, res, iterations, "ok"
        grads = np.array([disc.full_gradient(Y, c.integrand)[mask] for c in constraints]).T
        try:
            sens = grads.T @ np.linalg.solve(disc.hessian(Y[mask]), grads)
        except np.linalg.LinAlgError:
            return Y, lam, res, iterations, "abnormal"
        if _normalized_det(sens) < opts.tol_reg:
            return Y, lam, res, iterations, "abnormal"
        lam = lam - np.linalg.solve(sens, resid)
    return Y, lam, res, iterations, "cap"


def _check_fixed(prob: Problem, what: str):
    if any(bc.kind != "fixed" for bc in prob.boundary):
        raise ValueError(f"{what} needs fixed boundary conditions")
    if not prob.constraints:
        raise ValueError(f"{what} needs at least one constraint")


def _regularity(prob: Problem, constraints, Y: np.ndarray) -> tuple:
    sub = prob.replace(constraints=tuple(constraints))
    traj = Trajectory(prob.grid, Y)
    mat = regularity_matrix(sub, traj, standard_probes(sub))
    return float(np.linalg.det(mat)), _normalized_det(mat)


def solve_isoperimetric(prob: Problem) -> SolveReport:
    """Minimize subject to equality constraints ``int G_j dx = l_j``.

    Stationarity is imposed on ``F = L - sum lam_j G_j``; the reported
    multipliers use that sign.
    """
    _check_fixed(prob, "solve_isoperimetric")
    if any(c.relation != "eq" for c in prob.constraints):
        raise ValueError("inequality constraints present; use solve_isoperimetric_ineq")
    opts = prob.options
    cons = prob.constraints
    r = len(cons)
    Y0, _ = _layout(prob)
    det0, ndet0 = _regularity(prob, cons, Y0)
    if ndet0 < opts.tol_reg:
        traj = Trajectory(prob.grid, Y0)
        return SolveReport(
            trajectory=traj,
            cost=evaluate_functional(prob, traj),
            el_residual_max=float("nan"),
            multipliers=np.zeros(r),
            constraint_residuals=_constraint_values(prob, Y0, cons) - [c.target for c in cons],
            abnormal=True,
            regularity_det=det0,
            message="constraint first variations are degenerate (abnormal case)",
        )
    Y, lam, res, iterations, status = _solve_equality(prob, cons, Y0, np.zeros(r))
    F = _augmented(prob.lagrangian, cons, lam)
    rep = _base_report(prob, Y, res, F)
    rep.iterations = iterations
    rep.multipliers = lam
    rep.constraint_residuals = _constraint_values(prob, Y, cons) - np.array([c.target for c in cons])
    det, ndet = _regularity(prob, cons, Y)
    rep.regularity_det = det
    rep.abnormal = status == "abnormal" or ndet < opts.tol_reg
    problems = []
    if status != "ok":
        problems.append("abnormal: constraint sensitivity is singular" if status == "abnormal"
                        else "multiplier iteration cap reached")
    if np.max(np.abs(rep.constraint_residuals)) >= opts.tol_c:
        problems.append("constraint residual above tolerance")
    if not rep.el_residual_max < rep.el_tolerance:
        problems.append("EL residual above tolerance")
    rep.converged = not problems and not rep.abnormal
    rep.message = "; ".join(problems) if problems else res.message
    return rep


def solve_isoperimetric_ineq(prob: Problem) -> SolveReport:
    """Minimize subject to ``int G_j dx <= l_j`` (and any equality constraints).

    Active-set loop: violated constraints are activated as equalities, active
    ones with a negative multiplier are dropped. Multipliers of inequality
    constraints are reported for ``F = L + sum mu_j (G_j - l_j/(b-a) + phi_j^2)``
    and are therefore nonnegative when active; equality multipliers keep the
    ``L - sum lam_j G_j`` sign. Constraints never activated get exactly 0.
    """
    _check_fixed(prob, "solve_isoperimetric_ineq")
    opts = prob.options
    cons = prob.constraints
    r = len(cons)
    ineq = [j for j, c in enumerate(cons) if c.relation == "le"]
    targets = np.array([c.target for c in cons])
    active = {j for j, c in enumerate(cons) if c.relation == "eq"}
    lam_eq = np.zeros(r)  # L - sum lam G convention
    Y0, mask = _layout(prob)
    Y = Y0
    iterations = 0
    status = "ok"
    res = None
    seen = set()
    activations = 0
    while True:
        order = sorted(active)
        if order:
            sub = [cons[j] for j in order]
            if _regularity(prob, sub, Y)[1] < opts.tol_reg:
                status = "abnormal"
                break
            Y, lam_sub, res, it, status = _solve_equality(prob, sub, Y, lam_eq[order])
            lam_eq[:] = 0.0
            lam_eq[order] = lam_sub
        else:
            Y, res, _ = _minimize(prob, prob.lagrangian, Y, mask)
            it = res.iterations
            lam_eq[:] = 0.0
            status = "ok" if res.converged else "inner"
        iterations += it
        if status == "abnormal":
            break
        seen.add(frozenset(active))
        slack = targets - _constraint_values(prob, Y, cons)
        mu = -lam_eq
        violated = {j for j in ineq if j not in active and slack[j] < -opts.tol_c}
        negative = [j for j in ineq if j in active and mu[j] < -opts.tol_cs]
        if not violated and not negative:
            break
        if violated:
            nxt = active | violated
        else:
            nxt = active - {min(negative, key=lambda j: mu[j])}
        activations += 1
        if frozenset(nxt) in seen or activations > 2 ** r:
            status = "cycling"
            break
        active = set(nxt)

    F = _augmented(prob.lagrangian, cons, lam_eq)
    if res is None:
        res = OptimizeResult(Y[mask], float("nan"), np.zeros(0), 0, False, "not solved", 0)
    rep = _base_report(prob, Y, res, F)
    rep.iterations = iterations
    mult = lam_eq.copy()
    for j in ineq:
        mult[j] = -lam_eq[j] if j in active else 0.0
    rep.multipliers = mult + 0.0  # normalize -0.0
    values = _constraint_values(prob, Y, cons)
    rep.constraint_residuals = values - targets
    rep.slacks = targets - values
    cs = np.zeros(r)
    for j in ineq:
        cs[j] = mult[j] * rep.slacks[j]
    rep.complementary_slackness = cs
    rep.branches = {}
    problems = []
    if status not in ("ok",):
        problems.append({"abnormal": "abnormal: active constraints are degenerate",
                         "cycling": "active set cycling",
                         "cap": "multiplier iteration cap reached",
                         "inner": res.message}.get(status, status))
    rep.abnormal = status == "abnormal"
    for j in ineq:
        if rep.slacks[j] < -opts.tol_c:
            problems.append(f"constraint {j + 1} violated")
        if mult[j] < -opts.tol_cs:
            problems.append(f"multiplier {j + 1} negative")
        if abs(cs[j]) >= opts.tol_cs:
            problems.append(f"complementary slackness fails for constraint {j + 1}")
    for j, c in enumerate(cons):
        if c.relation == "eq" and abs(rep.constraint_residuals[j]) >= opts.tol_c:
            problems.append(f"equality constraint {j + 1} not met")
    if not rep.el_residual_max < rep.el_tolerance:
        problems.append("EL residual above tolerance")
    if active:
        det, _ = _regularity(prob, [cons[j] for j in sorted(active)], Y)
        rep.regularity_det = det
    rep.converged = not problems
    rep.message = "; ".join(problems) if problems else res.message
    return rep


def solve(prob: Problem) -> SolveReport:
    """Dispatch to the solver matching the problem's boundary data and constraints."""
    if prob.constraints:
        if any(c.relation == "le" for c in prob.constraints):
            return solve_isoperimetric_ineq(prob)
        return solve_isoperimetric(prob)
    if any(bc.kind != "fixed" for bc in prob.boundary):
        return solve_free_endpoint(prob)
    return solve_basic(prob)


def variation_certificate(prob: Problem, report: SolveReport, probes: int = 5, seed: int = 0) -> float:
    """Largest ``|dF(y; h)|`` over random admissible probes at a solved point.

    Bounds recorded as active are treated as fixed ends. With constraints the
    variation is taken of ``F = L - sum lam_j G_j`` using the reported
    multipliers (inequality multipliers enter with the opposite sign).
    """
    rng = np.random.default_rng(seed)
    pinned = frozenset(i for i, b in report.branches.items() if b == "active")
    integrand = None
    if prob.constraints:
        lams = [
            -m if c.relation == "le" else m
            for c, m in zip(prob.constraints, np.asarray(report.multipliers, dtype=float))
        ]
        integrand = _augmented(prob.lagrangian, prob.constraints, lams)
    worst = 0.0
    for _ in range(probes):
        probe = random_probe(prob, rng, pinned=pinned)
        worst = max(worst, abs(first_variation(prob, report.trajectory, probe, integrand)))
    return worst
