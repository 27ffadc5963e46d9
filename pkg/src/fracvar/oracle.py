"""Closed-form references used as ground truth by the tests and ``fracvar verify``.

Nothing in here reuses the discretization shortcuts of :mod:`fracvar.variational`:
the brute-force variation assembles the functional from the operator matrix
and its own quadrature weights, so the two routes can be compared.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .expr import Bindings
from .fracops import (
    FracParams,
    Grid,
    OperatorKind,
    SampledFunction,
    build_operator_matrix,
    cfd_left,
    cfd_right,
    rlfd_left,
    rlfd_right,
    rlfi_left,
    rlfi_right,
)
from .special import gamma
from .variational import Problem, Trajectory

__all__ = [
    "PowerRuleCase",
    "power_reference",
    "classical_limit_solution",
    "CLASSICAL_TAGS",
    "brute_force_first_variation",
    "CaseResult",
    "run_verification",
]

_KINDS = ("rlfi", "cfd", "rlfd")


@dataclass(frozen=True)
class PowerRuleCase:
    """Power function ``(x - a)^p`` (left) or ``(b - x)^p`` (right) under one operator."""

    anchor: str
    kind: str
    order: float
    exponent: float

    def __post_init__(self):
        if self.anchor not in ("left", "right"):
            raise ValueError(f"anchor must be 'left' or 'right', got {self.anchor!r}")
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if not 0.0 < self.order < 1.0:
            raise ValueError("order must lie in (0,1)")
        p = self.exponent
        if not math.isfinite(p) or p <= -1.0:
            raise ValueError(f"exponent must exceed -1, got {p!r}")
        # Caputo needs an absolutely continuous argument
        if self.kind == "cfd" and p < 0.0:
            raise ValueError(f"Caputo power rule needs exponent >= 0, got {p!r}")

    @property
    def annihilated(self) -> bool:
        return self.kind == "cfd" and self.exponent == 0.0

    @property
    def coefficient(self) -> float:
        if self.annihilated:
            return 0.0
        p = self.exponent
        if self.kind == "rlfi":
            return gamma(p + 1.0) / gamma(p + 1.0 + self.order)
        return gamma(p + 1.0) / gamma(p + 1.0 - self.order)

    @property
    def result_exponent(self) -> float:
        if self.kind == "rlfi":
            return self.exponent + self.order
        return self.exponent - self.order

    def operator(self) -> Callable[[SampledFunction, float], SampledFunction]:
        table = {
            ("rlfi", "left"): rlfi_left,
            ("rlfi", "right"): rlfi_right,
            ("cfd", "left"): cfd_left,
            ("cfd", "right"): cfd_right,
            ("rlfd", "left"): rlfd_left,
            ("rlfd", "right"): rlfd_right,
        }
        return table[(self.kind, self.anchor)]

    def argument(self, x, a: float, b: float):
        x = np.asarray(x, dtype=float)
        dist = x - a if self.anchor == "left" else b - x
        return np.maximum(dist, 0.0) ** self.exponent


def power_reference(case: PowerRuleCase, x, a: float, b: float):
    """Exact image of the power function of ``case`` at ``x``.

    The anchor point itself is returned as 0 for positive result exponents and
    as ``inf`` for negative ones (the RL derivative of a constant, say).
    """
    x = np.asarray(x, dtype=float)
    if case.annihilated:
        return np.zeros_like(x) if x.ndim else 0.0
    dist = x - a if case.anchor == "left" else b - x
    if np.any(dist < 0.0):
        raise ValueError("x lies outside [a, b]")
    q = case.result_exponent
    with np.errstate(divide="ignore"):
        out = case.coefficient * np.power(dist, q)
    return out if out.ndim else float(out)


# -- classical limits --------------------------------------------------------

CLASSICAL_TAGS = ("line", "area_constrained", "free_end_constant")


def classical_limit_solution(
    tag: str,
    grid: Grid,
    left: float = 0.0,
    right: float = 1.0,
    area: float = 1.0,
) -> Trajectory:
    """Sampled classical (order 1) minimizer of ``int y'^2`` for ``tag``.

    ``line`` joins ``left`` to ``right``; ``area_constrained`` vanishes at both
    ends and has integral ``area`` (``6c x (1 - x)`` on the unit interval);
    ``free_end_constant`` is the constant ``left``.
    """
    x = grid.nodes
    a, b = grid.a, grid.b
    if tag == "line":
        y = left + (right - left) * (x - a) / (b - a)
    elif tag == "area_constrained":
        y = 6.0 * area * (x - a) * (b - x) / (b - a) ** 3
    elif tag == "free_end_constant":
        y = np.full(grid.n, float(left))
    else:
        raise ValueError(f"unknown classical tag {tag!r}; expected one of {CLASSICAL_TAGS}")
    return Trajectory(grid, y[None, :])


# -- brute-force first variation ---------------------------------------------

_BRUTE_EPS = (1e-3, 1e-4, 1e-5)


def _functional(prob: Problem, Y: np.ndarray, op: np.ndarray, w: np.ndarray) -> float:
    V = Y @ op.T
    vals = prob.lagrangian.eval(Bindings(prob.grid.nodes, list(Y), list(V), prob.parameters))
    vals = np.broadcast_to(vals, (prob.grid.n,))
    return float(np.dot(w, vals))


def brute_force_first_variation(prob: Problem, y: Trajectory, h: Trajectory) -> float:
    """``d/de J(y + e h)`` at 0 from symmetric quotients at e = 1e-3, 1e-4, 1e-5."""
    n = prob.grid.n
    op = build_operator_matrix(OperatorKind.COMBINED_CAPUTO, prob.grid, prob.params).matrix
    w = np.full(n, (prob.grid.b - prob.grid.a) / (n - 1))
    w[[0, -1]] *= 0.5
    Y, H = np.asarray(y.values, dtype=float), np.asarray(h.values, dtype=float)
    # Neville table over e^2, step ratio 10 between rows
    table = []
    for eps in _BRUTE_EPS:
        jp = _functional(prob, Y + eps * H, op, w)
        jm = _functional(prob, Y - eps * H, op, w)
        row = [(jp - jm) / (2.0 * eps)]
        for k, prev in enumerate(table[-1] if table else []):
            ratio = (10.0 ** (k + 1)) ** 2
            row.append(row[k] + (row[k] - prev) / (ratio - 1.0))
        table.append(row)
    # the last Richardson level amplifies round-off; stop at the first one
    return table[-1][1]


# -- self-check suite ----------------------------------------------------------


@dataclass(frozen=True)
class CaseResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _case(name: str, fn: Callable[[], tuple]) -> CaseResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CaseResult(name, bool(ok), detail, time.perf_counter() - t0)


def _gamma_identities():
    checks = [
        (gamma(0.5), math.sqrt(math.pi)),
        (gamma(1.5), 0.5 * math.sqrt(math.pi)),
        (gamma(1.0), 1.0),
        (gamma(5.0), 24.0),
        (gamma(4.5), 3.5 * 2.5 * 1.5 * 0.5 * math.sqrt(math.pi)),
    ]
    err = max(abs(got - want) / want for got, want in checks)
    rec = max(abs(gamma(z + 1.0) - z * gamma(z)) / (z * gamma(z)) for z in (0.1, 0.37, 2.7, 7.25))
    worst = max(err, rec)
    return worst < 1e-12, f"max relative error {worst:.3g}"


_RATES = {"rlfi": 1.8, "rlfd": 1.8}


def _power_rule(case: PowerRuleCase, sizes=(101, 201, 401, 801), tol: float = 1e-3):
    # expected rate on a fixed window away from both ends; the L1 scheme loses 0.2 of slack
    min_rate = _RATES.get(case.kind, 2.0 - case.order - 0.2)

    def run():
        errs = []
        for n in sizes:
            grid = Grid(0.0, 1.0, n)
            x = grid.nodes
            f = SampledFunction(grid, case.argument(x, 0.0, 1.0))
            got = case.operator()(f, case.order).values
            want = power_reference(case, x, 0.0, 1.0)
            window = (x >= 0.05) & (x <= 0.95)
            errs.append(float(np.max(np.abs(got - want)[window])))
        if errs[-1] < 1e-12:
            return True, f"exact to round-off ({errs[-1]:.2g})"
        rate = min(math.log2(e0 / e1) for e0, e1 in zip(errs, errs[1:]))
        ok = errs[-1] < tol and rate >= min_rate
        return ok, f"error {errs[-1]:.3g} at n={sizes[-1]}, min rate {rate:.2f} (need {min_rate:.2f})"

    return run


def _classical_line():
    from .expr import parse
    from .variational import Boundary, solve_basic

    grid = Grid(0.0, 1.0, 501)
    prob = Problem(FracParams(0.999, 0.999, 1.0), grid, parse("v^2"), [Boundary.fixed(0.0, 1.0)])
    rep = solve_basic(prob)
    ref = classical_limit_solution("line", grid, 0.0, 1.0)
    dist = float(np.max(np.abs(rep.trajectory.values - ref.values)))
    return rep.converged and dist < 2e-2 and abs(rep.cost - 1.0) < 5e-2, (
        f"distance {dist:.3g}, cost {rep.cost:.6f}"
    )


def _classical_area():
    from .expr import parse
    from .variational import Boundary, Constraint, solve_isoperimetric

    grid = Grid(0.0, 1.0, 501)
    prob = Problem(
        FracParams(0.999, 0.999, 1.0),
        grid,
        parse("v^2"),
        [Boundary.fixed(0.0, 0.0)],
        [Constraint(parse("y"), 1.0)],
    )
    rep = solve_isoperimetric(prob)
    ref = classical_limit_solution("area_constrained", grid, area=1.0)
    dist = float(np.max(np.abs(rep.trajectory.values - ref.values)))
    res = float(np.max(np.abs(rep.constraint_residuals)))
    return rep.converged and dist < 2e-2 and res < 1e-8, f"distance {dist:.3g}, constraint residual {res:.3g}"


def _classical_free_end():
    from .expr import parse
    from .variational import Boundary, solve_free_endpoint

    grid = Grid(0.0, 1.0, 201)
    prob = Problem(FracParams(0.5, 0.5, 1.0), grid, parse("v^2"), [Boundary.free(1.0)])
    rep = solve_free_endpoint(prob)
    ref = classical_limit_solution("free_end_constant", grid, 1.0)
    dist = float(np.max(np.abs(rep.trajectory.values - ref.values)))
    t = abs(rep.transversality_residuals[0])
    return rep.converged and dist < 1e-6 and t < 5e-2, f"distance {dist:.3g}, |T| {t:.3g}"


def random_variation_case(rng: np.random.Generator, n: int = 61):
    """A random smooth problem, trajectory and admissible direction (shared with the tests)."""
    from .expr import parse
    from .variational import Boundary

    grid = Grid(0.0, 1.0, n)
    x = grid.nodes
    p = FracParams(*rng.uniform(0.15, 0.9, 2), rng.choice([0.0, 1.0, rng.uniform(0.1, 0.9)]))
    lagrangians = [
        "v^2 + y^2",
        "(v - sin(x))^2 + 0.5*y^4",
        "exp(0.3*y)*v^2 + x*y",
        "cos(y)*v + v^2*(1 + x^2)",
        "sqrt(1 + v^2) + y*v",
    ]
    text = lagrangians[int(rng.integers(len(lagrangians)))]
    free = bool(rng.integers(2))
    bc = Boundary.free(float(rng.normal())) if free else Boundary.fixed(float(rng.normal()), float(rng.normal()))
    prob = Problem(p, grid, parse(text), [bc])
    c = rng.normal(size=4)
    y = c[0] + c[1] * x + c[2] * np.sin(np.pi * x) + c[3] * x**2
    y = y - (y[0] - bc.left)
    if not free:
        y = y + (bc.right - y[-1]) * x
    k = int(rng.integers(1, 4))
    hv = np.sin(k * np.pi * x) * rng.uniform(0.5, 2.0)
    if free:
        hv = hv + rng.normal() * x
    hv[0] = 0.0
    if not free:
        hv[-1] = 0.0
    return prob, Trajectory(grid, y[None, :]), Trajectory(grid, hv[None, :])


def _variation_cross_check(cases: int = 20, seed: int = 0):
    def run():
        from .variational import VariationProbe, first_variation

        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(cases):
            prob, y, h = random_variation_case(rng)
            a = first_variation(prob, y, VariationProbe(h))
            b = brute_force_first_variation(prob, y, h)
            worst = max(worst, abs(a - b))
        return worst < 1e-8, f"max |difference| {worst:.3g} over {cases} cases"

    return run


def run_verification(seed: int = 0) -> List[CaseResult]:
    """Run the oracle suite: Gamma identities, power rules, classical limits, variations."""
    results = [_case("gamma identities", _gamma_identities)]
    for kind in _KINDS:
        for anchor in ("left", "right"):
            for p in (1.0, 2.0, 3.0, 1.5):
                case = PowerRuleCase(anchor, kind, 0.5, p)
                results.append(_case(f"power rule {kind}-{anchor} p={p:g}", _power_rule(case)))
    results.append(_case("classical limit: line", _classical_line))
    results.append(_case("classical limit: area constrained", _classical_area))
    results.append(_case("classical limit: free end constant", _classical_free_end))
    results.append(_case("first variation cross-check", _variation_cross_check(seed=seed)))
    return results
