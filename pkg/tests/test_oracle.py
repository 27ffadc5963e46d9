import time

import numpy as np
import pytest
import scipy.special

import fracvar.special
from fracvar.expr import parse
from fracvar.fracops import FracParams, Grid, trapezoid
from fracvar.oracle import (
    PowerRuleCase,
    brute_force_first_variation,
    classical_limit_solution,
    power_reference,
    random_variation_case,
    run_verification,
)
from fracvar.variational import Boundary, Problem, Trajectory, VariationProbe, first_variation


@pytest.mark.parametrize("kind", ["rlfi", "cfd", "rlfd"])
@pytest.mark.parametrize("p", [0.5, 1.0, 2.0, 3.7])
@pytest.mark.parametrize("order", [0.1, 0.5, 0.9])
def test_coefficients_match_scipy(kind, p, order):
    case = PowerRuleCase("left", kind, order, p)
    shift = order if kind == "rlfi" else -order
    want = scipy.special.gamma(p + 1) / scipy.special.gamma(p + 1 + shift)
    assert case.coefficient == pytest.approx(want, rel=1e-12)


def test_reference_examples():
    assert power_reference(PowerRuleCase("left", "cfd", 0.5, 2.0), 1.0, 0.0, 1.0) == pytest.approx(1.5045055561, rel=1e-10)
    assert power_reference(PowerRuleCase("left", "rlfi", 0.5, 0.0), 1.0, 0.0, 1.0) == pytest.approx(1.1283791671, rel=1e-10)
    assert power_reference(PowerRuleCase("left", "cfd", 0.5, 0.0), 0.3, 0.0, 1.0) == 0.0
    right = PowerRuleCase("right", "rlfi", 0.25, 1.0)
    x = np.array([0.0, 0.5, 2.0])
    assert np.allclose(power_reference(right, x, 0.0, 2.0), right.coefficient * (2.0 - x) ** 1.25)


@pytest.mark.parametrize("args", [("left", "cfd", 0.5, -0.5), ("left", "rlfi", 0.5, -1.0), ("up", "cfd", 0.5, 1.0),
                                  ("left", "gl", 0.5, 1.0), ("left", "cfd", 1.0, 1.0)])
def test_invalid_cases(args):
    with pytest.raises(ValueError):
        PowerRuleCase(*args)


def test_reference_outside_interval():
    with pytest.raises(ValueError):
        power_reference(PowerRuleCase("left", "cfd", 0.5, 1.0), -0.1, 0.0, 1.0)


def test_classical_solutions():
    g = Grid(0.0, 1.0, 11)
    assert np.allclose(classical_limit_solution("line", g, 0.0, 1.0).values[0], g.nodes)
    assert np.all(classical_limit_solution("free_end_constant", g, 1.0).values == 1.0)
    with pytest.raises(ValueError):
        classical_limit_solution("catenary", g)


def test_area_solution_integrates_to_target():
    errs = []
    for n in (11, 101, 1001):
        g = Grid(0.0, 1.0, n)
        y = classical_limit_solution("area_constrained", g, area=1.0).values[0]
        assert np.allclose(y, 6 * g.nodes * (1 - g.nodes))
        errs.append(abs(trapezoid(y, g) - 1.0))
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-5


def test_brute_force_agrees_with_first_variation():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        prob, y, h = random_variation_case(rng)
        a = first_variation(prob, y, VariationProbe(h))
        b = brute_force_first_variation(prob, y, h)
        assert abs(a - b) < 1e-8


def test_brute_force_is_linear_in_direction():
    prob, y, h = random_variation_case(np.random.default_rng(5))
    one = brute_force_first_variation(prob, y, h)
    two = brute_force_first_variation(prob, y, Trajectory(h.grid, 2 * h.values))
    assert two == pytest.approx(2 * one, abs=1e-8)


def test_brute_force_vanishes_for_null_costate():
    g = Grid(0.0, 1.0, 51)
    prob = Problem(FracParams(0.5, 0.5, 0.5), g, parse("x^2 + v^2"), [Boundary.fixed(1, 1)])
    y = Trajectory(g, np.ones(g.n))
    h = Trajectory(g, np.sin(np.pi * g.nodes) * (g.nodes < 1))
    assert abs(brute_force_first_variation(prob, y, h)) < 1e-12


def test_verification_suite_passes_quickly():
    t0 = time.perf_counter()
    results = run_verification()
    assert time.perf_counter() - t0 < 60
    failed = [r for r in results if not r.passed]
    assert not failed, failed
    names = " ".join(r.name for r in results)
    assert "gamma" in names and "power rule" in names and "classical" in names and "variation" in names


def test_verification_detects_corrupted_gamma(monkeypatch):
    coef = list(fracvar.special._LANCZOS_COEF)
    coef[2] *= 1.001
    monkeypatch.setattr(fracvar.special, "_LANCZOS_COEF", tuple(coef))
    failed = {r.name for r in run_verification() if not r.passed}
    assert "gamma identities" in failed
