import numpy as np
import scipy.optimize

from fracvar.optimize import minimize_bfgs, pd_inverse


def rosen(x):
    return scipy.optimize.rosen(x), scipy.optimize.rosen_der(x)


def test_rosenbrock_converges():
    res = minimize_bfgs(rosen, np.array([-1.2, 1.0, 0.5]), tol_g=1e-8, max_iter=500)
    assert res.converged
    assert np.allclose(res.x, 1.0, atol=1e-6)


def test_exact_hessian_solves_quadratic_in_one_step():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(30, 30))
    q = a @ a.T + 1e-3 * np.eye(30)
    b = rng.normal(size=30)
    res = minimize_bfgs(lambda x: (0.5 * x @ q @ x - b @ x, q @ x - b), np.zeros(30), hess=lambda x: q, tol_g=1e-9)
    assert res.converged and res.iterations <= 2
    assert np.allclose(res.x, np.linalg.solve(q, b), atol=1e-8)


def test_iteration_cap_is_reported_not_raised():
    res = minimize_bfgs(rosen, np.array([-1.2, 1.0]), max_iter=1)
    assert not res.converged
    assert res.message == "iteration cap reached"


def test_empty_problem():
    res = minimize_bfgs(lambda x: (3.0, np.zeros(0)), np.zeros(0))
    assert res.converged and res.fun == 3.0


def test_pd_inverse_shifts_indefinite_matrices():
    h = np.diag([2.0, -1.0, 0.5])
    inv = pd_inverse(h)
    assert np.all(np.linalg.eigvalsh(inv) > 0)
    good = np.array([[4.0, 1.0], [1.0, 3.0]])
    assert np.allclose(pd_inverse(good), np.linalg.inv(good))
