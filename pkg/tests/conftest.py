"""Shared fixtures: quadrature defaults, the standard metric corpus, and
independent symbolic oracles used to freeze expected values."""

from __future__ import annotations

import numpy as np
import pytest
import sympy as sp

from aemass.metrics import (
    RadialProfile,
    make_conformally_flat,
    make_flat,
    make_radial_perturbation,
    make_schwarzschild_isotropic,
    make_shell_profile,
)
from aemass.quadrature import QuadratureScheme


@pytest.fixture(scope="session")
def scheme():
    return QuadratureScheme()


@pytest.fixture(scope="session")
def schedule():
    return [8.0, 16.0, 32.0, 64.0, 128.0, 256.0]


def one_plus_power(A: float, p: float) -> RadialProfile:
    """Profile 1 + A r^-p with closed-form derivatives."""
    base = RadialProfile.power(A, p)
    return RadialProfile(
        eval=lambda r: 1.0 + base.eval(r),
        eval_d1=base.eval_d1,
        eval_d2=base.eval_d2,
        decay_rate=p,
        label=f"1+{A}r^-{p}",
    )


@pytest.fixture(scope="session")
def schwarzschild3():
    return make_schwarzschild_isotropic(3, 1.0)


@pytest.fixture(scope="session")
def kinked_metric():
    return make_radial_perturbation(3, make_shell_profile(0.1, 0.3), inner_radius=2.0)


@pytest.fixture(scope="session")
def analytic_corpus():
    """The analytic metrics exercised by the equality and invariance checks."""
    return [
        make_flat(3),
        make_schwarzschild_isotropic(3, 1.0),
        make_conformally_flat(4, one_plus_power(0.2, 2)),
        make_radial_perturbation(3, RadialProfile.power(0.1, 1.0)),
    ]


def sample_points(metric, count: int, r_min: float, r_max: float, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(count, metric.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.exp(rng.uniform(np.log(r_min), np.log(r_max), size=count))
    return radii[:, None] * dirs


# ---------------------------------------------------------------------------
# Independent symbolic oracles
# ---------------------------------------------------------------------------

_oracle_cache: dict = {}


def sympy_isotropic_curvature(n: int, c_expr: str):
    """Textbook Ricci/Scal of g = c(|x|) delta via a from-scratch symbolic
    Christoffel -> Riemann-contraction pipeline in Cartesian coordinates.

    Returns (ric(x) -> (n, n), scal(x) -> float).  Independent of the
    package's flat-background decomposition.
    """
    key = (n, c_expr)
    if key in _oracle_cache:
        return _oracle_cache[key]
    xs = sp.symbols(f"x1:{n + 1}", real=True, positive=False)
    r = sp.sqrt(sum(x ** 2 for x in xs))
    c = sp.sympify(c_expr).subs(sp.Symbol("r"), r)
    g = [[c if i == j else sp.Integer(0) for j in range(n)] for i in range(n)]
    ginv = [[1 / c if i == j else sp.Integer(0) for j in range(n)] for i in range(n)]

    def d(expr, i):
        return sp.diff(expr, xs[i])

    gamma = [[[sum(ginv[k][l] * (d(g[j][l], i) + d(g[i][l], j) - d(g[i][j], l))
                   for l in range(n)) / 2
               for j in range(n)] for i in range(n)] for k in range(n)]

    ric = [[sum(d(gamma[k][j][i], k) for k in range(n))
            - sum(d(gamma[k][k][i], j) for k in range(n))
            + sum(gamma[k][k][l] * gamma[l][j][i] for k in range(n) for l in range(n))
            - sum(gamma[k][j][l] * gamma[l][k][i] for k in range(n) for l in range(n))
            for j in range(n)] for i in range(n)]
    scal = sum(ginv[i][i] * ric[i][i] for i in range(n))

    ric_fn = sp.lambdify(xs, sp.Matrix(ric), "numpy")
    scal_fn = sp.lambdify(xs, scal, "numpy")

    def ric_eval(x):
        return np.asarray(ric_fn(*x), dtype=float)

    def scal_eval(x):
        return float(scal_fn(*x))

    _oracle_cache[key] = (ric_eval, scal_eval)
    return ric_eval, scal_eval


def conformal_scal_oracle(n: int, u: RadialProfile):
    """Scalar curvature of g = u^(4/(n-2)) delta via the conformal Laplacian:
    Scal = -4(n-1)/(n-2) * u^(-(n+2)/(n-2)) * (u'' + (n-1) u'/r).

    The prefactor is cross-validated against the symbolic pipeline in the
    n = 3 tests before this formula is trusted at other dimensions.
    """

    def scal(r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        lap = u.eval_d2(r) + (n - 1) * u.eval_d1(r) / r
        return -4.0 * (n - 1) / (n - 2) * u.eval(r) ** (-(n + 2.0) / (n - 2.0)) * lap

    return scal
