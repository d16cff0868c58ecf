"""Diffeomorphisms of the exterior region and coordinate-invariance experiments.

Built-in families: rigid isometries Q x + b and radial almost-identities
x -> (s(|x|)/|x|) x with s(rho) = rho + c rho^(1 - tau').  Pushing a metric
forward needs derivatives of the inverse map up to third order (the metric's
second derivatives chain through them); for both families these are closed
form, with only the scalar radius inversion done by Newton.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .metrics import MetricField
from .quadrature import CutoffFamily, QuadratureScheme, extrapolate_limit

__all__ = [
    "MapDerivatives",
    "DiffeoSpec",
    "make_isometry",
    "make_almost_identity",
    "random_isometry",
    "pushforward_metric",
    "invariance_experiment",
]

NEWTON_TOL = 1e-14


@dataclass(frozen=True)
class MapDerivatives:
    """A map of the exterior region with derivatives up to third order.

    Layouts over a batch z: func (z, n); jac[z, i, j] = d_j F^i;
    hess[z, i, j, k] = d_k d_j F^i; third[z, i, j, k, l] = d_l d_k d_j F^i.
    """

    func: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    third: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class DiffeoSpec:
    """Forward/inverse pair with the metadata the experiments need."""

    kind: str  # isometry | almost_identity
    dim: int
    forward: MapDerivatives
    inverse: MapDerivatives
    params: dict
    image_inner_radius: Callable[[float], float]


def _affine_map(Q: np.ndarray, b: np.ndarray) -> MapDerivatives:
    n = Q.shape[0]
    zeros3 = np.zeros((n, n, n))
    zeros4 = np.zeros((n, n, n, n))

    def func(x):
        return x @ Q.T + b

    def jac(x):
        return np.broadcast_to(Q, (len(x), n, n)).copy()

    def hess(x):
        return np.broadcast_to(zeros3, (len(x),) + zeros3.shape).copy()

    def third(x):
        return np.broadcast_to(zeros4, (len(x),) + zeros4.shape).copy()

    return MapDerivatives(func, jac, hess, third)


def make_isometry(Q: np.ndarray, b: np.ndarray | None = None) -> DiffeoSpec:
    """Rigid motion F(x) = Q x + b with orthogonal Q."""
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)
    if np.max(np.abs(Q.T @ Q - np.eye(n))) > 1e-12:
        raise ValueError("isometry matrix is not orthogonal")
    shift = float(np.linalg.norm(b))
    return DiffeoSpec(
        kind="isometry", dim=n,
        forward=_affine_map(Q, b),
        inverse=_affine_map(Q.T, -Q.T @ b),
        params={"Q": Q.tolist(), "b": b.tolist()},
        image_inner_radius=lambda r: r + shift,
    )


def random_isometry(n: int, rng: np.random.Generator, max_shift: float = 0.5) -> DiffeoSpec:
    A = rng.normal(size=(n, n))
    Q, _ = np.linalg.qr(A)
    b = rng.uniform(-max_shift, max_shift, size=n)
    return make_isometry(Q, b)


def _radial_map(
    s: Callable, s1: Callable, s2: Callable, s3: Callable
) -> MapDerivatives:
    """Map x -> m(rho) x with m = s(rho)/rho, all derivatives in closed form."""

    def parts(x):
        rho = np.linalg.norm(x, axis=1)
        xhat = x / rho[:, None]
        sv, sv1, sv2, sv3 = s(rho), s1(rho), s2(rho), s3(rho)
        m = sv / rho
        m1 = sv1 / rho - sv / rho ** 2
        m2 = sv2 / rho - 2 * sv1 / rho ** 2 + 2 * sv / rho ** 3
        m3 = sv3 / rho - 3 * sv2 / rho ** 2 + 6 * sv1 / rho ** 3 - 6 * sv / rho ** 4
        return rho, xhat, m, m1, m2, m3

    def func(x):
        rho, xhat, m, *_ = parts(x)
        return m[:, None] * x

    def jac(x):
        rho, xhat, m, m1, *_ = parts(x)
        eye = np.eye(x.shape[1])
        outer = np.einsum("zi,zj->zij", xhat, xhat)
        return m[:, None, None] * eye + (m1 * rho)[:, None, None] * outer

    def hess(x):
        rho, xhat, m, m1, m2, _ = parts(x)
        eye = np.eye(x.shape[1])
        sym = (np.einsum("zi,jk->zijk", xhat, eye)
               + np.einsum("zj,ik->zijk", xhat, eye)
               + np.einsum("zk,ij->zijk", xhat, eye))
        cube = np.einsum("zi,zj,zk->zijk", xhat, xhat, xhat)
        return m1[:, None, None, None] * sym + (m2 * rho - m1)[:, None, None, None] * cube

    def third(x):
        rho, xhat, m, m1, m2, m3 = parts(x)
        n = x.shape[1]
        eye = np.eye(n)
        sym3 = (np.einsum("zi,jk->zijk", xhat, eye)
                + np.einsum("zj,ik->zijk", xhat, eye)
                + np.einsum("zk,ij->zijk", xhat, eye))
        t = m2[:, None, None, None, None] * np.einsum("zijk,zl->zijkl", sym3, xhat)
        dd = (np.einsum("il,jk->ijkl", eye, eye)
              + np.einsum("jl,ik->ijkl", eye, eye)
              + np.einsum("kl,ij->ijkl", eye, eye))
        hh = (np.einsum("zi,zl,jk->zijkl", xhat, xhat, eye)
              + np.einsum("zj,zl,ik->zijkl", xhat, xhat, eye)
              + np.einsum("zk,zl,ij->zijkl", xhat, xhat, eye))
        t += (m1 / rho)[:, None, None, None, None] * (dd[None] - hh)
        quad = np.einsum("zi,zj,zk,zl->zijkl", xhat, xhat, xhat, xhat)
        t += (m3 * rho)[:, None, None, None, None] * quad
        mix = (np.einsum("il,zj,zk->zijkl", eye, xhat, xhat)
               + np.einsum("jl,zi,zk->zijkl", eye, xhat, xhat)
               + np.einsum("kl,zi,zj->zijkl", eye, xhat, xhat))
        t += ((m2 * rho - m1) / rho)[:, None, None, None, None] * (mix - 3.0 * quad)
        return t

    return MapDerivatives(func, jac, hess, third)


def make_almost_identity(n: int, c: float, tau_prime: float,
                         inner_radius: float = 2.0) -> DiffeoSpec:
    """Radial chart change s(rho) = rho + c rho^(1 - tau'), so that the deviation
    from the identity decays like rho^(1-tau') and its gradient like rho^(-tau').

    Requires tau' > (n-2)/2 (the invariance hypothesis) and a strictly
    monotone radial stretch on the domain.
    """
    if tau_prime <= (n - 2) / 2.0:
        raise ValueError(f"hypothesis violated: tau_prime must exceed (n-2)/2 = {(n - 2) / 2}")
    tp = float(tau_prime)

    def s(r):
        return r + c * r ** (1.0 - tp)

    def s1(r):
        return 1.0 + c * (1.0 - tp) * r ** (-tp)

    def s2(r):
        return -c * tp * (1.0 - tp) * r ** (-tp - 1.0)

    def s3(r):
        return c * tp * (tp + 1.0) * (1.0 - tp) * r ** (-tp - 2.0)

    r_check = np.geomspace(inner_radius, 1e6 * inner_radius, 4096)
    if np.min(s1(r_check)) <= 0:
        raise ValueError("radial map is not monotone on the domain (amplitude too large)")

    def rho_of_sigma(sigma: np.ndarray) -> np.ndarray:
        rho = np.array(sigma, dtype=float, copy=True)
        for _ in range(60):
            delta = (s(rho) - sigma) / s1(rho)
            rho = rho - delta
            if np.max(np.abs(delta)) < NEWTON_TOL * np.max(rho):
                break
        else:
            raise ValueError("Newton inversion of the radial map failed to converge")
        return rho

    # Inverse radius function and its derivatives by the inverse-function rule.
    def r0(sig):
        return rho_of_sigma(sig)

    def r1(sig):
        return 1.0 / s1(rho_of_sigma(sig))

    def r2(sig):
        rho = rho_of_sigma(sig)
        return -s2(rho) / s1(rho) ** 3

    def r3(sig):
        rho = rho_of_sigma(sig)
        return (3.0 * s2(rho) ** 2 - s1(rho) * s3(rho)) / s1(rho) ** 5

    return DiffeoSpec(
        kind="almost_identity", dim=n,
        forward=_radial_map(s, s1, s2, s3),
        inverse=_radial_map(r0, r1, r2, r3),
        params={"c": c, "tau_prime": tp},
        image_inner_radius=lambda r: float(s(np.array([r]))[0]),
    )


def pushforward_metric(metric: MetricField, diffeo: DiffeoSpec) -> MetricField:
    """The metric in the new chart: (F_* g)_kl(y) = g_ij(A y) d_k A^i d_l A^j
    with A = F^(-1); first and second derivatives by the full chain rule."""
    if diffeo.dim != metric.dim:
        raise ValueError("diffeomorphism dimension does not match the metric")
    A = diffeo.inverse
    n = metric.dim

    def ev(y):
        x = A.func(y)
        J = A.jac(y)
        g = metric._eval(x)
        return np.einsum("zij,zik,zjl->zkl", g, J, J)

    def ev1(y):
        x = A.func(y)
        J, H = A.jac(y), A.hess(y)
        g, dg = metric._eval(x), metric._eval_d1(x)
        t = np.einsum("zpij,zpm,zik,zjl->zmkl", dg, J, J, J)
        t += np.einsum("zij,zikm,zjl->zmkl", g, H, J)
        t += np.einsum("zij,zik,zjlm->zmkl", g, J, H)
        return t

    def ev2(y):
        x = A.func(y)
        J, H, T = A.jac(y), A.hess(y), A.third(y)
        g, dg, d2g = metric._eval(x), metric._eval_d1(x), metric._eval_d2(x)
        t = np.einsum("zspij,zsq,zpm,zik,zjl->zqmkl", d2g, J, J, J, J)
        t += np.einsum("zpij,zpmq,zik,zjl->zqmkl", dg, H, J, J)
        t += np.einsum("zpij,zpm,zikq,zjl->zqmkl", dg, J, H, J)
        t += np.einsum("zpij,zpm,zik,zjlq->zqmkl", dg, J, J, H)
        t += np.einsum("zpij,zpq,zikm,zjl->zqmkl", dg, J, H, J)
        t += np.einsum("zpij,zpq,zik,zjlm->zqmkl", dg, J, J, H)
        t += np.einsum("zij,zikmq,zjl->zqmkl", g, T, J)
        t += np.einsum("zij,zikm,zjlq->zqmkl", g, H, H)
        t += np.einsum("zij,zikq,zjlm->zqmkl", g, H, H)
        t += np.einsum("zij,zik,zjlmq->zqmkl", g, J, T)
        return t

    new_inner = diffeo.image_inner_radius(metric.inner_radius)

    # The kink spheres survive as spheres only for maps that preserve radii.
    if diffeo.kind == "almost_identity":
        kinks = tuple(diffeo.image_inner_radius(k) for k in metric.kink_radii)
    elif diffeo.kind == "isometry" and float(np.linalg.norm(diffeo.params["b"])) == 0.0:
        kinks = metric.kink_radii
    else:
        kinks = ()

    # Sampled comparability on the image region.
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(32, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.geomspace(new_inner * 1.001, 1e4 * new_inner, 24)
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, n)
    evals = np.linalg.eigvalsh(ev(pts))
    comp = float(max(np.max(evals), 1.0 / np.min(evals), 1.0))

    regularity = metric.regularity if diffeo.kind == "isometry" else metric.regularity
    return MetricField(
        dim=n, inner_radius=new_inner, regularity=regularity,
        falloff_tau=min(metric.falloff_tau, diffeo.params.get("tau_prime", math.inf)),
        comparability=comp, _eval=ev, _eval_d1=ev1, _eval_d2=ev2,
        kink_radii=kinks, label=f"pushforward[{diffeo.kind}]({metric.label})",
    )


def invariance_experiment(
    metric: MetricField,
    diffeo: DiffeoSpec,
    method: str,
    scales: Sequence[float],
    family: CutoffFamily | None = None,
    scheme: QuadratureScheme | None = None,
    workers: int = 1,
) -> dict:
    """Mass before/after a chart change on a shared scale schedule.

    Returns the paired reports, per-scale deltas and the extrapolated delta:
    isometries must leave every scale unchanged up to quadrature error while
    almost-identities produce per-scale deltas that decay along the schedule.
    """
    from . import masses

    pushed = pushforward_metric(metric, diffeo)
    if min(scales) <= pushed.inner_radius:
        raise ValueError("scale schedule starts inside the transformed inner radius")

    def run(m: MetricField):
        if method == "adm":
            return masses.adm_mass(m, scales, scheme, workers)
        if method == "weak":
            return masses.weak_mass(m, family, scales, scheme, workers)
        if method == "ricci":
            return masses.ricci_mass_surface(m, scales, scheme, workers)
        if method == "ricci_weak":
            return masses.ricci_weak_mass(m, family, scales, scheme, workers)
        raise ValueError(f"unknown mass method {method!r}")

    before = run(metric)
    after = run(pushed)
    deltas = [a - b for a, b in zip(after.values, before.values)]
    abs_deltas = np.abs(deltas)
    if np.max(abs_deltas) < 1e-13:
        delta_limit, delta_stderr, converged = float(np.mean(deltas)), float(np.std(deltas)), True
    else:
        fit = extrapolate_limit(list(scales), deltas)
        delta_limit, delta_stderr, converged = fit.limit, fit.stderr, fit.converged
    quad = max(max(before.quad_errors), max(after.quad_errors))
    return {
        "method": method,
        "before": before,
        "after": after,
        "deltas": list(map(float, deltas)),
        "delta_limit": delta_limit,
        "delta_stderr": delta_stderr,
        "delta_converged": converged,
        "quad_error": quad,
    }
