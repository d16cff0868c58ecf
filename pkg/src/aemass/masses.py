"""The four mass functionals and the identity-based cross-checks.

Classical surface mass, weak (cutoff) mass, and both Ricci-tensor versions,
plus the distributional scalar curvature pairing, the cutoff-independence
identity from the well-definedness proof, and the conformal Killing residual.
Every per-scale raw value is kept in the report so a hypothesis-violating
metric shows up as a non-convergent tail instead of a silently wrong limit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .curvature import curvature_at
from .metrics import MetricField
from .quadrature import (
    CutoffFamily,
    LimitFit,
    QuadratureScheme,
    extrapolate_limit,
    integrate_annulus,
    integrate_sphere,
    unit_sphere_volume,
)

__all__ = [
    "MassReport",
    "adm_mass",
    "weak_mass",
    "ricci_mass_surface",
    "ricci_weak_mass",
    "weak_correction_decay",
    "RadialWindow",
    "make_bump",
    "make_plateau",
    "distributional_scalar",
    "thm37_identity_value",
    "conformal_killing_residual",
    "mass_normalization",
]

_CHUNK = 16384


def mass_normalization(method: str, n: int) -> float:
    if method in ("adm_surface", "weak", "thm37_identity"):
        return 1.0 / (2.0 * (n - 1) * unit_sphere_volume(n))
    if method in ("ricci_surface", "ricci_weak"):
        return -1.0 / ((n - 1) * (n - 2) * unit_sphere_volume(n))
    raise ValueError(f"unknown mass method {method!r}")


@dataclass
class MassReport:
    """Per-scale functional values with the extrapolated limit and provenance."""

    method: str
    dim: int
    metric_id: str
    normalization: float
    scales: list[float]
    values: list[float]
    quad_errors: list[float]
    limit: LimitFit
    cutoff: str | None = None
    flags: tuple[str, ...] = ()

    @property
    def mass(self) -> float:
        return self.limit.limit

    @property
    def stderr(self) -> float:
        return self.limit.stderr

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "dim": self.dim,
            "metric_id": self.metric_id,
            "normalization": self.normalization,
            "cutoff": self.cutoff,
            "scales": self.scales,
            "values": self.values,
            "quad_errors": self.quad_errors,
            "limit": self.limit.limit,
            "limit_stderr": self.limit.stderr,
            "q": self.limit.rate,
            "flags": sorted(set(self.flags) | set(self.limit.flags)),
        }


def _chunked(f: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """Evaluate a batch integrand in bounded-memory blocks (fixed split order)."""

    def wrapped(x: np.ndarray) -> np.ndarray:
        if len(x) <= _CHUNK:
            return f(x)
        return np.concatenate([f(x[i:i + _CHUNK]) for i in range(0, len(x), _CHUNK)])

    return wrapped


def _map_scales(task: Callable[[float], tuple], scales: Sequence[float], workers: int) -> list:
    """Run one task per scale, in parallel, assembling results in schedule order."""
    if workers <= 1:
        return [task(s) for s in scales]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, scales))


def _snap_radius(r: float, kinks: Sequence[float]) -> tuple[float, bool]:
    snapped = False
    for k in kinks:
        if abs(r - k) <= 1e-9 * max(r, 1.0):
            r = k + 1e-6 * max(r, 1.0)
            snapped = True
    return r, snapped


def _mass_vector_flat(metric: MetricField) -> Callable[[np.ndarray], np.ndarray]:
    """w_i = d_j e_ij - d_i tr(e): the flat-contracted mass covector."""

    def w(x: np.ndarray) -> np.ndarray:
        dg = metric._eval_d1(x)
        return np.einsum("mjij->mi", dg) - np.einsum("mijj->mi", dg)

    return w


def _mass_vector_g(metric: MetricField) -> Callable[[np.ndarray], np.ndarray]:
    """v^i = (g^ij g^kl - g^ik g^jl) d_k e_jl: the g-contracted vector field."""

    def v(x: np.ndarray) -> np.ndarray:
        g = metric._eval(x)
        dg = metric._eval_d1(x)
        ginv = np.linalg.inv(g)
        return (np.einsum("mij,mkl,mkjl->mi", ginv, ginv, dg)
                - np.einsum("mik,mjl,mkjl->mi", ginv, ginv, dg))

    return v


def adm_mass(
    metric: MetricField,
    radii: Sequence[float],
    scheme: QuadratureScheme | None = None,
    workers: int = 1,
) -> MassReport:
    """Classical surface mass: flux of (div e - d tr e) through large spheres."""
    scheme = scheme or QuadratureScheme()
    n = metric.dim
    norm = mass_normalization("adm_surface", n)
    w = _chunked(_mass_vector_flat(metric))
    flags: list[str] = []

    def task(R: float):
        R, snapped = _snap_radius(R, metric.kink_radii)
        if R < metric.inner_radius:
            raise ValueError(f"sphere radius {R} below inner radius {metric.inner_radius}")

        def integrand(x):
            xhat = x / np.linalg.norm(x, axis=1, keepdims=True)
            return np.einsum("mi,mi->m", w(x), xhat)

        val, err = integrate_sphere(integrand, R, n, scheme)
        return norm * val, norm * err, snapped

    rows = _map_scales(task, radii, workers)
    values = [r[0] for r in rows]
    errors = [r[1] for r in rows]
    if any(r[2] for r in rows):
        flags.append("snapped-radius")
    fit = extrapolate_limit(list(radii), values)
    return MassReport("adm_surface", n, metric.label, norm, list(map(float, radii)),
                      values, errors, fit, flags=tuple(flags))


def _bulk_pairing(
    metric: MetricField,
    vec: Callable[[np.ndarray], np.ndarray],
    family: CutoffFamily,
    alpha: float,
    scheme: QuadratureScheme,
) -> tuple[float, float]:
    """Integral of vec . (-grad chi_alpha) over the support annulus."""
    a, b = family.support(alpha)
    if a < metric.inner_radius:
        raise ValueError(f"cutoff support [{a}, {b}] leaves the exterior domain")

    def integrand(x):
        return -np.einsum("mi,mi->m", vec(x), family.grad(alpha, x))

    return integrate_annulus(integrand, a, b, metric.dim, scheme, kinks=metric.kink_radii)


def weak_mass(
    metric: MetricField,
    family: CutoffFamily,
    alphas: Sequence[float],
    scheme: QuadratureScheme | None = None,
    workers: int = 1,
) -> MassReport:
    """Weak mass: bulk integrals of (div e - d tr e) against -grad chi_alpha."""
    scheme = scheme or QuadratureScheme()
    n = metric.dim
    norm = mass_normalization("weak", n)
    w = _chunked(_mass_vector_flat(metric))

    def task(alpha: float):
        val, err = _bulk_pairing(metric, w, family, alpha, scheme)
        return norm * val, norm * err

    rows = _map_scales(task, alphas, workers)
    values = [r[0] for r in rows]
    errors = [r[1] for r in rows]
    fit = extrapolate_limit(list(alphas), values)
    return MassReport("weak", n, metric.label, norm, list(map(float, alphas)),
                      values, errors, fit, cutoff=family.kind)


def _einstein_radial_flux(metric: MetricField) -> Callable[[np.ndarray], np.ndarray]:
    """Covector G(X, .)_j = G_ij x^i with X the radial field x^i d_i."""

    def gx(x: np.ndarray) -> np.ndarray:
        G = curvature_at(metric, x, second=True).einstein
        return np.einsum("mij,mi->mj", G, x)

    return gx


def ricci_mass_surface(
    metric: MetricField,
    radii: Sequence[float],
    scheme: QuadratureScheme | None = None,
    workers: int = 1,
) -> MassReport:
    """Ricci version of the surface mass: flux of G(X, nu) through large spheres."""
    scheme = scheme or QuadratureScheme()
    n = metric.dim
    norm = mass_normalization("ricci_surface", n)
    gx = _chunked(_einstein_radial_flux(metric))
    flags: list[str] = []

    def task(R: float):
        R, snapped = _snap_radius(R, metric.kink_radii)

        def integrand(x):
            xhat = x / np.linalg.norm(x, axis=1, keepdims=True)
            return np.einsum("mj,mj->m", gx(x), xhat)

        val, err = integrate_sphere(integrand, R, n, scheme)
        return norm * val, norm * err, snapped

    rows = _map_scales(task, radii, workers)
    values = [r[0] for r in rows]
    errors = [r[1] for r in rows]
    if any(r[2] for r in rows):
        flags.append("snapped-radius")
    fit = extrapolate_limit(list(radii), values)
    return MassReport("ricci_surface", n, metric.label, norm, list(map(float, radii)),
                      values, errors, fit, flags=tuple(flags))


def ricci_weak_mass(
    metric: MetricField,
    family: CutoffFamily,
    alphas: Sequence[float],
    scheme: QuadratureScheme | None = None,
    workers: int = 1,
) -> MassReport:
    """Ricci version of the weak mass: G(X, -grad chi_alpha) bulk integrals."""
    scheme = scheme or QuadratureScheme()
    n = metric.dim
    norm = mass_normalization("ricci_weak", n)
    gx = _chunked(_einstein_radial_flux(metric))

    def task(alpha: float):
        val, err = _bulk_pairing(metric, gx, family, alpha, scheme)
        return norm * val, norm * err

    rows = _map_scales(task, alphas, workers)
    values = [r[0] for r in rows]
    errors = [r[1] for r in rows]
    fit = extrapolate_limit(list(alphas), values)
    return MassReport("ricci_weak", n, metric.label, norm, list(map(float, alphas)),
                      values, errors, fit, cutoff=family.kind)


def weak_correction_decay(
    metric: MetricField,
    family: CutoffFamily,
    alphas: Sequence[float],
    scheme: QuadratureScheme | None = None,
    workers: int = 1,
) -> dict:
    """Per-scale size of the contraction-difference term dropped in the
    cutoff-independence proof: integral of (v - w) . (-grad chi_alpha).

    Its fitted log-log slope must be negative for metrics satisfying the
    fall-off hypotheses; the dominated-convergence mechanism is thereby
    observable rather than assumed.
    """
    scheme = scheme or QuadratureScheme()
    w = _mass_vector_flat(metric)
    v = _mass_vector_g(metric)
    diff = _chunked(lambda x: v(x) - w(x))

    def task(alpha: float):
        val, err = _bulk_pairing(metric, diff, family, alpha, scheme)
        return val, err

    rows = _map_scales(task, alphas, workers)
    vals = np.array([r[0] for r in rows])
    mags = np.maximum(np.abs(vals), 1e-300)
    slope = np.polyfit(np.log(np.asarray(alphas, dtype=float)), np.log(mags), 1)[0]
    return {
        "alphas": list(map(float, alphas)),
        "values": vals.tolist(),
        "fitted_exponent": float(slope),
        "decays": bool(slope < 0 or np.max(mags) < 1e-13),
    }


# ---------------------------------------------------------------------------
# Test functions and the distributional pairing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialWindow:
    """Locally Lipschitz radial test function built from C^1 smoothsteps.

    Rises 0 -> 1 on [a, b]; for a bump, falls back 1 -> 0 on [c, d]; for a
    plateau it stays 1 outward.  The gradient is supported in [a, b] u [c, d].
    """

    a: float
    b: float
    c: float = math.inf
    d: float = math.inf

    @property
    def is_plateau(self) -> bool:
        return math.isinf(self.d)

    @property
    def grad_support(self) -> tuple[float, float]:
        return self.a, (self.b if self.is_plateau else self.d)

    @property
    def corners(self) -> tuple[float, ...]:
        """Radii where the profile is only C^1; quadrature panels snap here."""
        if self.is_plateau:
            return (self.a, self.b)
        return (self.a, self.b, self.c, self.d)

    def value(self, x: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(np.atleast_2d(x), axis=1)
        up = _smoothstep((r - self.a) / (self.b - self.a))
        if self.is_plateau:
            return up
        down = 1.0 - _smoothstep((r - self.c) / (self.d - self.c))
        return up * down

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        r = np.linalg.norm(x, axis=1)
        xhat = x / r[:, None]
        dv = _dsmoothstep((r - self.a) / (self.b - self.a)) / (self.b - self.a)
        if not self.is_plateau:
            up = _smoothstep((r - self.a) / (self.b - self.a))
            down = 1.0 - _smoothstep((r - self.c) / (self.d - self.c))
            ddown = -_dsmoothstep((r - self.c) / (self.d - self.c)) / (self.d - self.c)
            dv = dv * down + up * ddown
        return dv[:, None] * xhat


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _dsmoothstep(t: np.ndarray) -> np.ndarray:
    inside = (t > 0.0) & (t < 1.0)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 6.0 * t * (1.0 - t), 0.0)


def make_bump(a: float, b: float, c: float, d: float) -> RadialWindow:
    if not (a < b <= c < d):
        raise ValueError("bump needs a < b <= c < d")
    return RadialWindow(a, b, c, d)


def make_plateau(a: float, b: float) -> RadialWindow:
    if not (a < b):
        raise ValueError("plateau needs a < b")
    return RadialWindow(a, b)


def _qs_func(metric: MetricField) -> Callable[[np.ndarray], np.ndarray]:
    def qs(x: np.ndarray) -> np.ndarray:
        g = metric._eval(x)
        dg = metric._eval_d1(x)
        ginv = np.linalg.inv(g)
        return _kernels.first_order(g, ginv, dg)[5]

    return qs


def distributional_scalar(
    metric: MetricField,
    phi: RadialWindow,
    scheme: QuadratureScheme | None = None,
    cross_check: bool = True,
) -> dict:
    """The scalar curvature distribution paired with a test function:
    integral of V . (-grad phi) + phi * Q^S against the flat measure.

    Only first metric derivatives enter.  For bump test functions on metrics
    with two derivatives the pairing is cross-checked against the direct
    integral of phi * Scal.
    """
    scheme = scheme or QuadratureScheme()
    if phi.is_plateau:
        raise ValueError("pairing with a plateau requires thm37_identity_value")
    a, d = phi.a, phi.d
    if a < metric.inner_radius:
        raise ValueError("test function support leaves the exterior domain")
    n = metric.dim
    v = _chunked(_mass_vector_g(metric))
    qs = _chunked(_qs_func(metric))

    def integrand(x):
        return -np.einsum("mi,mi->m", v(x), phi.grad(x)) + phi.value(x) * qs(x)

    snap = tuple(metric.kink_radii) + phi.corners
    value, err = integrate_annulus(integrand, a, d, n, scheme, kinks=snap)

    out = {"pairing": value, "quad_error": err}
    if cross_check and metric.regularity in ("analytic", "C2", "grid"):

        def direct(x):
            return phi.value(x) * curvature_at(metric, x, second=True).scal

        smooth, err2 = integrate_annulus(_scalarize(direct), a, d, n, scheme,
                                         kinks=snap)
        out["direct"] = smooth
        out["direct_quad_error"] = err2
        out["mismatch"] = abs(value - smooth)
    return out


def _scalarize(f):
    return _chunked(lambda x: np.asarray(f(x), dtype=float))


def thm37_identity_value(
    metric: MetricField,
    phi: RadialWindow,
    alphas: Sequence[float],
    scheme: QuadratureScheme | None = None,
    family: CutoffFamily | None = None,
    workers: int = 1,
) -> dict:
    """The cutoff-independence identity evaluated as three separate pieces.

    For a plateau function phi (0 inside, 1 outside its transition annulus) the
    well-definedness argument expresses 2(n-1)omega * m_W as

        <<Scal, phi>>  -  int phi Q^S  -  int V . (-grad phi)

    with the pairing extended from compactly supported test functions along
    phi * chi_alpha.  Each piece is computed on its own scale schedule and
    extrapolated, so the returned value cross-checks the weak mass through the
    paper's own mechanism rather than re-running the same integral.
    """
    from .quadrature import make_cutoff

    scheme = scheme or QuadratureScheme()
    family = family or make_cutoff("ramp")
    if not phi.is_plateau:
        raise ValueError("the identity needs a plateau test function")
    n = metric.dim
    a, b = phi.a, phi.b
    if min(alphas) < b:
        raise ValueError("alpha schedule must start beyond the plateau transition")

    v = _chunked(_mass_vector_g(metric))
    qs = _chunked(_qs_func(metric))

    snap = tuple(metric.kink_radii) + phi.corners
    grad_term, grad_err = integrate_annulus(
        _chunked(lambda x: np.einsum("mi,mi->m", v(x), phi.grad(x))),
        a, b, n, scheme, kinks=snap,
    )

    def pairing_at(alpha: float):
        lo, hi = family.support(alpha)
        bulk, e1 = integrate_annulus(
            _chunked(lambda x: -np.einsum("mi,mi->m", v(x), family.grad(alpha, x))),
            lo, hi, n, scheme, kinks=metric.kink_radii,
        )
        qs_part, e2 = integrate_annulus(
            _chunked(lambda x: phi.value(x) * family.eval(alpha, x) * qs(x)),
            a, hi, n, scheme, kinks=snap + (lo,), log_spacing=True,
        )
        return bulk - grad_term + qs_part, e1 + e2

    rows = _map_scales(pairing_at, alphas, workers)
    pairing_fit = extrapolate_limit(list(alphas), [r[0] for r in rows])

    def qs_tail_at(R: float):
        val, err = integrate_annulus(_chunked(lambda x: phi.value(x) * qs(x)),
                                     a, R, n, scheme, kinks=snap,
                                     log_spacing=True)
        return val, err

    qs_scales = [2.0 * al for al in alphas]
    qs_rows = _map_scales(qs_tail_at, qs_scales, workers)
    qs_fit = extrapolate_limit(qs_scales, [r[0] for r in qs_rows])

    norm = mass_normalization("thm37_identity", n)
    value = norm * (pairing_fit.limit - qs_fit.limit + grad_term)
    return {
        "value": value,
        "pairing": pairing_fit.as_dict(),
        "qs_integral": qs_fit.as_dict(),
        "grad_term": grad_term,
        "normalization": norm,
        "converged": pairing_fit.converged and qs_fit.converged,
    }


def conformal_killing_residual(
    metric: MetricField,
    phi: RadialWindow,
    scheme: QuadratureScheme | None = None,
) -> dict:
    """Residual of the divergence-free Einstein tensor identity against the
    radial conformal Killing field X = x^i d_i of the flat reference.

    Integrating div_g(phi G(X, .)) over the support and using that G is
    divergence free gives

        int G(X, grad_g phi) dmu_g
            = -int phi g^ij g^kl G_ik (g_jl + X^v d_v g_jl / 2) dmu_g,

    since the g-lowered symmetrized gradient of X is g_jl + (X^v d_v g_jl)/2.
    Both sides use the curved volume form; their difference jointly checks the
    Einstein tensor, the connection algebra and the volume chain.
    """
    scheme = scheme or QuadratureScheme()
    if phi.is_plateau:
        raise ValueError("conformal Killing residual needs compact support")
    n = metric.dim
    flagged = bool(metric.kink_radii) and any(
        phi.a <= k <= phi.d for k in metric.kink_radii
    )

    def lhs_integrand(x):
        data = curvature_at(metric, x, second=True)
        g = metric._eval(x)
        ginv = np.linalg.inv(g)
        vol = np.sqrt(np.linalg.det(g))
        gradg_phi = np.einsum("mjk,mk->mj", ginv, phi.grad(x))
        return np.einsum("mij,mi,mj->m", data.einstein, x, gradg_phi) * vol

    def rhs_integrand(x):
        data = curvature_at(metric, x, second=True)
        g = metric._eval(x)
        dg = metric._eval_d1(x)
        ginv = np.linalg.inv(g)
        vol = np.sqrt(np.linalg.det(g))
        inner = g + 0.5 * np.einsum("mv,mvjl->mjl", x, dg)
        contracted = np.einsum("mij,mkl,mik,mjl->m", ginv, ginv, data.einstein, inner)
        return -phi.value(x) * contracted * vol

    snap = tuple(metric.kink_radii) + phi.corners
    lhs, e1 = integrate_annulus(_scalarize(lhs_integrand), phi.a, phi.d, n, scheme,
                                kinks=snap)
    rhs, e2 = integrate_annulus(_scalarize(rhs_integrand), phi.a, phi.d, n, scheme,
                                kinks=snap)
    out = {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs),
           "quad_error": e1 + e2}
    if flagged:
        out["flag"] = "support-touches-kinks"
    return out
