"""Product quadrature over spheres and annuli, cutoff families, and tail extrapolation.

Surface integrals use an (n-1)-sphere rule (tensor-product Gauss for n <= 4,
scrambled Sobol with equal weights for n >= 5); bulk integrals over annuli add
Gauss-Legendre radial panels whose boundaries snap to declared kink radii.
Limits in a scale parameter are estimated by fitting ``value(s) = L + c*s^-q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import curve_fit
from scipy.special import roots_gegenbauer
from scipy.stats import norm, qmc


def unit_sphere_volume(n: int) -> float:
    """Volume of the unit (n-1)-sphere in R^n, 2*pi^(n/2)/Gamma(n/2)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


# ---------------------------------------------------------------------------
# Sphere rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SphereRule:
    """Nodes on the unit sphere S^{n-1} with weights summing to its volume."""

    dim: int
    points: np.ndarray  # (M, n) unit vectors
    weights: np.ndarray  # (M,)
    kind: str  # "tensor" or "qmc"
    order: int  # polynomial exactness degree for tensor rules, 0 for qmc


def _tensor_sphere_rule(n: int, order: int) -> SphereRule:
    # Hyperspherical angles: measure = prod_k sin^(n-1-k)(theta_k) dtheta_k * dphi.
    # Substituting t = cos(theta) turns sin^m(theta) dtheta into the Gegenbauer
    # weight (1-t^2)^((m-1)/2) dt, i.e. alpha = m/2.
    q = max(2, (order + 1) // 2 + 1)
    axes_t = []
    axes_w = []
    for k in range(n - 2):
        m = n - 2 - k  # exponent of sin(theta_k) in the surface measure
        t, w = roots_gegenbauer(q, m / 2.0)  # weight (1-t^2)^((m-1)/2)
        axes_t.append(np.asarray(t, dtype=float))
        axes_w.append(np.asarray(w, dtype=float))
    n_phi = 2 * q
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    w_phi = np.full(n_phi, 2.0 * math.pi / n_phi)

    grids = np.meshgrid(*axes_t, phi, indexing="ij")
    wgrids = np.meshgrid(*axes_w, w_phi, indexing="ij")
    shape = grids[0].shape
    pts = np.empty(shape + (n,), dtype=float)
    sin_prod = np.ones(shape)
    for k in range(n - 2):
        t = grids[k]
        pts[..., k] = sin_prod * t
        sin_prod = sin_prod * np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    pts[..., n - 2] = sin_prod * np.cos(grids[n - 2])
    pts[..., n - 1] = sin_prod * np.sin(grids[n - 2])
    weights = np.ones(shape)
    for wg in wgrids:
        weights = weights * wg

    pts = pts.reshape(-1, n)
    weights = weights.reshape(-1)
    # Renormalize away the O(1e-16) drift so constants integrate exactly.
    weights = weights * (unit_sphere_volume(n) / weights.sum())
    return SphereRule(dim=n, points=pts, weights=weights, kind="tensor", order=2 * q - 1)


def _qmc_sphere_rule(n: int, count: int, seed: int) -> SphereRule:
    sob = qmc.Sobol(d=n, scramble=True, seed=seed)
    m = max(4, int(math.ceil(math.log2(max(count, 2)))))
    u = sob.random_base2(m)
    z = norm.ppf(np.clip(u, 1e-15, 1.0 - 1e-15))
    pts = z / np.linalg.norm(z, axis=1, keepdims=True)
    w = np.full(pts.shape[0], unit_sphere_volume(n) / pts.shape[0])
    return SphereRule(dim=n, points=pts, weights=w, kind="qmc", order=0)


@lru_cache(maxsize=64)
def sphere_rule(n: int, order: int = 14, qmc_points: int = 4096, seed: int = 0) -> SphereRule:
    """Quadrature rule on S^{n-1}: tensor-product Gauss for n <= 4, Sobol for n >= 5."""
    if n < 2:
        raise ValueError(f"sphere rule needs ambient dimension >= 2, got {n}")
    if n <= 4:
        return _tensor_sphere_rule(n, order)
    return _qmc_sphere_rule(n, qmc_points, seed)


@dataclass(frozen=True)
class QuadratureScheme:
    """Product radial x spherical rule parameters shared by all integrals."""

    radial_order: int = 12
    radial_panels: int = 8
    sphere_order: int = 14
    qmc_points: int = 4096
    seed: int = 0
    target_rel_error: float = 1e-10

    def rule(self, n: int) -> SphereRule:
        return sphere_rule(n, self.sphere_order, self.qmc_points, self.seed)

    def coarse_rule(self, n: int) -> SphereRule:
        """Embedded lower-accuracy rule used only for error estimates."""
        if n <= 4:
            return sphere_rule(n, max(4, self.sphere_order - 4), self.qmc_points, self.seed)
        return sphere_rule(n, self.sphere_order, max(256, self.qmc_points // 2), self.seed + 1)


Integrand = Callable[[np.ndarray], np.ndarray]


def integrate_sphere(
    f: Integrand, radius: float, n: int, scheme: QuadratureScheme | None = None
) -> tuple[float, float]:
    """Integrate ``f`` over the sphere of the given radius against the flat measure.

    Returns ``(value, error_estimate)``; the estimate compares against the
    scheme's embedded coarser rule.
    """
    scheme = scheme or QuadratureScheme()
    if radius <= 0:
        raise ValueError("sphere radius must be positive")

    def one(rule: SphereRule) -> float:
        vals = np.asarray(f(radius * rule.points), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite integrand samples on sphere")
        return float(radius ** (n - 1) * (rule.weights @ vals))

    value = one(scheme.rule(n))
    err = abs(value - one(scheme.coarse_rule(n)))
    return value, err


def radial_panels(
    a: float,
    b: float,
    order: int,
    panels: int,
    kinks: Sequence[float] = (),
    log_spacing: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [a, b], panel edges snapped to kinks."""
    if b <= a:
        raise ValueError(f"empty radial interval [{a}, {b}]")
    edges = [a, b]
    for rk in kinks:
        if a < rk < b:
            edges.append(float(rk))
    edges = np.array(sorted(set(edges)))
    x0, w0 = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        # Subdivide each kink-free piece, proportionally to its share of [a, b].
        sub = max(1, int(round(panels * (hi - lo) / (b - a))))
        if log_spacing:
            bounds = np.exp(np.linspace(math.log(lo), math.log(hi), sub + 1))
        else:
            bounds = np.linspace(lo, hi, sub + 1)
        for p_lo, p_hi in zip(bounds[:-1], bounds[1:]):
            half = 0.5 * (p_hi - p_lo)
            nodes.append(0.5 * (p_lo + p_hi) + half * x0)
            weights.append(half * w0)
    return np.concatenate(nodes), np.concatenate(weights)


def integrate_annulus(
    f: Integrand,
    a: float,
    b: float,
    n: int,
    scheme: QuadratureScheme | None = None,
    kinks: Sequence[float] = (),
    log_spacing: bool = False,
) -> tuple[float, float]:
    """Integrate ``f`` over the annulus a <= |x| <= b against the flat measure."""
    scheme = scheme or QuadratureScheme()
    radii, wr = radial_panels(a, b, scheme.radial_order, scheme.radial_panels, kinks, log_spacing)

    def one(rule: SphereRule) -> float:
        # All radii x all directions in one batch; reduction order is fixed.
        pts = radii[:, None, None] * rule.points[None, :, :]
        vals = np.asarray(f(pts.reshape(-1, n)), dtype=float).reshape(len(radii), -1)
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite integrand samples on annulus")
        per_radius = vals @ rule.weights
        return float((wr * radii ** (n - 1)) @ per_radius)

    value = one(scheme.rule(n))
    err = abs(value - one(scheme.coarse_rule(n)))
    return value, err


# ---------------------------------------------------------------------------
# Cutoff families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CutoffFamily:
    """Family chi_alpha: 1 inside r <= a(alpha), 0 outside r >= b(alpha).

    ``uniform_bound`` is sup over alpha and x of |chi| + r|grad chi|; it is
    finite and alpha-independent for every built-in kind.
    """

    kind: str
    profile: Callable[[np.ndarray], np.ndarray]  # chi as a function of t = r/alpha
    dprofile: Callable[[np.ndarray], np.ndarray]  # d chi / dt
    width: float  # support is [alpha, width*alpha]
    uniform_bound: float

    def support(self, alpha: float) -> tuple[float, float]:
        return alpha, self.width * alpha

    def eval(self, alpha: float, x: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(x, axis=-1)
        return self.profile(r / alpha)

    def grad(self, alpha: float, x: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(x, axis=-1)
        dchi = self.dprofile(r / alpha) / alpha
        return dchi[..., None] * (x / r[..., None])


def make_cutoff(kind: str, lam: float = 3.0) -> CutoffFamily:
    """Build one of the cutoff families: ``ramp``, ``smooth_ramp`` or ``wide_ramp``.

    The ramp is 1 for r <= alpha, 2 - r/alpha in between, 0 for r >= 2*alpha;
    its uniform bound is exactly 3.  The smooth ramp replaces the linear drop
    by a C^1 cubic; the wide ramp drops linearly over [alpha, lam*alpha].
    """
    if kind == "ramp":

        def prof(t):
            return np.clip(2.0 - t, 0.0, 1.0)

        def dprof(t):
            return np.where((t > 1.0) & (t < 2.0), -1.0, 0.0)

        return CutoffFamily("ramp", prof, dprof, 2.0, 3.0)

    if kind == "smooth_ramp":

        def prof(t):
            s = np.clip(t - 1.0, 0.0, 1.0)
            return 1.0 - s * s * (3.0 - 2.0 * s)

        def dprof(t):
            s = np.clip(t - 1.0, 0.0, 1.0)
            return np.where((t > 1.0) & (t < 2.0), -6.0 * s * (1.0 - s), 0.0)

        # sup of (1+s)*6s(1-s) over [0,1] is attained at s = 1/sqrt(3).
        return CutoffFamily("smooth_ramp", prof, dprof, 2.0, 1.0 + 4.0 / math.sqrt(3.0))

    if kind == "wide_ramp":
        if lam <= 1.0:
            raise ValueError("wide_ramp needs lambda > 1")

        def prof(t, lam=lam):
            return np.clip((lam - t) / (lam - 1.0), 0.0, 1.0)

        def dprof(t, lam=lam):
            return np.where((t > 1.0) & (t < lam), -1.0 / (lam - 1.0), 0.0)

        return CutoffFamily("wide_ramp", prof, dprof, float(lam), 1.0 + lam / (lam - 1.0))

    raise ValueError(f"unknown cutoff kind {kind!r}")


# ---------------------------------------------------------------------------
# Limit extrapolation
# ---------------------------------------------------------------------------


@dataclass
class LimitFit:
    """Result of fitting value(s) = L + c*s^-q over an increasing scale schedule."""

    scales: np.ndarray
    values: np.ndarray
    limit: float
    coeff: float
    rate: float
    stderr: float
    converged: bool
    model: str = "power"
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "scales": [float(s) for s in self.scales],
            "values": [float(v) for v in self.values],
            "limit": float(self.limit),
            "coeff": float(self.coeff),
            "rate": float(self.rate),
            "stderr": float(self.stderr),
            "converged": bool(self.converged),
            "model": self.model,
            "flags": list(self.flags),
        }


def _richardson(scales: np.ndarray, values: np.ndarray, q: float) -> tuple[float, float]:
    s1, s2 = scales[-2], scales[-1]
    v1, v2 = values[-2], values[-1]
    denom = s2 ** (-q) - s1 ** (-q)
    if denom == 0.0:
        return v2, 0.0
    c = (v2 - v1) / denom
    return v2 - c * s2 ** (-q), c


def extrapolate_limit(scales: Sequence[float], values: Sequence[float]) -> LimitFit:
    """Estimate lim value(s) as s -> infinity from at least four scales.

    Falls back to Richardson extrapolation with the empirically estimated rate
    when the nonlinear fit is ill-conditioned; a non-monotone tail beyond noise
    yields ``converged=False`` rather than a silently wrong limit.
    """
    s = np.asarray(scales, dtype=float)
    v = np.asarray(values, dtype=float)
    if s.ndim != 1 or len(s) < 4:
        raise ValueError(">=4 scales required for extrapolation")
    if np.any(np.diff(s) <= 0):
        raise ValueError("scales must be strictly increasing")

    scale0 = max(np.max(np.abs(v)), 1.0)
    d = np.diff(v)
    spread = np.max(v) - np.min(v)
    if spread <= 1e-13 * scale0:
        return LimitFit(s, v, float(np.mean(v)), 0.0, 1.0, float(np.std(v)), True, "constant")

    # Estimate the decay rate from the last difference ratio.
    flags: list[str] = []
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.abs(d[1:] / d[:-1])
        log_step = np.log(s[2:] / s[1:-1])
        q_emp = -np.log(ratios[-1]) / log_step[-1] if ratios[-1] > 0 else 1.0
    if not np.isfinite(q_emp) or q_emp <= 0:
        q_emp = 1.0
    q_emp = float(np.clip(q_emp, 0.05, 10.0))

    tail_growing = np.abs(d[-1]) > 1.05 * np.abs(d[0]) + 1e-13 * scale0
    sign_flips = int(np.sum(np.sign(d[1:]) * np.sign(d[:-1]) < 0))
    noisy = sign_flips >= max(1, len(d) - 2) and np.abs(d[-1]) > 0.5 * np.abs(d[0])
    if tail_growing or noisy:
        return LimitFit(
            s, v, float(v[-1]), 0.0, q_emp, float(np.abs(d[-1])), False, "power",
            flags=("no-convergence",),
        )

    L0, c0 = _richardson(s, v, q_emp)

    def model(x, L, c, q):
        return L + c * np.power(x, -q)

    try:
        # The unmodeled next-order term decays one power faster than the fitted
        # tail, so weighting residuals by s^-(q+1) keeps it from biasing L.
        sigma = (s / s[-1]) ** (-(q_emp + 1.0))
        popt, pcov = curve_fit(
            model, s, v, p0=[L0, c0, q_emp], sigma=sigma,
            bounds=([-np.inf, -np.inf, 0.05], [np.inf, np.inf, 10.0]),
            maxfev=20000,
        )
        L, c, q = (float(p) for p in popt)
        stderr = float(np.sqrt(max(pcov[0, 0], 0.0))) if np.all(np.isfinite(pcov)) else np.nan
        if not np.isfinite(stderr):
            raise RuntimeError("singular fit covariance")
        # The fit must at least reproduce the tail it extrapolates from.
        tail_resid = float(np.max(np.abs(model(s[-2:], *popt) - v[-2:])))
        if tail_resid > 0.5 * np.abs(d[-1]) + 1e-13 * scale0:
            raise RuntimeError("fit did not capture the tail")
        stderr = max(stderr, tail_resid)
        return LimitFit(s, v, L, c, q, stderr, True, "power", tuple(flags))
    except Exception:
        flags.append("richardson-fallback")
        stderr = float(abs(L0 - v[-1]))
        return LimitFit(s, v, float(L0), float(c0), q_emp, stderr, True, "richardson", tuple(flags))


def parse_schedule(text: str) -> list[float]:
    """Parse a scale schedule: ``8:256:x2`` (geometric) or ``8:40:+8`` (linear).

    A comma-separated list of explicit values is also accepted.
    """
    text = text.strip()
    if ":" not in text:
        return [float(tok) for tok in text.split(",") if tok]
    start_s, stop_s, step_s = text.split(":")
    start, stop = float(start_s), float(stop_s)
    out = [start]
    if step_s.startswith("x"):
        factor = float(step_s[1:])
        if factor <= 1.0:
            raise ValueError("geometric schedule factor must exceed 1")
        while out[-1] * factor <= stop * (1 + 1e-12):
            out.append(out[-1] * factor)
    elif step_s.startswith("+"):
        step = float(step_s[1:])
        if step <= 0:
            raise ValueError("linear schedule step must be positive")
        while out[-1] + step <= stop * (1 + 1e-12):
            out.append(out[-1] + step)
    else:
        raise ValueError(f"bad schedule step {step_s!r} (use xF or +S)")
    return out
