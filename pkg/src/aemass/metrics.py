"""Asymptotically Euclidean metric families on the exterior region {|x| >= R}.

Everything is batch-first: points are arrays of shape (m, n) (a single point
(n,) is promoted), metric values have shape (m, n, n), first derivatives
(m, n, n, n) indexed [k, i, j] = d_k g_ij, second derivatives (m, n, n, n, n)
indexed [k, l, i, j].  Analytic families carry closed-form derivatives; grid
metrics interpolate samples and difference them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

__all__ = [
    "RadialProfile",
    "MetricField",
    "GridMetric",
    "make_flat",
    "make_conformally_flat",
    "make_schwarzschild_isotropic",
    "make_radial_perturbation",
    "make_shell_profile",
    "sample_to_grid",
    "lift_grid",
    "write_grid_file",
    "read_grid_file",
    "fd_step",
]


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def fd_step(r: np.ndarray | float) -> np.ndarray | float:
    """Finite-difference step used to validate analytic derivatives."""
    return np.maximum(1e-4 * np.asarray(r, dtype=float), 1e-4)


# ---------------------------------------------------------------------------
# Radial profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialProfile:
    """Scalar radial function with two derivatives, the carrier for metric families."""

    eval: Callable[[np.ndarray], np.ndarray]
    eval_d1: Callable[[np.ndarray], np.ndarray]
    eval_d2: Callable[[np.ndarray], np.ndarray]
    kind: str = "smooth"  # smooth | kinked | oscillatory
    decay_rate: float = math.inf
    kink_radii: tuple[float, ...] = ()
    label: str = ""

    @staticmethod
    def constant(c: float) -> "RadialProfile":
        return RadialProfile(
            eval=lambda r: np.full_like(np.asarray(r, dtype=float), c),
            eval_d1=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
            eval_d2=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
            decay_rate=math.inf if c == 0.0 else 0.0,
            label=f"const({c})",
        )

    @staticmethod
    def power(c: float, p: float) -> "RadialProfile":
        """c * r^-p."""
        return RadialProfile(
            eval=lambda r: c * np.asarray(r, dtype=float) ** (-p),
            eval_d1=lambda r: -p * c * np.asarray(r, dtype=float) ** (-p - 1),
            eval_d2=lambda r: p * (p + 1) * c * np.asarray(r, dtype=float) ** (-p - 2),
            decay_rate=p,
            label=f"{c}*r^-{p}",
        )

    @staticmethod
    def from_expression(expr: str | sp.Expr, decay_rate: float | None = None,
                        kind: str = "smooth") -> "RadialProfile":
        """Closed-form profile from a sympy expression in ``r``."""
        r = sp.Symbol("r", positive=True)
        e = sp.sympify(expr, locals={"r": r})
        d1, d2 = sp.diff(e, r), sp.diff(e, r, 2)
        if decay_rate is None:
            # Fitted at runtime if needed; declare the leading power when readable.
            decay_rate = math.nan
        f0 = sp.lambdify(r, e, "numpy")
        f1 = sp.lambdify(r, d1, "numpy")
        f2 = sp.lambdify(r, d2, "numpy")

        def wrap(f):
            def call(rr):
                rr = np.asarray(rr, dtype=float)
                return np.broadcast_to(np.asarray(f(rr), dtype=float), rr.shape).copy()

            return call

        return RadialProfile(wrap(f0), wrap(f1), wrap(f2), kind=kind,
                             decay_rate=decay_rate, label=str(e))

    @staticmethod
    def schwarzschild_u(n: int, m: float) -> "RadialProfile":
        """Conformal factor u = 1 + m / (2 r^(n-2))."""
        p = n - 2
        return RadialProfile(
            eval=lambda r: 1.0 + 0.5 * m * np.asarray(r, dtype=float) ** (-p),
            eval_d1=lambda r: -0.5 * m * p * np.asarray(r, dtype=float) ** (-p - 1),
            eval_d2=lambda r: 0.5 * m * p * (p + 1) * np.asarray(r, dtype=float) ** (-p - 2),
            decay_rate=float(p),
            label=f"1+{m}/(2 r^{p})",
        )


def make_shell_profile(
    mu_even: float,
    mu_odd: float,
    n: int = 3,
    r_start: float = 2.0,
    shell_width: float = 4.0,
    blend_radius: float = 600.0,
) -> RadialProfile:
    """Lipschitz profile whose derivative jumps between shells of equal width.

    On shell k (radii in [r_start + k*w, r_start + (k+1)*w)) the profile solves
    a'(r) = -2*mu_k*r^(1-n) with mu_k alternating between ``mu_even`` and
    ``mu_odd``; past ``blend_radius`` the coefficient is frozen at the average
    so the profile continues smoothly with closed-form decay.  The classical
    per-sphere mass integrand of g = (1+a)delta is then exactly mu(r), while
    annulus averages converge to (mu_even + mu_odd)/2.
    """
    w = float(shell_width)
    n_shells = int(math.ceil((blend_radius - r_start) / w))
    bounds = r_start + w * np.arange(n_shells + 1)  # b_0 .. b_K, b_K >= blend
    mu_bar = 0.5 * (mu_even + mu_odd)
    mus = np.where(np.arange(n_shells) % 2 == 0, mu_even, mu_odd)
    p = n - 2

    def prim(rr):  # antiderivative entering a(r) = 2*int_r^inf mu(s) s^(1-n) ds
        return np.asarray(rr, dtype=float) ** (-p) / p

    # Accumulate a(b_k) from the outermost boundary inwards.
    a_bounds = np.empty(n_shells + 1)
    a_bounds[-1] = 2.0 * mu_bar * prim(bounds[-1])
    for k in range(n_shells - 1, -1, -1):
        a_bounds[k] = a_bounds[k + 1] + 2.0 * mus[k] * (prim(bounds[k]) - prim(bounds[k + 1]))

    def mu_of(rr):
        rr = np.asarray(rr, dtype=float)
        idx = np.searchsorted(bounds, rr, side="right") - 1
        out = np.where(idx >= n_shells, mu_bar, mus[np.clip(idx, 0, n_shells - 1)])
        return np.where(idx < 0, mus[0], out)

    def a_of(rr):
        rr = np.asarray(rr, dtype=float)
        idx = np.clip(np.searchsorted(bounds, rr, side="right") - 1, 0, n_shells)
        outer = 2.0 * mu_bar * prim(rr)
        k = np.clip(idx, 0, n_shells - 1)
        inner = a_bounds[k + 1] + 2.0 * mus[k] * (prim(rr) - prim(bounds[k + 1]))
        return np.where(idx >= n_shells, outer, inner)

    def a1_of(rr):
        rr = np.asarray(rr, dtype=float)
        return -2.0 * mu_of(rr) * rr ** (1 - n)

    def a2_of(rr):
        rr = np.asarray(rr, dtype=float)
        return 2.0 * (n - 1) * mu_of(rr) * rr ** (-n)

    return RadialProfile(
        eval=a_of, eval_d1=a1_of, eval_d2=a2_of, kind="kinked",
        decay_rate=float(p), kink_radii=tuple(float(b) for b in bounds),
        label=f"shells(mu={mu_even}/{mu_odd},w={w})",
    )


# ---------------------------------------------------------------------------
# Metric fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricField:
    """Evaluator for g and its first two derivatives on {|x| >= inner_radius}."""

    dim: int
    inner_radius: float
    regularity: str  # analytic | C2 | C1 | W12_only | grid
    falloff_tau: float
    comparability: float
    _eval: Callable[[np.ndarray], np.ndarray]
    _eval_d1: Callable[[np.ndarray], np.ndarray]
    _eval_d2: Callable[[np.ndarray], np.ndarray]
    kink_radii: tuple[float, ...] = ()
    label: str = "metric"

    def eval(self, x: np.ndarray) -> np.ndarray:
        xb, single = _as_batch(x)
        g = self._eval(xb)
        return g[0] if single else g

    def eval_d1(self, x: np.ndarray) -> np.ndarray:
        xb, single = _as_batch(x)
        dg = self._eval_d1(xb)
        return dg[0] if single else dg

    def eval_d2(self, x: np.ndarray) -> np.ndarray:
        xb, single = _as_batch(x)
        d2g = self._eval_d2(xb)
        return d2g[0] if single else d2g


def _isotropic_field(
    n: int,
    inner_radius: float,
    c: Callable[[np.ndarray], np.ndarray],
    c1: Callable[[np.ndarray], np.ndarray],
    c2: Callable[[np.ndarray], np.ndarray],
    **meta,
) -> MetricField:
    """Metric g_ij = c(|x|) * delta_ij with chain-rule derivatives."""
    eye = np.eye(n)

    def ev(x):
        r = np.linalg.norm(x, axis=1)
        return c(r)[:, None, None] * eye[None, :, :]

    def ev1(x):
        r = np.linalg.norm(x, axis=1)
        xhat = x / r[:, None]
        return (c1(r)[:, None] * xhat)[:, :, None, None] * eye[None, None, :, :]

    def ev2(x):
        r = np.linalg.norm(x, axis=1)
        xhat = x / r[:, None]
        outer = xhat[:, :, None] * xhat[:, None, :]
        radial = c2(r)[:, None, None] * outer
        tangent = (c1(r) / r)[:, None, None] * (eye[None, :, :] - outer)
        return (radial + tangent)[:, :, :, None, None] * eye[None, None, None, :, :]

    return MetricField(dim=n, inner_radius=inner_radius, _eval=ev, _eval_d1=ev1,
                       _eval_d2=ev2, **meta)


def _isotropic_comparability(c: Callable, inner_radius: float) -> float:
    r = np.geomspace(inner_radius, 1e6 * inner_radius, 4096)
    vals = np.asarray(c(r), dtype=float)
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if lo <= 0:
        raise ValueError("conformal factor is nonpositive on the domain")
    return max(hi, 1.0 / lo, 1.0)


def make_flat(n: int, inner_radius: float = 1.0) -> MetricField:
    """The Euclidean metric on the exterior region."""
    if n < 3:
        raise ValueError(f"dimension must be >= 3, got {n}")
    one = RadialProfile.constant(1.0)
    return _isotropic_field(
        n, inner_radius, one.eval, one.eval_d1, one.eval_d2,
        regularity="analytic", falloff_tau=math.inf, comparability=1.0, label=f"flat(n={n})",
    )


def make_conformally_flat(n: int, u: RadialProfile, inner_radius: float = 2.0) -> MetricField:
    """g = u^(4/(n-2)) * delta for a positive radial conformal factor u."""
    if n < 3:
        raise ValueError(f"dimension must be >= 3, got {n}")
    q = 4.0 / (n - 2)

    def c(r):
        ur = u.eval(r)
        if np.any(ur <= 0):
            raise ValueError("conformal factor u must be positive on the domain")
        return ur ** q

    def c1(r):
        return q * u.eval(r) ** (q - 1) * u.eval_d1(r)

    def c2(r):
        ur, u1, u2 = u.eval(r), u.eval_d1(r), u.eval_d2(r)
        return q * ((q - 1) * ur ** (q - 2) * u1 ** 2 + ur ** (q - 1) * u2)

    tau = u.decay_rate if math.isfinite(u.decay_rate) else math.inf
    return _isotropic_field(
        n, inner_radius, c, c1, c2,
        regularity="analytic", falloff_tau=tau,
        comparability=_isotropic_comparability(c, inner_radius),
        kink_radii=u.kink_radii, label=f"conformal(n={n},u={u.label})",
    )


def make_schwarzschild_isotropic(n: int, m: float, inner_radius: float | None = None) -> MetricField:
    """Time-symmetric Schwarzschild slice in isotropic coordinates (mass m >= 0)."""
    if m < 0:
        raise ValueError("mass parameter must be nonnegative")
    singular = (m / 2.0) ** (1.0 / (n - 2)) if m > 0 else 0.0
    if inner_radius is None:
        inner_radius = max(2.0, 4.0 * singular)
    if inner_radius <= singular:
        raise ValueError(
            f"inner radius {inner_radius} does not clear the coordinate singularity at {singular}"
        )
    u = RadialProfile.schwarzschild_u(n, m)
    g = make_conformally_flat(n, u, inner_radius)
    return MetricField(
        dim=n, inner_radius=inner_radius, regularity="analytic",
        falloff_tau=float(n - 2), comparability=g.comparability,
        _eval=g._eval, _eval_d1=g._eval_d1, _eval_d2=g._eval_d2,
        label=f"schwarzschild(n={n},m={m})",
    )


def make_radial_perturbation(n: int, a: RadialProfile, inner_radius: float = 2.0) -> MetricField:
    """g = (1 + a(|x|)) * delta, so e = a*delta exactly."""
    if n < 3:
        raise ValueError(f"dimension must be >= 3, got {n}")
    r_check = np.geomspace(inner_radius, 1e6 * inner_radius, 4096)
    if np.max(np.abs(a.eval(r_check))) >= 1.0:
        raise ValueError("|a| >= 1 on the domain; metric would lose positive definiteness")

    def c(r):
        return 1.0 + a.eval(r)

    regularity = "W12_only" if a.kind == "kinked" else "analytic"
    return _isotropic_field(
        n, inner_radius, c, a.eval_d1, a.eval_d2,
        regularity=regularity,
        falloff_tau=a.decay_rate,
        comparability=_isotropic_comparability(c, inner_radius),
        kink_radii=a.kink_radii, label=f"perturbation(n={n},a={a.label})",
    )


# ---------------------------------------------------------------------------
# Grid metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridMetric:
    """Metric samples on the integer lattice points of a Cartesian annulus."""

    dim: int
    spacing: float
    r_in: float
    r_out: float
    coords: np.ndarray  # (m, n) integer lattice coordinates, position = coords*spacing
    samples: np.ndarray  # (m, n*(n+1)//2) upper-triangle components, row-major
    index: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("lattice spacing must be positive")
        if not self.index:
            object.__setattr__(
                self, "index",
                {tuple(int(c) for c in row): i for i, row in enumerate(self.coords)},
            )


def _triu_pack(g: np.ndarray, n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    return g[..., iu[0], iu[1]]


def _triu_unpack(flat: np.ndarray, n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    g = np.zeros(flat.shape[:-1] + (n, n))
    g[..., iu[0], iu[1]] = flat
    g[..., iu[1], iu[0]] = flat
    return g


def sample_to_grid(metric: MetricField, spacing: float, r_in: float, r_out: float) -> GridMetric:
    """Sample a metric on the lattice covering the annulus, with stencil margin."""
    n = metric.dim
    if spacing <= 0:
        raise ValueError("lattice spacing must be positive")
    if r_in - 2 * spacing < metric.inner_radius:
        raise ValueError("annulus too close to the metric inner radius for the stencil")
    lo, hi = r_in - 2 * spacing, r_out + 2 * spacing
    kmax = int(math.floor(hi / spacing))
    axis = np.arange(-kmax, kmax + 1)
    mesh = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    rr = np.linalg.norm(mesh * spacing, axis=1)
    keep = (rr >= lo) & (rr <= hi)
    coords = mesh[keep]
    pts = coords * spacing
    g = metric.eval(pts)
    ev = np.linalg.eigvalsh(g)
    if np.any(ev <= 0):
        raise ValueError("sampled metric is not positive definite")
    return GridMetric(dim=n, spacing=spacing, r_in=r_in, r_out=r_out,
                      coords=coords.astype(np.int64), samples=_triu_pack(g, n))


def lift_grid(grid: GridMetric, falloff_tau: float = math.nan) -> MetricField:
    """Metric evaluator from grid samples: tensor-quadratic interpolation around
    the nearest node; derivatives follow by differentiating the local model
    (central differences at the nodes)."""
    n, h = grid.dim, grid.spacing
    ncomp = grid.samples.shape[1]
    offsets = np.stack(np.meshgrid(*([np.array([-1, 0, 1])] * n), indexing="ij"),
                       axis=-1).reshape(-1, n)

    def gather(centers: np.ndarray) -> np.ndarray:
        out = np.empty((len(centers), len(offsets), ncomp))
        for a, off in enumerate(offsets):
            keys = centers + off
            for b, key in enumerate(keys):
                row = grid.index.get(tuple(int(c) for c in key))
                if row is None:
                    raise ValueError(
                        f"query outside the sampled annulus (missing lattice node {tuple(key)})"
                    )
                out[b, a] = grid.samples[row]
        return out

    def basis(xi: np.ndarray):
        # Quadratic Lagrange on nodes {-1, 0, 1}; xi in node units.
        L = np.stack([0.5 * xi * (xi - 1.0), 1.0 - xi * xi, 0.5 * xi * (xi + 1.0)], axis=-1)
        dL = np.stack([xi - 0.5, -2.0 * xi, xi + 0.5], axis=-1)
        d2L = np.broadcast_to(np.array([1.0, -2.0, 1.0]), xi.shape + (3,))
        return L, dL, d2L

    def model(x: np.ndarray, want: int) -> tuple:
        centers = np.rint(x / h).astype(np.int64)
        xi = x / h - centers  # in [-0.5, 0.5] per axis
        vals = gather(centers)  # (m, 3^n, ncomp)
        L, dL, d2L = basis(xi)  # each (m, n, 3)
        sel = offsets + 1  # offset -1,0,1 -> basis index 0,1,2
        w = np.ones((len(x), len(offsets)))
        for ax in range(n):
            w = w * L[:, ax, sel[:, ax]]
        value = np.einsum("ma,mac->mc", w, vals)
        if want == 0:
            return (value,)
        dw = np.empty((len(x), n, len(offsets)))
        for k in range(n):
            wk = np.ones((len(x), len(offsets)))
            for ax in range(n):
                fac = dL if ax == k else L
                wk = wk * fac[:, ax, sel[:, ax]]
            dw[:, k] = wk / h
        d1 = np.einsum("mka,mac->mkc", dw, vals)
        if want == 1:
            return value, d1
        d2w = np.empty((len(x), n, n, len(offsets)))
        for k in range(n):
            for l in range(n):
                wk = np.ones((len(x), len(offsets)))
                for ax in range(n):
                    if ax == k and ax == l:
                        fac = d2L
                    elif ax == k or ax == l:
                        fac = dL
                    else:
                        fac = L
                    wk = wk * fac[:, ax, sel[:, ax]]
                scale = h * h
                d2w[:, k, l] = wk / scale
        d2 = np.einsum("mkla,mac->mklc", d2w, vals)
        return value, d1, d2

    def ev(x):
        return _triu_unpack(model(x, 0)[0], n)

    def ev1(x):
        return _triu_unpack(model(x, 1)[1], n)

    def ev2(x):
        return _triu_unpack(model(x, 2)[2], n)

    return MetricField(
        dim=n, inner_radius=grid.r_in, regularity="grid",
        falloff_tau=falloff_tau, comparability=_grid_comparability(grid),
        _eval=ev, _eval_d1=ev1, _eval_d2=ev2, label=f"grid(h={h})",
    )


def _grid_comparability(grid: GridMetric) -> float:
    g = _triu_unpack(grid.samples, grid.dim)
    ev = np.linalg.eigvalsh(g)
    return float(max(np.max(ev), 1.0 / np.min(ev), 1.0))


def write_grid_file(path, grid: GridMetric) -> None:
    """Plain-text grid format: header ``n spacing R_in R_out count`` then one
    record ``x_1 .. x_n g_11 g_12 .. g_nn`` (upper triangle) per lattice point."""
    pts = grid.coords * grid.spacing
    with open(path, "w") as fh:
        fh.write(f"{grid.dim} {grid.spacing:.17e} {grid.r_in:.17e} "
                 f"{grid.r_out:.17e} {len(pts)}\n")
        for x, s in zip(pts, grid.samples):
            row = " ".join(f"{v:.17e}" for v in x) + " " + " ".join(f"{v:.17e}" for v in s)
            fh.write(row + "\n")


def read_grid_file(path) -> GridMetric:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise ValueError("grid file header must be 'n spacing R_in R_out count'")
        n = int(header[0])
        spacing, r_in, r_out = (float(v) for v in header[1:4])
        count = int(header[4])
        data = np.loadtxt(fh, ndmin=2)
    if data.shape[0] != count:
        raise ValueError(f"grid file promises {count} records, found {data.shape[0]}")
    ncomp = n * (n + 1) // 2
    if data.shape[1] != n + ncomp:
        raise ValueError("grid record width does not match the header dimension")
    pts = data[:, :n]
    coords = np.rint(pts / spacing).astype(np.int64)
    if np.max(np.abs(coords * spacing - pts)) > 1e-9 * spacing:
        raise ValueError("grid points do not lie on the declared lattice")
    g = _triu_unpack(data[:, n:], n)
    if np.any(np.linalg.eigvalsh(g) <= 0):
        raise ValueError("grid file contains a non positive definite sample")
    return GridMetric(dim=n, spacing=spacing, r_in=r_in, r_out=r_out,
                      coords=coords, samples=data[:, n:].copy())
