"""Mollifier smoothing of Lipschitz functions and maps on model manifolds.

A function is smoothed chart by chart, f_i(q) = sum_k w_k f(exp_i(log_i q - eps y_k)),
where (y_k, w_k) is a quadrature rule for the unit-radius mollifier density,
and the local pieces are glued with a partition of unity.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .clarke import ball_offsets
from .geometry import DomainError, angle, min_norm_in_hull
from .manifolds import Chart, Euclidean, FlatTorus, ModelManifold, RoundSphere

logger = logging.getLogger(__name__)

GAUSS_NODES = 16
MC_POINTS = 200_000
CHUNK = 2048


class CertificateMissing(DomainError):
    """No cone certificate exists at the base point."""


# -- the mollifier ------------------------------------------------------------

def _bump_profile(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(1.0 / (s[inside] ** 2 - 1.0))
    return out


@dataclass(frozen=True)
class Mollifier:
    """rho_eps(y) = normalizer * exp(1 / ((|y|/eps)^2 - 1)) on the eps-ball."""

    eps: float
    dim: int
    normalizer: float = field(init=False)

    def __post_init__(self):
        if self.eps <= 0 or self.dim < 1:
            raise DomainError("mollifier needs eps > 0 and dim >= 1")
        radial = integrate.quad(lambda s: math.exp(1 / (s * s - 1)) * s ** (self.dim - 1),
                                0, 1, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
        sphere_area = 2 * math.pi ** (self.dim / 2) / special.gamma(self.dim / 2)
        object.__setattr__(self, "normalizer", 1.0 / (sphere_area * radial * self.eps ** self.dim))

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return self.normalizer * _bump_profile(np.linalg.norm(y, axis=-1) / self.eps)


def mollifier_density(y, eps: float) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return Mollifier(eps, y.shape[-1])(y)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in the unit ball with positive weights summing to one; scale the
    nodes by eps to integrate against rho_eps."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]


def quadrature_rule(dim: int, nodes_per_axis: int = GAUSS_NODES, mc_points: int = MC_POINTS,
                    seed: int = 0) -> QuadratureRule:
    """Tensor Gauss-Legendre for dim <= 3, seeded Monte Carlo for dim 4-5."""
    if dim <= 3:
        x, w = np.polynomial.legendre.leggauss(nodes_per_axis)
        grids = np.meshgrid(*([x] * dim), indexing="ij")
        nodes = np.stack(grids, -1).reshape(-1, dim)
        vol = np.prod(np.stack(np.meshgrid(*([w] * dim), indexing="ij"), -1).reshape(-1, dim), axis=1)
        kind = "tensor-gauss"
    elif dim <= 5:
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((mc_points, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        nodes = g * rng.uniform(size=(mc_points, 1)) ** (1.0 / dim)
        vol = np.ones(mc_points)
        kind = "monte-carlo"
    else:
        raise DomainError("quadrature is only supported up to dimension 5")
    w = vol * _bump_profile(np.linalg.norm(nodes, axis=1))
    keep = w > 0
    return QuadratureRule(nodes[keep], w[keep] / w[keep].sum(), kind)


# -- oracles for functions on a manifold -------------------------------------

@dataclass
class ManifoldFunction:
    """Lipschitz function or map on a model manifold, evaluated in batches.

    ``eval`` maps points (..., ambient) to values (..., k); ``jacobian`` maps
    points to (..., k, ambient) and returns NaN where undefined.
    """

    manifold: ModelManifold
    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    lip: float
    out_dim: int = 1


def distance_function(man: ModelManifold, p) -> ManifoldFunction:
    """d_p with its gradient -log_x(p)/|log_x(p)|."""
    p = np.asarray(p, dtype=float)

    def ev(x):
        return man.distance(p, x)[..., None]

    def jac(x):
        v = man.log(x, np.broadcast_to(p, np.shape(x)))
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(n > 1e-14, -v / n, np.nan)
        if isinstance(man, RoundSphere):  # antipode: log degenerates
            anti = np.linalg.norm(np.asarray(x) + p, axis=-1) < 1e-14
            g[anti] = np.nan
        return g[..., None, :]

    return ManifoldFunction(man, ev, jac, 1.0)


def torus_flat_embedding() -> ManifoldFunction:
    """Isometric embedding of R^2/Z^2 into R^4 as a product of circles."""
    man = FlatTorus(2)
    k = 2 * math.pi

    def ev(x):
        x = np.asarray(x, float)
        return np.stack([np.cos(k * x[..., 0]), np.sin(k * x[..., 0]),
                         np.cos(k * x[..., 1]), np.sin(k * x[..., 1])], -1) / k

    def jac(x):
        x = np.asarray(x, float)
        J = np.zeros(x.shape[:-1] + (4, 2))
        J[..., 0, 0] = -np.sin(k * x[..., 0])
        J[..., 1, 0] = np.cos(k * x[..., 0])
        J[..., 2, 1] = -np.sin(k * x[..., 1])
        J[..., 3, 1] = np.cos(k * x[..., 1])
        return J

    return ManifoldFunction(man, ev, jac, 1.0, out_dim=4)


def equator_glued_sphere_map(compression: float = 0.5) -> ManifoldFunction:
    """S^2 -> R^3: identity on the northern hemisphere, meridians compressed
    by ``compression`` on the southern one; only Lipschitz along the equator."""
    man = RoundSphere(2)

    def polar(x):
        x = np.asarray(x, float)
        th = np.arccos(np.clip(x[..., 2], -1, 1))
        ph = np.arctan2(x[..., 1], x[..., 0])
        return th, ph

    def g(th):
        return np.where(th <= math.pi / 2, th, math.pi / 2 + compression * (th - math.pi / 2))

    def ev(x):
        th, ph = polar(x)
        t = g(th)
        return np.stack([np.sin(t) * np.cos(ph), np.sin(t) * np.sin(ph), np.cos(t)], -1)

    def jac(x):
        x = np.asarray(x, float)
        th, ph = polar(x)
        t = g(th)
        dg = np.where(th < math.pi / 2, 1.0, compression)
        dg = np.where(np.isclose(th, math.pi / 2, atol=0, rtol=0), np.nan, dg)
        e_th = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], -1)
        e_ph = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)], -1)
        f_th = np.stack([np.cos(t) * np.cos(ph), np.cos(t) * np.sin(ph), -np.sin(t)], -1)
        stretch = np.sin(t) / np.sin(th)
        return (dg[..., None, None] * f_th[..., :, None] * e_th[..., None, :]
                + stretch[..., None, None] * e_ph[..., :, None] * e_ph[..., None, :])

    return ManifoldFunction(man, ev, jac, lip=1.0, out_dim=3)


def euclidean_map(F, dim: int, out_dim: int) -> ManifoldFunction:
    """Wrap a pointwise LipschitzMap (clarke module) on R^dim for batch smoothing."""

    def ev(x):
        x = np.asarray(x, float)
        flat = x.reshape(-1, x.shape[-1])
        return np.array([F.eval(v) for v in flat]).reshape(x.shape[:-1] + (out_dim,))

    def jac(x):
        x = np.asarray(x, float)
        flat = x.reshape(-1, x.shape[-1])
        out = np.full((len(flat), out_dim, x.shape[-1]), np.nan)
        for i, v in enumerate(flat):
            J = F.jacobian(v)
            if J is not None:
                out[i] = J
        return out.reshape(x.shape[:-1] + (out_dim, x.shape[-1]))

    return ManifoldFunction(Euclidean(dim), ev, jac, F.lip, out_dim)


# -- partitions of unity and covers ------------------------------------------

def _bump(d, s):
    """exp(1 - 1/(1 - (d/s)^2)) on d < s and its derivative in d."""
    t = np.asarray(d, float) / s
    val = np.zeros_like(t)
    der = np.zeros_like(t)
    inside = t < 1
    ti = t[inside]
    one = 1 - ti ** 2
    val[inside] = np.exp(1 - 1 / one)
    der[inside] = val[inside] * (-2 * ti / s) / one ** 2
    return val, der


@dataclass
class PartitionOfUnity:
    charts: List[Chart]
    support_radii: List[float]

    def __post_init__(self):
        for i, (c, s) in enumerate(zip(self.charts, self.support_radii)):
            if not 0 < s < c.radius:
                raise DomainError(f"support of bump {i} must sit strictly inside chart {i}")


def icosahedron() -> np.ndarray:
    phi = (1 + math.sqrt(5)) / 2
    v = []
    for a in (-1, 1):
        for b in (-phi, phi):
            v += [(0, a, b), (a, b, 0), (b, 0, a)]
    v = np.array(v, float)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def standard_cover(man: ModelManifold, center=None) -> PartitionOfUnity:
    """Charts used by the reports: icosahedral on S^2, 4x4 lattice on T^2,
    one large chart on R^n (centred at ``center``)."""
    if isinstance(man, RoundSphere) and man.dim == 2:
        return PartitionOfUnity([man.chart(c, 1.0) for c in icosahedron()], [0.8] * 12)
    if isinstance(man, FlatTorus) and man.dim == 2:
        centers = man.uniform_grid(4)
        return PartitionOfUnity([man.chart(c, 0.45) for c in centers], [0.3] * len(centers))
    if isinstance(man, Euclidean):
        c = np.zeros(man.dim) if center is None else np.asarray(center, float)
        return PartitionOfUnity([man.chart(c, 11.0)], [10.0])
    raise DomainError(f"no standard cover for {man!r}")


# -- smoothing ----------------------------------------------------------------

def _pinv_t(J):
    """Transpose of the pseudo-inverse of full-column-rank J (..., amb, n)."""
    JtJ = np.swapaxes(J, -1, -2) @ J
    return J @ np.linalg.inv(JtJ)


@dataclass
class SmoothedFunction:
    f: ManifoldFunction
    partition: PartitionOfUnity
    eps: float
    rule: QuadratureRule

    @property
    def manifold(self) -> ModelManifold:
        return self.f.manifold

    def _active(self, bumps):
        hit = np.flatnonzero(np.any(bumps > 0, axis=1))
        for i in hit:
            c, s = self.partition.charts[i], self.partition.support_radii[i]
            if self.eps >= c.radius - s:
                raise DomainError(f"eps={self.eps} too large for chart {i} centred at "
                                  f"{np.round(c.center, 6).tolist()} (limit {c.radius - s:g})")
        return hit

    def _chart_terms(self, Q, with_derivative):
        """Per-chart coordinates, bump values/derivatives, local values."""
        charts, supports = self.partition.charts, self.partition.support_radii
        coords = [c.to_coords(Q) for c in charts]
        dists = [np.linalg.norm(x, axis=-1) for x in coords]
        bumps, dbumps = zip(*(_bump(d, s) for d, s in zip(dists, supports)))
        bumps = np.array(bumps)  # (C, m)
        out = []
        for i in self._active(bumps):
            rows = np.flatnonzero(bumps[i] > 0)
            x = coords[i][rows]
            c = charts[i]
            shifted = x[:, None, :] - self.eps * self.rule.nodes  # (r, K, n)
            pts = c.from_coords(shifted)
            vals = np.einsum("k,rkj->rj", self.rule.weights, self.f.eval(pts))
            term = {"chart": i, "rows": rows, "coords": x, "bump": bumps[i, rows],
                    "dbump": dbumps[i][rows], "dist": dists[i][rows], "values": vals}
            if with_derivative:
                G = self.f.jacobian(pts)  # (r, K, k, amb)
                bad = np.isnan(G).any(axis=(-1, -2))
                J = c.jacobian(shifted)  # (r, K, amb, n)
                D = G @ J  # derivative in chart coordinates
                if bad.any():
                    D[bad] = self._fd_chart_derivative(c, shifted[bad])
                local = np.einsum("k,rkjn->rjn", self.rule.weights, D)
                term["tangent"] = _pinv_t(c.jacobian(x))  # (r, amb, n)
                term["local_derivative"] = local
            out.append(term)
        return out

    def _fd_chart_derivative(self, chart, xs, h=1e-7):
        cols = []
        for e in np.eye(xs.shape[-1]):
            cols.append((self.f.eval(chart.from_coords(xs + h * e))
                         - self.f.eval(chart.from_coords(xs - h * e))) / (2 * h))
        return np.stack(cols, -1)

    def evaluate(self, Q) -> np.ndarray:
        """Smoothed values at points Q (..., ambient); shape (..., k)."""
        Q = np.asarray(Q, float)
        flat = Q.reshape(-1, Q.shape[-1])
        out = np.empty((len(flat), self.f.out_dim))
        for start in range(0, len(flat), CHUNK):
            block = flat[start:start + CHUNK]
            num = np.zeros((len(block), self.f.out_dim))
            den = np.zeros(len(block))
            for t in self._chart_terms(block, False):
                num[t["rows"]] += t["bump"][:, None] * t["values"]
                den[t["rows"]] += t["bump"]
            if np.any(den <= 0):
                raise DomainError("partition of unity does not cover every point")
            out[start:start + len(block)] = num / den[:, None]
        return out.reshape(Q.shape[:-1] + (self.f.out_dim,))

    def differential(self, Q) -> np.ndarray:
        """Smoothed differential at Q as (..., k, ambient) matrices that act on
        tangent vectors; product rule over the partition of unity."""
        Q = np.asarray(Q, float)
        flat = Q.reshape(-1, Q.shape[-1])
        amb, k = flat.shape[1], self.f.out_dim
        out = np.empty((len(flat), k, amb))
        for start in range(0, len(flat), CHUNK):
            block = flat[start:start + CHUNK]
            m = len(block)
            den = np.zeros(m)
            dden = np.zeros((m, amb))
            num = np.zeros((m, k))
            dnum = np.zeros((m, k, amb))
            for t in self._chart_terms(block, True):
                rows, b, T = t["rows"], t["bump"], t["tangent"]
                dist = np.where(t["dist"] > 0, t["dist"], 1.0)
                grad_b = (t["dbump"] / dist)[:, None] * np.einsum("ran,rn->ra", T, t["coords"])
                local = np.einsum("rjn,ran->rja", t["local_derivative"], T)
                den[rows] += b
                dden[rows] += grad_b
                num[rows] += b[:, None] * t["values"]
                dnum[rows] += b[:, None, None] * local + t["values"][:, :, None] * grad_b[:, None, :]
            val = num / den[:, None]
            out[start:start + m] = (dnum - val[:, :, None] * dden[:, None, :]) / den[:, None, None]
        if isinstance(self.manifold, RoundSphere):
            P = np.eye(amb) - flat[:, :, None] * flat[:, None, :]
            out = out @ P
        return out.reshape(Q.shape[:-1] + (k, amb))


def smooth_function(f: ManifoldFunction, partition: PartitionOfUnity, eps: float,
                    rule: Optional[QuadratureRule] = None) -> SmoothedFunction:
    if eps <= 0:
        raise DomainError("eps must be positive")
    for i, (c, s) in enumerate(zip(partition.charts, partition.support_radii)):
        if eps >= c.radius - s:
            raise DomainError(f"eps={eps} too large for chart {i} (limit {c.radius - s:g})")
    if rule is None:
        rule = quadrature_rule(f.manifold.dim)
    return SmoothedFunction(f, partition, float(eps), rule)


smooth_map = smooth_function


def evaluate(sf: SmoothedFunction, q):
    v = sf.evaluate(q)
    return v[..., 0] if sf.f.out_dim == 1 else v


def smoothed_gradient(sf: SmoothedFunction, q) -> np.ndarray:
    """Gradient of a smoothed scalar function as an ambient tangent vector."""
    if sf.f.out_dim != 1:
        raise DomainError("gradient requires a scalar function; use differential")
    return sf.differential(q)[..., 0, :]


# -- reports ------------------------------------------------------------------

class SupErrorReport(NamedTuple):
    max_abs_err: float
    bound: float
    holds: bool


def sup_error_report(sf: SmoothedFunction, f: ManifoldFunction, grid) -> SupErrorReport:
    grid = np.asarray(grid, float)
    err = float(np.max(np.abs(sf.evaluate(grid) - f.eval(grid))))
    exp_lip = max(c.exp_lip for c in sf.partition.charts)
    bound = sf.eps * f.lip * exp_lip
    return SupErrorReport(err, float(bound), bool(err <= bound + 1e-9))


class LipschitzReport(NamedTuple):
    sup_derivative: float
    bound: float
    holds: bool


def lipschitz_report(sf: SmoothedFunction, grid, lip: float, eta: float,
                     directions: int = 16) -> LipschitzReport:
    """sup of |dF_eps(u)| over unit tangent u against (1 + eta) Lip(F)."""
    grid = np.asarray(grid, float)
    D = sf.differential(grid)  # (m, k, amb)
    man = sf.manifold
    worst = 0.0
    th = 2 * math.pi * np.arange(directions) / directions
    for q, Dq in zip(grid, D):
        E = man.tangent_basis(q)
        if E.shape[1] == 2:
            U = np.cos(th)[:, None] * E[:, 0] + np.sin(th)[:, None] * E[:, 1]
        else:
            U = np.concatenate([E.T, -E.T])
        worst = max(worst, float(np.linalg.norm(U @ Dq.T, axis=1).max()))
    bound = float((1 + eta) * lip)
    return LipschitzReport(worst, bound, bool(worst <= bound))


class ImmersionReport(NamedTuple):
    margin: float
    delta: float
    holds: bool


def immersion_margin(sf: SmoothedFunction, gd, r: float, direction_count: int = 32,
                     grid_count: int = 15) -> ImmersionReport:
    """min <dF_eps(q) u, v_u> over q in B_r(p) and unit u, where v_u is the
    cone certificate of the sampled generalized differential at p."""
    from .clarke import cone_certificate

    p = gd.point
    n = p.size
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        th = 2 * math.pi * np.arange(direction_count) / direction_count
        dirs = np.column_stack([np.cos(th), np.sin(th)]) if n == 2 else None
    certs = [cone_certificate(gd, u) for u in dirs]
    delta = min(c.delta for c in certs)
    if delta <= 0:
        raise CertificateMissing("non-singularity certificate missing at "
                                 f"{p.tolist()}: the image cone contains the origin")
    axes = [np.linspace(-r, r, grid_count)] * n
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, n)
    pts = p + pts[np.linalg.norm(pts, axis=1) <= r]
    D = sf.differential(pts)  # (m, k, n)
    margin = min(float(np.min((D @ u) @ c.direction)) for u, c in zip(dirs, certs))
    return ImmersionReport(margin, float(delta), bool(margin >= delta / 3))


class ObtuseReport(NamedTuple):
    min_angle: float
    holds: bool
    witness: Optional[np.ndarray]


def check_obtuse_hypothesis(man: ModelManifold, p, q, K_grid):
    """Every x in K must see p and q at an obtuse angle (all minimal
    direction pairs); returns the worst angle and its point."""
    worst, where = math.pi, None
    for x in np.asarray(K_grid, float):
        a = float(np.arccos(np.clip((man.minimal_directions(p, x) @ man.minimal_directions(q, x).T).max(), -1, 1)))
        if a < worst:
            worst, where = a, x
    return worst, where


def obtuse_gradient_report(man: ModelManifold, p, q, K_grid, eps: float,
                           partition: Optional[PartitionOfUnity] = None) -> ObtuseReport:
    """Minimum angle between smoothed gradients of d_p and d_q over K."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    if man.distance(p, q) <= 1e-12:
        raise DomainError("p and q must differ")
    worst, where = check_obtuse_hypothesis(man, p, q, K_grid)
    if worst <= math.pi / 2:
        raise DomainError(f"obtuse-angle hypothesis fails at {np.round(where, 9).tolist()} "
                          f"(angle {worst:.6f})")
    partition = partition or standard_cover(man)
    K = np.asarray(K_grid, float)
    gp = smoothed_gradient(smooth_function(distance_function(man, p), partition, eps), K)
    gq = smoothed_gradient(smooth_function(distance_function(man, q), partition, eps), K)
    cos = np.sum(gp * gq, -1) / (np.linalg.norm(gp, axis=-1) * np.linalg.norm(gq, axis=-1))
    ang = np.arccos(np.clip(cos, -1, 1))
    i = int(np.argmin(ang))
    return ObtuseReport(float(ang[i]), bool(ang[i] > math.pi / 2), K[i])


def hull_distance(point, hull_points) -> float:
    return min_norm_in_hull(np.asarray(hull_points, float) - np.asarray(point, float), tol=1e-12).distance


def hull_containment_epsilon(man: ModelManifold, p, x, eta: float, eps_max: float,
                             probe_radius: float = 0.01, steps: int = 12,
                             partition: Optional[PartitionOfUnity] = None) -> float:
    """Bisect for the largest eps <= eps_max such that smoothed gradients of
    d_p at probes near x stay within eta of the sampled Clarke hull at x."""
    f = distance_function(man, p)
    partition = partition or standard_cover(man)
    x = np.asarray(x, float)
    offs = ball_offsets(man.dim, [probe_radius], 32, seed=7)[0]
    near = man.exp(x, offs @ man.tangent_basis(x).T)
    hull = f.jacobian(near)[:, 0, :]
    hull = hull[~np.isnan(hull).any(axis=1)]
    probes = np.concatenate([x[None], man.exp(x, 0.5 * offs[:8] @ man.tangent_basis(x).T)])

    def ok(eps):
        g = smoothed_gradient(smooth_function(f, partition, eps), probes)
        return max(hull_distance(v, hull) for v in g) <= eta

    lo, hi = 0.0, eps_max
    if ok(hi):
        return hi
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
    return lo


def zero_level_scan(sf: SmoothedFunction, grid, tol: float) -> np.ndarray:
    grid = np.asarray(grid, float)
    vals = np.abs(evaluate(sf, grid))
    return grid[vals <= tol]


def project_to_sphere(x) -> np.ndarray:
    x = np.asarray(x, float)
    n = np.linalg.norm(x)
    if n <= 0.5:
        raise DomainError(f"cannot project a point of norm {n:.3g} <= 0.5 to the sphere")
    return x / n
