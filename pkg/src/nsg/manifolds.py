"""Model manifolds (round spheres, flat tori, Euclidean space) with distance
functions, minimal geodesic directions and Grove-Shiohama criticality."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from .geometry import DomainError, angle, min_norm_in_hull

logger = logging.getLogger(__name__)

TIE_TOL = 1e-9
ANTIPODE_TOL = 1e-9


def _complete_basis(p: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the orthogonal complement of unit p."""
    n = p.size
    q, _ = np.linalg.qr(np.column_stack([p, np.eye(n)]))
    basis = q[:, 1:n]
    # fix signs so the basis varies continuously with p in generic position
    return basis * np.sign(np.sum(basis, axis=0) + 1e-300)


def _sphere_direction_set(dim: int, count: int) -> np.ndarray:
    """Deterministic, centrally symmetric set of unit vectors in R^dim."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(th), np.sin(th)])
    half = np.random.default_rng(12345).standard_normal((count // 2, dim))
    half /= np.linalg.norm(half, axis=1, keepdims=True)
    return np.concatenate([np.eye(dim), -np.eye(dim), half, -half])


class ModelManifold:
    kind: str = ""
    dim: int
    ambient_dim: int
    injectivity_radius: float = math.inf

    def distance(self, x, y):
        raise NotImplementedError

    def exp(self, x, v):
        raise NotImplementedError

    def log(self, x, y):
        raise NotImplementedError

    def tangent_basis(self, x) -> np.ndarray:
        raise NotImplementedError

    def project_tangent(self, x, v):
        return np.asarray(v, dtype=float)

    def minimal_directions(self, p, x) -> np.ndarray:
        raise NotImplementedError

    def chart(self, center, radius: float) -> "Chart":
        return Chart(self, np.asarray(center, dtype=float), float(radius))

    def __repr__(self):
        return f"{type(self).__name__}({self.dim})"


class RoundSphere(ModelManifold):
    """Unit sphere S^n inside R^(n+1)."""

    kind = "round-sphere"

    def __init__(self, n: int = 2):
        if n < 1:
            raise DomainError("sphere dimension must be positive")
        self.dim = n
        self.ambient_dim = n + 1
        self.injectivity_radius = math.pi

    def distance(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return np.arccos(np.clip(np.sum(x * y, axis=-1), -1.0, 1.0))

    def exp(self, x, v):
        x, v = np.asarray(x, float), np.asarray(v, float)
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        safe = np.where(r > 0, r, 1.0)
        return np.cos(r) * x + np.where(r > 0, np.sin(r) / safe, 1.0) * v

    def log(self, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        c = np.clip(np.sum(x * y, axis=-1, keepdims=True), -1.0, 1.0)
        w = y - c * x
        nw = np.linalg.norm(w, axis=-1, keepdims=True)
        th = np.arccos(c)
        return np.where(nw > 0, th / np.where(nw > 0, nw, 1.0), 0.0) * w

    def tangent_basis(self, x):
        return _complete_basis(np.asarray(x, float))

    def project_tangent(self, x, v):
        x, v = np.asarray(x, float), np.asarray(v, float)
        return v - np.sum(v * x, axis=-1, keepdims=True) * x

    def minimal_directions(self, p, x, count: int = 64) -> np.ndarray:
        p, x = np.asarray(p, float), np.asarray(x, float)
        if np.linalg.norm(x - p) <= ANTIPODE_TOL:
            raise DomainError("minimal directions undefined at the base point itself")
        if np.linalg.norm(x + p) <= ANTIPODE_TOL:
            basis = self.tangent_basis(x)
            return _sphere_direction_set(self.dim, count) @ basis.T
        v = self.log(x, p)
        return (v / np.linalg.norm(v))[None]

    def random_point(self, rng, size=None):
        shape = (self.ambient_dim,) if size is None else (size, self.ambient_dim)
        g = rng.standard_normal(shape)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def polar_grid(self, center, count: int) -> np.ndarray:
        """Geodesic-polar grid around ``center`` on S^2: count radii in
        [0, pi] times count angles, with each pole listed once."""
        if self.dim != 2:
            raise DomainError("polar grids are provided for S^2 only")
        center = np.asarray(center, float)
        E = self.tangent_basis(center)
        rad = np.linspace(0.0, math.pi, count)
        ang = 2 * math.pi * np.arange(count) / count
        R, A = np.meshgrid(rad, ang, indexing="ij")
        dirs = np.cos(A)[..., None] * E[:, 0] + np.sin(A)[..., None] * E[:, 1]
        pts = np.cos(R)[..., None] * center + np.sin(R)[..., None] * dirs
        inner = pts[1:-1].reshape(-1, 3)
        # each pole once, the antipode exactly
        return np.concatenate([center[None], inner, -center[None]])


class FlatTorus(ModelManifold):
    """R^n / Z^n with points stored in [0, 1)^n."""

    kind = "flat-torus"

    def __init__(self, n: int = 2):
        if n < 1:
            raise DomainError("torus dimension must be positive")
        self.dim = n
        self.ambient_dim = n
        self.injectivity_radius = 0.5
        shells = math.ceil(math.sqrt(n) / 2) + 1
        self._lattice = np.array(list(itertools.product(range(-shells, shells + 1), repeat=n)), float)

    @staticmethod
    def wrap(d):
        return np.asarray(d, float) - np.round(np.asarray(d, float))

    def distance(self, x, y):
        return np.linalg.norm(self.wrap(np.asarray(y, float) - np.asarray(x, float)), axis=-1)

    def exp(self, x, v):
        return np.mod(np.asarray(x, float) + np.asarray(v, float), 1.0)

    def log(self, x, y):
        return self.wrap(np.asarray(y, float) - np.asarray(x, float))

    def tangent_basis(self, x):
        return np.eye(self.dim)

    def lifts(self, p, x):
        """Displacements from x to every lattice translate of p."""
        base = np.asarray(p, float) - np.asarray(x, float)
        return base + self._lattice

    def minimal_directions(self, p, x) -> np.ndarray:
        d = self.lifts(p, x)
        norms = np.linalg.norm(d, axis=1)
        best = norms.min()
        if best <= TIE_TOL:
            raise DomainError("minimal directions undefined at the base point itself")
        keep = norms <= best + TIE_TOL
        return d[keep] / norms[keep, None]

    def random_point(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(size=shape)

    def uniform_grid(self, count: int) -> np.ndarray:
        axes = [np.arange(count) / count] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.dim)


class Euclidean(ModelManifold):
    """Flat R^n; used to smooth maps defined on open subsets of R^n."""

    kind = "euclidean"

    def __init__(self, n: int = 2):
        self.dim = n
        self.ambient_dim = n

    def distance(self, x, y):
        return np.linalg.norm(np.asarray(y, float) - np.asarray(x, float), axis=-1)

    def exp(self, x, v):
        return np.asarray(x, float) + np.asarray(v, float)

    def log(self, x, y):
        return np.asarray(y, float) - np.asarray(x, float)

    def tangent_basis(self, x):
        return np.eye(self.dim)

    def minimal_directions(self, p, x) -> np.ndarray:
        d = np.asarray(p, float) - np.asarray(x, float)
        n = np.linalg.norm(d)
        if n == 0:
            raise DomainError("minimal directions undefined at the base point itself")
        return (d / n)[None]


def model_manifold(kind: str, n: int) -> ModelManifold:
    kinds = {"round-sphere": RoundSphere, "flat-torus": FlatTorus, "euclidean": Euclidean}
    if kind not in kinds:
        raise DomainError(f"unknown manifold kind {kind!r}")
    return kinds[kind](n)


@dataclass
class Chart:
    """Normal-coordinate chart: coordinates x in R^dim map to exp_c(E x)."""

    manifold: ModelManifold
    center: np.ndarray
    radius: float
    exp_lip: float = 1.0
    basis: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.radius < self.manifold.injectivity_radius:
            raise DomainError("chart radius must be below the injectivity radius")
        self.basis = self.manifold.tangent_basis(self.center)

    def to_coords(self, q):
        return self.manifold.log(self.center, q) @ self.basis

    def from_coords(self, x):
        return self.manifold.exp(self.center, np.asarray(x, float) @ self.basis.T)

    def jacobian(self, x) -> np.ndarray:
        """d(from_coords) at coordinates x, shape (..., ambient, dim)."""
        x = np.asarray(x, float)
        E = self.basis
        if not isinstance(self.manifold, RoundSphere):
            return np.broadcast_to(E, x.shape[:-1] + E.shape)
        r = np.linalg.norm(x, axis=-1)[..., None, None]
        safe = np.where(r > 0, r, 1.0)
        u = x[..., None, :] / safe  # (..., 1, dim)
        Eu = u @ E.T  # (..., 1, amb)
        radial = (-np.sin(r) * self.center + np.cos(r) * Eu)  # (..., 1, amb)
        sinc = np.where(r > 0, np.sin(r) / safe, 1.0)
        eye = np.eye(E.shape[1])
        uu = np.swapaxes(u, -1, -2) @ u
        return np.swapaxes(radial, -1, -2) @ u + sinc * (E @ (eye - uu))


# -- criticality --------------------------------------------------------------

class CritReport(NamedTuple):
    point: np.ndarray
    critical: bool
    margin: float
    directions_used: int
    angle_test_critical: bool


def distance(man: ModelManifold, x, y) -> float:
    return float(man.distance(x, y))


def minimal_directions(man: ModelManifold, p, x) -> np.ndarray:
    return man.minimal_directions(p, x)


def _angle_test(dirs: np.ndarray, tangent_basis: np.ndarray, count: int = 720) -> bool:
    """Grove-Shiohama form: every tangent direction makes angle <= pi/2 with
    some minimal direction (checked on a direction grid)."""
    probes = _sphere_direction_set(tangent_basis.shape[1], count) @ tangent_basis.T
    return bool(np.all(np.max(probes @ dirs.T, axis=1) >= -1e-12))


def gs_critical(man: ModelManifold, p, x, tol: float = 1e-2) -> CritReport:
    """x is critical for d_p when the gradient directions (reversed minimal
    directions) have the origin in their hull."""
    dirs = man.minimal_directions(p, x)
    coords = dirs @ man.tangent_basis(x)  # intrinsic coordinates
    hp = min_norm_in_hull(-coords, tol=1e-12)
    return CritReport(np.asarray(x, float), bool(hp.distance <= tol), hp.distance, len(dirs),
                      _angle_test(coords, np.eye(man.dim)))


def crit_scan(man: ModelManifold, p, grid, tol: float = 1e-2) -> List[CritReport]:
    """Critical points of d_p among grid points, skipping a small ball around p."""
    out = []
    for x in np.asarray(grid, float):
        if man.distance(p, x) <= 10 * tol:
            continue
        rep = gs_critical(man, p, x, tol)
        if rep.critical:
            out.append(rep)
    return out


def bisector_sample(man: ModelManifold, p, q, grid, tol: float):
    grid = np.asarray(grid, float)
    gap = np.abs(man.distance(p, grid) - man.distance(q, grid))
    return grid[gap <= tol]


class TwistedConditions(NamedTuple):
    cond_18: bool
    cond_19: bool
    worst_angle: float
    witnesses: list


def twisted_conditions_check(man: ModelManifold, p, q, grid, tol: float = 1e-9,
                             crit_tol: float = 1e-2) -> TwistedConditions:
    """Check that d_p has no critical points in D(p) besides p (and likewise
    for q), and that minimal directions to p and q are obtuse on the bisector."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    if man.distance(p, q) <= TIE_TOL:
        raise DomainError("the two base points must differ")
    grid = np.asarray(grid, float)
    dp, dq = man.distance(p, grid), man.distance(q, grid)
    witnesses = []
    for base, region in ((p, grid[dp < dq - tol]), (q, grid[dq < dp - tol])):
        for rep in crit_scan(man, base, region, crit_tol):
            witnesses.append({"condition": "no-extra-critical", "point": rep.point.tolist(),
                              "margin": rep.margin})
    cond_18 = not witnesses
    worst = math.pi
    worst_point = None
    for x in grid[np.abs(dp - dq) <= tol]:
        to_p, to_q = man.minimal_directions(p, x), man.minimal_directions(q, x)
        a = float(np.arccos(np.clip((to_p @ to_q.T).max(), -1.0, 1.0)))
        if a < worst:
            worst, worst_point = a, x
    cond_19 = worst > math.pi / 2
    if not cond_19:
        witnesses.append({"condition": "obtuse-bisector", "point": worst_point.tolist(),
                          "angle": worst})
    return TwistedConditions(cond_18, cond_19, worst, witnesses)
