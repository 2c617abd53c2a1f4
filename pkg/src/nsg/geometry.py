"""Shared geometric primitives: great-circle segments, angles, convex hulls of
vectors and matrices, and rank tests on convex combinations."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DomainError(ValueError):
    """Raised when an input violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver hits its iteration cap."""

    def __init__(self, message: str, gap: float):
        super().__init__(f"{message} (last gap {gap:.3e})")
        self.gap = gap


def unit(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=axis, keepdims=True)
    if np.any(norm == 0):
        raise DomainError("cannot normalise a zero vector")
    return x / norm


@dataclass(frozen=True)
class GeodesicSegment:
    """Unit-speed great-circle arc t -> base cos t + tangent sin t."""

    base: np.ndarray
    tangent: np.ndarray
    length: float = math.pi

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        tangent = np.asarray(self.tangent, dtype=float)
        if base.shape != tangent.shape or base.ndim != 1:
            raise DomainError("base and tangent must be vectors of equal length")
        if abs(np.linalg.norm(base) - 1) > 1e-10 or abs(np.linalg.norm(tangent) - 1) > 1e-10:
            raise DomainError("base and tangent must be unit vectors")
        if abs(base @ tangent) > 1e-10:
            raise DomainError("base and tangent must be orthogonal")
        if not 0 < self.length <= math.pi + 1e-12:
            raise DomainError("segment length must lie in (0, pi]")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "tangent", tangent)

    @property
    def dim(self) -> int:
        return self.base.size

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator) -> "GeodesicSegment":
        g = rng.standard_normal((2, dim))
        q, _ = np.linalg.qr(g.T)
        return cls(q[:, 0], q[:, 1])

    def points(self, t) -> np.ndarray:
        """Evaluate at an array of parameters without the domain check (used
        for finite differences that step slightly past the endpoints)."""
        t = np.asarray(t, dtype=float)[..., None]
        return self.base * np.cos(t) + self.tangent * np.sin(t)

    def velocities(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)[..., None]
        return -self.base * np.sin(t) + self.tangent * np.cos(t)


def geodesic_point(seg: GeodesicSegment, t: float) -> np.ndarray:
    if not 0 <= t <= seg.length:
        raise DomainError(f"parameter {t} outside [0, {seg.length}]")
    return seg.points(t)


def angle(u, v) -> float:
    """Angle in [0, pi] between two nonzero vectors."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DomainError("angle undefined for a zero vector")
    return float(np.arccos(np.clip(u @ v / (nu * nv), -1.0, 1.0)))


class HullPoint(NamedTuple):
    witness: np.ndarray
    distance: float
    weights: np.ndarray


def _affine_min_norm(P: np.ndarray) -> np.ndarray:
    """Weights (summing to one) of the min-norm point of the affine hull of rows."""
    k = len(P)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = P @ P.T
    kkt[:k, k] = kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    return np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]


def min_norm_in_hull(points, tol: float = 1e-10, max_iter: int = 100_000) -> HullPoint:
    """Minimum-norm point of conv(points).

    Fully corrective Frank-Wolfe (Wolfe's min-norm-point method): add the
    vertex minimising <x, p>, then re-solve over the active set.  Stops once
    ||x|| minus the separating-hyperplane lower bound max(0, min_i <x, p_i>/||x||)
    is below ``tol``; both bracket the true distance, so the returned
    distance is within ``tol`` of it.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:  # a list of scalars
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise DomainError("need a non-empty list of vectors")
    m = pts.shape[0]
    active = [int(np.argmin(np.einsum("ij,ij->i", pts, pts)))]
    lam = np.array([1.0])
    x = pts[active[0]].copy()
    gap = np.inf
    steps = 0
    while True:
        upper = float(np.linalg.norm(x))
        if upper <= tol:
            break
        scores = pts @ x
        j = int(np.argmin(scores))
        gap = upper - max(0.0, scores[j] / upper)
        if gap <= tol or j in active:
            break
        active.append(j)
        lam = np.append(lam, 0.0)
        while True:  # corrective step on the active set
            steps += 1
            if steps > max_iter:
                raise ConvergenceError("min_norm_in_hull did not converge", gap)
            alpha = _affine_min_norm(pts[active])
            if np.all(alpha > 1e-14):
                lam = alpha
                break
            neg = alpha <= 1e-14
            theta = np.min(lam[neg] / (lam[neg] - alpha[neg]))
            lam = lam + theta * (alpha - lam)
            keep = lam > 1e-14
            if not keep.any():
                keep[np.argmax(lam)] = True
            active = [a for a, k in zip(active, keep) if k]
            lam = lam[keep] / lam[keep].sum()
        x = lam @ pts[active]
    weights = np.zeros(m)
    weights[active] = np.clip(lam, 0, None)
    weights /= weights.sum()
    x = weights @ pts
    return HullPoint(x, float(np.linalg.norm(x)), weights)


def hull_matrix_sample(matrices, seed: int, count: int) -> np.ndarray:
    """Vertices first, then Dirichlet(1,...,1) convex combinations."""
    mats = np.asarray(matrices, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if mats.ndim != 3 or mats.shape[0] == 0:
        raise DomainError("need a non-empty list of equally shaped matrices")
    m = mats.shape[0]
    n_vert = min(m, count)
    out = [mats[:n_vert]]
    if count > m:
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.ones(m), size=count - m)
        out.append(np.einsum("ki,irc->krc", w, mats))
    return np.concatenate(out, axis=0)


def min_singular_value(M) -> float:
    return float(np.linalg.svd(np.asarray(M, dtype=float), compute_uv=False)[-1])


def numerical_rank(M, rtol: float = 1e-8) -> int:
    s = np.linalg.svd(np.atleast_2d(np.asarray(M, dtype=float)), compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def near_orthonormal_dependent(eps: float) -> np.ndarray:
    """Linearly dependent unit vectors whose Gram matrix is eps-close to I.

    Returns k+1 rows in R^(k+1) with k the smallest integer at or above
    4(1-eps^2)/eps^2 (at least 2).  The first k rows are standard basis
    vectors; the last is the normalised sum of them, so every off-diagonal
    Gram entry equals 1/sqrt(k) < eps and the rank is k.
    """
    if not 0 < eps < 1:
        raise DomainError("eps must lie in (0, 1)")
    k = max(math.ceil(4 * (1 - eps**2) / eps**2), 2)
    vecs = np.zeros((k + 1, k + 1))
    vecs[:k, :k] = np.eye(k)
    vecs[k, :k] = 1 / math.sqrt(k)
    return vecs


def gram_deviation(vectors) -> float:
    v = np.asarray(vectors, dtype=float)
    return float(np.max(np.abs(v @ v.T - np.eye(len(v)))))


def hyperplane_convex_rank_margin(A, B, grid: int = 1001, tol: float = 1e-10) -> float:
    """Smallest singular value along the segment (1-t)A + tB.

    Both matrices must fix the hyperplane {x_n = 0} pointwise and send e_n to
    a vector with positive last coordinate; then every convex combination is
    invertible.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or B.shape != (n, n):
        raise DomainError("A and B must be square of the same size")
    eye = np.eye(n)[:, : n - 1]
    for name, M in (("A", A), ("B", B)):
        if np.max(np.abs(M[:, : n - 1] - eye), initial=0.0) > tol:
            raise DomainError(f"{name} is not the identity on the hyperplane")
        if M[n - 1, n - 1] <= tol:
            raise DomainError(f"positive normal component violated by {name}")
    ts = np.linspace(0.0, 1.0, grid)
    mats = (1 - ts)[:, None, None] * A + ts[:, None, None] * B
    return float(np.linalg.svd(mats, compute_uv=False)[:, -1].min())
