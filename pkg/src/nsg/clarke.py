"""Sampled Clarke generalized gradients and differentials of Lipschitz
functions and maps, with criticality and non-singularity tests."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .geometry import DomainError, hull_matrix_sample, min_norm_in_hull

logger = logging.getLogger(__name__)

DEFAULT_RADII = (1e-1, 1e-2, 1e-3)
MAX_RETRIES = 100


@dataclass
class LipschitzFunction:
    """Scalar Lipschitz function with an almost-everywhere gradient.

    ``gradient`` returns None where the function is not differentiable.
    """

    eval: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], Optional[np.ndarray]]
    lip: float

    def __post_init__(self):
        if not self.lip > 0:
            raise DomainError("Lipschitz bound must be positive")


@dataclass
class LipschitzMap:
    """Vector-valued Lipschitz map with an almost-everywhere Jacobian."""

    eval: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], Optional[np.ndarray]]
    lip: float

    def __post_init__(self):
        if not self.lip > 0:
            raise DomainError("Lipschitz bound must be positive")


@dataclass
class GeneralizedGradient:
    point: np.ndarray
    samples: np.ndarray  # (m, n) gradients
    radii: tuple
    seed: int
    lip: float = 1.0


@dataclass
class GeneralizedDifferential:
    point: np.ndarray
    samples: np.ndarray  # (m, k, n) Jacobians
    radii: tuple
    seed: int
    lip: float = 1.0

    def distinct(self, decimals: int = 12) -> np.ndarray:
        """Samples with numerically repeated matrices removed."""
        flat = self.samples.reshape(len(self.samples), -1)
        _, idx = np.unique(np.round(flat, decimals), axis=0, return_index=True)
        return self.samples[np.sort(idx)]


class CriticalityResult(NamedTuple):
    critical: bool
    margin: float


class ConeCertificate(NamedTuple):
    direction: np.ndarray
    delta: float


class IncreasingReport(NamedTuple):
    holds: bool
    worst_ratio: float


def ball_offset(dim: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the closed ball of the given radius."""
    g = rng.standard_normal(dim)
    g /= np.linalg.norm(g)
    return radius * rng.uniform() ** (1.0 / dim) * g


def ball_offsets(dim: int, radii: Sequence[float], per_radius: int, seed: int,
                 attempt: int = 0) -> np.ndarray:
    """Offsets for every (radius, index) pair; each draw has its own seed."""
    out = np.empty((len(radii), per_radius, dim))
    for i, r in enumerate(radii):
        for j in range(per_radius):
            rng = np.random.default_rng([seed, i, j, attempt])
            out[i, j] = ball_offset(dim, r, rng)
    return out


def _sample(oracle_fn, x, radii, per_radius, seed):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if radii is None:
        radii = DEFAULT_RADII
    radii = tuple(float(r) for r in radii)
    if not radii or min(radii) <= 0:
        raise DomainError("radii must be positive")
    if per_radius < 1:
        raise DomainError("per_radius must be at least 1")
    offsets = ball_offsets(x.size, radii, per_radius, seed)
    samples = []
    for i, r in enumerate(radii):
        for j in range(per_radius):
            value = oracle_fn(x + offsets[i, j])
            attempt = 0
            while value is None:
                attempt += 1
                if attempt > MAX_RETRIES:
                    raise DomainError(f"derivative undefined after {MAX_RETRIES} redraws near {x}")
                rng = np.random.default_rng([seed, i, j, attempt])
                value = oracle_fn(x + ball_offset(x.size, r, rng))
            samples.append(np.asarray(value, dtype=float))
    return x, radii, np.array(samples)


def sample_generalized_gradient(f: LipschitzFunction, x, radii=None, per_radius: int = 64,
                                seed: int = 0) -> GeneralizedGradient:
    """Gradients at random points of shrinking balls around ``x``."""
    x, radii, samples = _sample(f.gradient, x, radii, per_radius, seed)
    return GeneralizedGradient(x, samples.reshape(len(samples), -1), radii, seed, f.lip)


def sample_generalized_differential(F: LipschitzMap, x, radii=None, per_radius: int = 64,
                                    seed: int = 0) -> GeneralizedDifferential:
    x, radii, samples = _sample(F.jacobian, x, radii, per_radius, seed)
    if samples.ndim == 2:
        samples = samples[:, None, :]
    return GeneralizedDifferential(x, samples, radii, seed, F.lip)


def is_critical(gg: GeneralizedGradient, tol: Optional[float] = None) -> CriticalityResult:
    """A point is critical when the origin lies (within tol) in the hull."""
    if tol is None:
        tol = 1e-3 * gg.lip
    hp = min_norm_in_hull(gg.samples, tol=min(tol, 1e-9) * 1e-1)
    return CriticalityResult(hp.distance <= tol, hp.distance)


def nonsingularity_margin(gd: GeneralizedDifferential, hull_count: int = 10_000,
                          seed: int = 0) -> float:
    """Smallest singular value over sampled Jacobians and random convex
    combinations of them."""
    verts = gd.distinct()
    mats = hull_matrix_sample(verts, seed, len(verts) + hull_count)
    return float(np.linalg.svd(mats, compute_uv=False)[:, -1].min())


def cone_certificate(gd: GeneralizedDifferential, u) -> ConeCertificate:
    """Direction v with <A u, v> >= delta for all sampled A.

    v is the normalised min-norm point of {A u}; delta <= 0 means no
    certificate exists.
    """
    u = np.asarray(u, dtype=float)
    images = gd.samples @ u
    hp = min_norm_in_hull(images, tol=1e-12)
    if hp.distance > 1e-12:
        v = hp.witness / hp.distance
    else:
        v = images[0] / np.linalg.norm(images[0]) if np.linalg.norm(images[0]) > 0 else np.eye(len(u))[0]
    return ConeCertificate(v, float((images @ v).min()))


def increasing_check(F: LipschitzMap, p, r: float, delta: float, pairs: int = 10_000,
                     seed: int = 0) -> IncreasingReport:
    """Check ||F(x) - F(y)|| >= delta/2 ||x - y|| on random pairs in B_r(p)."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(pairs):
        x = p + ball_offset(p.size, r, rng)
        y = p + ball_offset(p.size, r, rng)
        d = np.linalg.norm(x - y)
        if d == 0:
            continue
        worst = min(worst, np.linalg.norm(np.asarray(F.eval(x)) - np.asarray(F.eval(y))) / d)
    return IncreasingReport(bool(worst >= delta / 2), float(worst))


# -- catalogue of reference oracles used by tests and the harness ---------------

def max_of_square_and_affine() -> LipschitzFunction:
    """x -> max(x^2, x + 2), Lipschitz on [-3, 3]."""

    def f(x):
        x = float(np.ravel(x)[0])
        return max(x * x, x + 2)

    def grad(x):
        x = float(np.ravel(x)[0])
        a, b = x * x, x + 2
        if a == b:
            return None
        return np.array([2 * x if a > b else 1.0])

    return LipschitzFunction(f, grad, lip=6.0)


def abs_mixing_map() -> LipschitzMap:
    """(x, y) -> (|x| + y, 2x + |y|)."""

    def F(v):
        x, y = np.asarray(v, dtype=float)
        return np.array([abs(x) + y, 2 * x + abs(y)])

    def jac(v):
        x, y = np.asarray(v, dtype=float)
        if x == 0 or y == 0:
            return None
        return np.array([[np.sign(x), 1.0], [2.0, np.sign(y)]])

    return LipschitzMap(F, jac, lip=3.0)


def euclidean_norm() -> LipschitzFunction:
    def grad(x):
        x = np.asarray(x, dtype=float)
        n = np.linalg.norm(x)
        return None if n == 0 else x / n

    return LipschitzFunction(lambda x: float(np.linalg.norm(x)), grad, lip=1.0)


def absolute_value_map() -> LipschitzMap:
    """The fold x -> |x| on the real line."""

    def jac(x):
        x = float(np.ravel(x)[0])
        return None if x == 0 else np.array([[np.sign(x)]])

    return LipschitzMap(lambda x: np.abs(np.atleast_1d(x)), jac, lip=1.0)
