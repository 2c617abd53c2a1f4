"""Self-maps of the unit sphere S^(n-1) in R^n: images of great circles,
comparison curves, bi-Lipschitz estimates, the near-isometry conditions and
the radial extension to R^n."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy import integrate, optimize

from .geometry import DomainError, GeodesicSegment, hull_matrix_sample, unit

logger = logging.getLogger(__name__)

# constant appearing in the near-isometry conditions
NEAR_ISOMETRY_K = (math.sqrt(2) - 1) / (2 * (math.exp(math.pi) - 1))
ALPHA_THRESHOLD = math.exp(-math.pi) * (1 - 1 / math.sqrt(2))
FD_STEP = math.pi / 512
MIN_STEPS = 64


def dimension_cap(n: int) -> float:
    """Allowed excess of Lip^b(sigma)^2 over one on S^(n-1)."""
    return ((8 / math.pi) * (n - 1)) ** -0.5


def _plane_rotate(v, theta, quarter=False):
    """Rotate the first two coordinates by theta (plus pi/2 if quarter),
    zeroing the rest when quarter is set (the derivative of the rotation)."""
    v = np.asarray(v, float)
    th = theta + (math.pi / 2 if quarter else 0.0)
    c, s = np.cos(th), np.sin(th)
    out = np.zeros_like(v) if quarter else v.copy()
    out[..., 0] = c * v[..., 0] - s * v[..., 1]
    out[..., 1] = s * v[..., 0] + c * v[..., 1]
    return out


class SphereMap:
    """Base class; subclasses provide __call__ and differential."""

    dim: int  # ambient dimension n, the map acts on S^(n-1)
    analytic: bool = False

    def __call__(self, v):
        raise NotImplementedError

    def differential(self, v, w):
        """d sigma_v(w) for w tangent at v."""
        v, w = np.asarray(v, float), np.asarray(w, float)
        h = FD_STEP
        nw = np.linalg.norm(w, axis=-1, keepdims=True)
        safe = np.where(nw > 0, nw, 1.0)
        u = w / safe
        plus = self(np.cos(h) * v + np.sin(h) * u)
        minus = self(np.cos(h) * v - np.sin(h) * u)
        return nw * (plus - minus) / (2 * h)

    def jets(self, seg: GeodesicSegment, t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError("no closed-form derivatives for this map")

    def describe(self) -> dict:
        return {"family": type(self).__name__}


class IdentityMap(SphereMap):
    analytic = True

    def __init__(self, dim: int):
        self.dim = dim

    def __call__(self, v):
        return np.asarray(v, float).copy()

    def differential(self, v, w):
        return np.asarray(w, float).copy()

    def jets(self, seg, t):
        c = seg.points(t)
        return c, seg.velocities(t), -c


class RotationMap(SphereMap):
    analytic = True

    def __init__(self, Q):
        Q = np.asarray(Q, float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or not np.allclose(Q.T @ Q, np.eye(len(Q)), atol=1e-10):
            raise DomainError("rotation must be an orthogonal matrix")
        self.Q = Q
        self.dim = len(Q)

    @classmethod
    def random(cls, dim, seed):
        q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((dim, dim)))
        return cls(q * np.sign(np.diag(r)))

    def __call__(self, v):
        return np.asarray(v, float) @ self.Q.T

    def differential(self, v, w):
        return np.asarray(w, float) @ self.Q.T

    def jets(self, seg, t):
        c = seg.points(t) @ self.Q.T
        return c, seg.velocities(t) @ self.Q.T, -c


PROFILES: Dict[str, Tuple[Callable, Callable, Callable]] = {
    "linear": (lambda z: z, lambda z: np.ones_like(z), lambda z: np.zeros_like(z)),
    "sine": (lambda z: np.sin(math.pi * z / 2),
             lambda z: math.pi / 2 * np.cos(math.pi * z / 2),
             lambda z: -(math.pi / 2) ** 2 * np.sin(math.pi * z / 2)),
    "cubic": (lambda z: z ** 3, lambda z: 3 * z ** 2, lambda z: 6 * z),
}


class LatitudeTwist(SphereMap):
    """Rotate the (e_1, e_2)-plane by amplitude * profile(height), where the
    height is the last coordinate.  The inverse twists the other way, so
    the map is a diffeomorphism."""

    analytic = True

    def __init__(self, dim: int, amplitude: float, profile: str = "linear"):
        if dim < 3:
            raise DomainError("latitude twists need ambient dimension >= 3")
        if profile not in PROFILES:
            raise DomainError(f"unknown profile {profile!r}")
        self.dim, self.amplitude, self.profile = dim, float(amplitude), profile
        self._h, self._dh, self._d2h = PROFILES[profile]

    def describe(self):
        return {"family": "latitude-twist", "amplitude": self.amplitude, "profile": self.profile}

    def _theta(self, v):
        return self.amplitude * self._h(np.asarray(v, float)[..., -1])

    def __call__(self, v):
        return _plane_rotate(v, self._theta(v))

    def differential(self, v, w):
        v, w = np.asarray(v, float), np.asarray(w, float)
        th = self._theta(v)
        dth = self.amplitude * self._dh(v[..., -1]) * w[..., -1]
        return _plane_rotate(w, th) + dth[..., None] * _plane_rotate(v, th, quarter=True)

    def jets(self, seg, t):
        g, gd = seg.points(t), seg.velocities(t)
        gdd = -g
        z, zd, zdd = g[..., -1], gd[..., -1], gdd[..., -1]
        a = self.amplitude
        th = a * self._h(z)
        thd = a * self._dh(z) * zd
        thdd = a * (self._d2h(z) * zd ** 2 + self._dh(z) * zdd)
        R = lambda v: _plane_rotate(v, th)
        Rp = lambda v: _plane_rotate(v, th, quarter=True)
        plane_R = R(g) - np.concatenate([np.zeros(g.shape[:-1] + (2,)), g[..., 2:]], -1)
        c = R(g)
        cd = thd[..., None] * Rp(g) + R(gd)
        cdd = (-(thd ** 2)[..., None] * plane_R + thdd[..., None] * Rp(g)
               + 2 * thd[..., None] * Rp(gd) + R(gdd))
        return c, cd, cdd


class NormalizedPerturbation(SphereMap):
    """v -> (v + a X(v)) / |v + a X(v)| for a tangent field X."""

    def __init__(self, dim: int, field: Callable, amplitude: float):
        self.dim, self.field, self.amplitude = dim, field, float(amplitude)

    def __call__(self, v):
        v = np.asarray(v, float)
        return unit(v + self.amplitude * self.field(v))

    def describe(self):
        return {"family": "normalized-perturbation", "amplitude": self.amplitude}


def linear_tangent_field(B) -> Callable:
    """X(v) = (I - v v^T) B v."""
    B = np.asarray(B, float)

    def field(v):
        v = np.asarray(v, float)
        Bv = v @ B.T
        return Bv - np.sum(Bv * v, -1, keepdims=True) * v

    return field


def make_sphere_map(family: str, dim: int, amplitude: float = 0.0, profile: str = "linear",
                    seed: int = 0) -> SphereMap:
    if family == "identity":
        return IdentityMap(dim)
    if family == "rotation":
        return RotationMap.random(dim, seed)
    if family == "latitude-twist":
        return LatitudeTwist(dim, amplitude, profile)
    if family == "normalized-perturbation":
        B = np.random.default_rng(seed).standard_normal((dim, dim))
        return NormalizedPerturbation(dim, linear_tangent_field(B), amplitude)
    raise DomainError(f"unknown sphere map family {family!r}")


def min_differential_singular(sigma: SphereMap, count: int = 2000, seed: int = 0) -> float:
    """Smallest singular value of d sigma restricted to tangent spaces."""
    rng = np.random.default_rng(seed)
    lo = np.inf
    for v in unit(rng.standard_normal((count, sigma.dim))):
        E = np.linalg.qr(np.column_stack([v, np.eye(sigma.dim)]))[0][:, 1:sigma.dim]
        M = np.stack([sigma.differential(v, e) for e in E.T], -1)
        lo = min(lo, np.linalg.svd(M, compute_uv=False)[-1])
    return float(lo)


# -- curves c = sigma o gamma -------------------------------------------------

@dataclass
class CurveSamples:
    t: np.ndarray
    c: np.ndarray
    cdot: np.ndarray
    cddot: np.ndarray
    h: float
    mode: str

    @property
    def comparison(self):
        """c_bar(t) = c(0) cos t + c'(0) sin t and its derivative."""
        t = self.t[:, None]
        cb = self.c[0] * np.cos(t) + self.cdot[0] * np.sin(t)
        cbd = -self.c[0] * np.sin(t) + self.cdot[0] * np.cos(t)
        return cb, cbd


def curve_samples(sigma: SphereMap, seg: GeodesicSegment, h: float = FD_STEP,
                  mode: str = "fd") -> CurveSamples:
    """Sample c = sigma o gamma on t_j = j h over [0, pi]."""
    steps = round(math.pi / h)
    if steps < MIN_STEPS or abs(steps * h - math.pi) > 1e-9:
        raise DomainError(f"step {h} must split [0, pi] into >= {MIN_STEPS} equal steps")
    t = np.linspace(0.0, math.pi, steps + 1)
    h = math.pi / steps
    if mode == "analytic":
        c, cd, cdd = sigma.jets(seg, t)
    elif mode == "fd":
        # the curve is evaluated past both ends, so every difference is central
        c = sigma(seg.points(t))
        plus, minus = sigma(seg.points(t + h)), sigma(seg.points(t - h))
        cd = (plus - minus) / (2 * h)
        cdd = (plus - 2 * c + minus) / h ** 2
    else:
        raise DomainError(f"unknown derivative mode {mode!r}")
    return CurveSamples(t, c, cd, cdd, h, mode)


def alpha_integral(samples: CurveSamples) -> float:
    """integral_0^pi e^(-t) |c'' + c| dt by composite Simpson."""
    vals = np.exp(-samples.t) * np.linalg.norm(samples.cddot + samples.c, axis=1)
    return float(integrate.simpson(vals, x=samples.t))


def curvature_identity_residual(samples: CurveSamples) -> float:
    """max | |c''+c|^2 - (|c''|^2 - 2|c'|^2 + 1) |."""
    c, cd, cdd = samples.c, samples.cdot, samples.cddot
    lhs = np.sum((cdd + c) ** 2, 1)
    rhs = np.sum(cdd ** 2, 1) - 2 * np.sum(cd ** 2, 1) + 1
    return float(np.max(np.abs(lhs - rhs)))


class GronwallReport(NamedTuple):
    max_lhs: float
    rhs: float
    holds: bool
    chain: Dict[str, bool]


def gronwall_check(samples: CurveSamples, tol: float = 1e-9) -> GronwallReport:
    """Compare the deviation of c from its comparison great circle with
    e^pi times the alpha integral, then test the consequences of that bound."""
    cb, cbd = samples.comparison
    lhs = np.sqrt(np.sum((samples.c - cb) ** 2, 1) + np.sum((samples.cdot - cbd) ** 2, 1))
    alpha = math.exp(math.pi) * alpha_integral(samples)
    t = samples.t
    c0, v0 = samples.c[0], samples.cdot[0]
    speed = float(np.linalg.norm(v0))
    cos, sin = np.cos(t), np.sin(t)
    along_start = (samples.c @ c0) * cos >= cos ** 2 - alpha * np.abs(cos) - tol
    along_velocity = (samples.c @ v0) * sin >= speed ** 2 * sin ** 2 - alpha * speed * sin - tol
    chain = {
        "start-inner-product": bool(np.all(along_start)),
        "velocity-inner-product": bool(np.all(along_velocity)),
        "initial-speed": abs(speed - 1) <= alpha + tol,
    }
    if alpha <= 1 - 1 / math.sqrt(2):
        chain["comparison-positive"] = bool(np.all(np.sum(cb * samples.c, 1) > 0))
    max_lhs = float(lhs.max())
    return GronwallReport(max_lhs, alpha, max_lhs <= alpha + tol, chain)


# -- bi-Lipschitz constant ----------------------------------------------------

def _chord_ratio(sigma, u, v):
    return np.linalg.norm(sigma(u) - sigma(v), axis=-1) / np.linalg.norm(u - v, axis=-1)


def tangent_frames(points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal tangent frames (m, n, n-1) at unit points (m, n)."""
    m, n = points.shape
    frames = np.empty((m, n, n - 1))
    done = [points]
    for j in range(n - 1):
        g = rng.standard_normal((m, n))
        for b in done:
            g -= np.sum(g * b, 1, keepdims=True) * b
        g = unit(g)
        frames[:, :, j] = g
        done.append(g)
    return frames


def bilip_estimate(sigma: SphereMap, pairs: int = 100_000, seed: int = 0,
                   use_differential: bool = True, refine: int = 4) -> float:
    """max(sup ratio, 1/inf ratio) of chord ratios |sigma u - sigma v|/|u - v|.

    Pairs are half uniform and half at log-uniform separations; the
    differential's singular values (limits of close pairs) tighten the
    estimate, and the most extreme pairs are polished by local search.
    """
    rng = np.random.default_rng(seed)
    n = sigma.dim
    u = unit(rng.standard_normal((pairs, n)))
    far = unit(rng.standard_normal((pairs // 2, n)))
    w = rng.standard_normal((pairs - pairs // 2, n))
    half = u[pairs // 2:]
    w = unit(w - np.sum(w * half, 1, keepdims=True) * half)
    s = 10 ** rng.uniform(-4, math.log10(math.pi), size=(len(half), 1))
    near = np.cos(s) * half + np.sin(s) * w
    v = np.concatenate([far, near])
    ok = np.linalg.norm(u - v, axis=1) > 1e-12
    u, v = u[ok], v[ok]
    r = _chord_ratio(sigma, u, v)
    hi, lo = float(r.max()), float(r.min())
    if not isinstance(sigma, (IdentityMap, RotationMap)) and refine:
        for sign, idx in ((-1.0, np.argsort(r)[-refine:]), (1.0, np.argsort(r)[:refine])):
            for i in idx:
                x0 = np.concatenate([u[i], v[i]])

                def obj(x):
                    a, b = unit(x[:n]), unit(x[n:])
                    d = np.linalg.norm(a - b)
                    return sign * _chord_ratio(sigma, a, b) if d > 1e-9 else 0.0

                res = optimize.minimize(obj, x0, method="Nelder-Mead",
                                        options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 2000})
                val = sign * res.fun
                if val > 0:
                    hi, lo = max(hi, val), min(lo, val)
    if use_differential:
        pts = unit(rng.standard_normal((min(pairs, 4000), n)))
        E = tangent_frames(pts, rng)
        M = np.stack([sigma.differential(pts, E[:, :, j]) for j in range(n - 1)], -1)
        sv = np.linalg.svd(M, compute_uv=False)
        hi, lo = max(hi, float(sv[:, 0].max())), min(lo, float(sv[:, -1].min()))
    return float(max(1.0, hi, 1.0 / lo))


# -- conditions ---------------------------------------------------------------

@dataclass
class ConditionEntry:
    satisfied: bool
    margin: float
    worst_geodesic: Optional[int] = None
    detail: dict = field(default_factory=dict)


@dataclass
class ConditionReport:
    entries: Dict[str, ConditionEntry]
    lip_b: float
    alpha_max: float
    seed: int

    @property
    def satisfied(self) -> bool:
        return all(e.satisfied for e in self.entries.values())


CONDITION_NAMES = ("bilip-lower", "curvature", "bilip-dimension", "comparison-angle")


def sample_geodesic(dim: int, seed: int, index: int) -> GeodesicSegment:
    return GeodesicSegment.random(dim, np.random.default_rng([seed, index]))


def comparison_angle(samples: CurveSamples) -> np.ndarray:
    cb, _ = samples.comparison
    cos = np.sum(cb * samples.c, 1) / (np.linalg.norm(cb, axis=1) * np.linalg.norm(samples.c, axis=1))
    return np.arccos(np.clip(cos, -1, 1))


def check_conditions(sigma: SphereMap, n: Optional[int] = None, geodesic_count: int = 256,
                     seed: int = 0, h: float = FD_STEP, mode: Optional[str] = None,
                     pairs: int = 100_000) -> ConditionReport:
    """Evaluate the near-isometry, dimension and comparison-angle conditions."""
    n = sigma.dim if n is None else n
    if n != sigma.dim:
        raise DomainError("dimension does not match the map")
    mode = mode or ("analytic" if sigma.analytic else "fd")
    lip = bilip_estimate(sigma, pairs=pairs, seed=seed)
    K2 = NEAR_ISOMETRY_K ** 2
    curv, angles, alphas, residuals = [], [], [], []
    for i in range(geodesic_count):
        s = curve_samples(sigma, sample_geodesic(n, seed, i), h, mode)
        curv.append(float(np.max(np.sum(s.cddot ** 2, 1))))
        angles.append(float(np.max(comparison_angle(s))))
        alphas.append(alpha_integral(s))
        residuals.append(curvature_identity_residual(s))
    curv, angles = np.array(curv), np.array(angles)
    i_curv, i_ang = int(np.argmax(curv)), int(np.argmax(angles))
    entries = {
        "bilip-lower": ConditionEntry(lip ** -2 >= 1 - K2, lip ** -2 - (1 - K2)),
        "curvature": ConditionEntry(bool(curv[i_curv] <= lip ** -2 + K2),
                                    float(lip ** -2 + K2 - curv[i_curv]), i_curv),
        "bilip-dimension": ConditionEntry(lip ** 2 <= 1 + dimension_cap(n),
                                          1 + dimension_cap(n) - lip ** 2),
        "comparison-angle": ConditionEntry(bool(angles[i_ang] < math.pi / 2),
                                           float(math.pi / 2 - angles[i_ang]), i_ang),
    }
    res_tol = 1e-6 if mode == "analytic" else 5 * h ** 2
    entries["curvature-identity"] = ConditionEntry(max(residuals) <= res_tol,
                                                   res_tol - max(residuals),
                                                   int(np.argmax(residuals)))
    near_iso = entries["bilip-lower"].satisfied and entries["curvature"].satisfied
    alpha_max = float(max(alphas))
    entries["alpha-implication"] = ConditionEntry(
        (not near_iso) or alpha_max <= ALPHA_THRESHOLD, ALPHA_THRESHOLD - alpha_max,
        int(np.argmax(alphas)), {"near_isometry": near_iso})
    for e in entries.values():
        e.satisfied, e.margin = bool(e.satisfied), float(e.margin)
    return ConditionReport(entries, lip, alpha_max, seed)


def alpha_condition(sigma: SphereMap, geodesic_count: int = 256, seed: int = 0,
                    h: float = FD_STEP) -> Tuple[bool, float]:
    mode = "analytic" if sigma.analytic else "fd"
    worst = max(alpha_integral(curve_samples(sigma, sample_geodesic(sigma.dim, seed, i), h, mode))
                for i in range(geodesic_count))
    return worst <= ALPHA_THRESHOLD, worst


# -- radial extension ---------------------------------------------------------

def radial_extension_eval(sigma: SphereMap, v) -> np.ndarray:
    """F(v) = |v| sigma(v/|v|), F(0) = 0."""
    v = np.asarray(v, float)
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    dirs = np.where(r > 0, v / np.where(r > 0, r, 1.0), np.eye(v.shape[-1])[0])
    return np.where(r > 0, r * sigma(dirs), 0.0)


def a_v_matrix(sigma: SphereMap, v) -> np.ndarray:
    """Linear map sending v to sigma(v) and tangent w to d sigma_v(w)."""
    v = unit(v)
    n = v.size
    basis = np.linalg.qr(np.column_stack([v, np.eye(n)]))[0][:, :n]
    basis[:, 0] = v
    images = np.column_stack([sigma(v)] + [sigma.differential(v, basis[:, j]) for j in range(1, n)])
    return images @ basis.T


def extension_nonsingularity_margin(sigma: SphereMap, sample_count: int = 256,
                                    hull_count: int = 1000, seed: int = 0,
                                    steps: int = 128) -> float:
    """min <A_v u, sigma(u)> over sampled directions v and unit u on a great
    circle through v; positive values certify every A_v is non-singular."""
    margin = np.inf
    mats = []
    t = np.linspace(0.0, math.pi, steps + 1)
    for i in range(sample_count):
        seg = sample_geodesic(sigma.dim, seed, i)
        A = a_v_matrix(sigma, seg.base)
        mats.append(A)
        us = seg.points(t)
        margin = min(margin, float(np.min(np.sum((us @ A.T) * sigma(us), 1))))
    hull = hull_matrix_sample(np.array(mats), seed, len(mats) + hull_count)
    logger.info("min singular value over hull of sampled A_v: %.6g",
                np.linalg.svd(hull, compute_uv=False)[:, -1].min())
    return margin


def comparison_inner_product_min(sigma: SphereMap, sample_count: int = 256, seed: int = 0,
                                 steps: int = 128) -> float:
    """min <c_bar(t), c(t)> along the same great circles."""
    h = math.pi / steps
    mode = "analytic" if sigma.analytic else "fd"
    out = np.inf
    for i in range(sample_count):
        s = curve_samples(sigma, sample_geodesic(sigma.dim, seed, i), h, mode)
        cb, _ = s.comparison
        out = min(out, float(np.min(np.sum(cb * s.c, 1))))
    return out


class ExtensionBilipReport(NamedTuple):
    holds: bool
    lip_b: float
    min_ratio: float
    max_ratio: float
    violations: int


def extension_bilip_check(sigma: SphereMap, pairs: int = 100_000, seed: int = 0,
                          tol: float = 1e-6, lip_b: Optional[float] = None) -> ExtensionBilipReport:
    """Check Lip^b^-1 |u-v| <= |F u - F v| <= Lip^b |u-v| on pairs in the
    ball of radius 2, including radial, tangential and origin pairs."""
    rng = np.random.default_rng([seed, 1])
    n = sigma.dim
    lip = bilip_estimate(sigma, pairs, seed) if lip_b is None else lip_b

    def ball(m):
        g = unit(rng.standard_normal((m, n)))
        return 2 * rng.uniform(size=(m, 1)) ** (1 / n) * g

    q = pairs // 4
    u1, v1 = ball(pairs - 3 * q), ball(pairs - 3 * q)
    d = unit(rng.standard_normal((q, n)))
    u2, v2 = d * rng.uniform(0, 2, (q, 1)), d * rng.uniform(0, 2, (q, 1))  # radial
    r = rng.uniform(0.1, 2, (q, 1))
    a = unit(rng.standard_normal((q, n)))
    b = unit(rng.standard_normal((q, n)))
    u3, v3 = r * a, r * b  # same radius
    u4, v4 = np.zeros((q, n)), ball(q)  # origin
    u = np.concatenate([u1, u2, u3, u4])
    v = np.concatenate([v1, v2, v3, v4])
    dist = np.linalg.norm(u - v, axis=1)
    keep = dist > 1e-12
    ratio = np.linalg.norm(radial_extension_eval(sigma, u[keep]) - radial_extension_eval(sigma, v[keep]),
                           axis=1) / dist[keep]
    bad = int(np.sum((ratio > lip + tol) | (ratio < 1 / lip - tol)))
    if bad and lip_b is None:
        logger.warning("bi-Lipschitz estimate exceeded; re-estimating with 10x pairs")
        lip = max(lip, bilip_estimate(sigma, 10 * pairs, seed + 1))
        bad = int(np.sum((ratio > lip + tol) | (ratio < 1 / lip - tol)))
    return ExtensionBilipReport(bad == 0, lip, float(ratio.min()), float(ratio.max()), bad)
